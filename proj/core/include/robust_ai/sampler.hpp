#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "robust_ai/paths.hpp"

namespace robust_ai {

/// Bernoulli labeling decisions xi_i ~ Bern(pi_i).
struct LabelDraw {
    std::vector<std::uint8_t> xi;
    std::uint64_t seed = 0;
    std::size_t realized_count = 0;
};

/// Unit i is labeled iff U(seed, i) < pi_i, with U the counter-based uniform
/// of the label stream. Unit i's decision depends only on (seed, i, pi_i).
LabelDraw draw_labels(const SamplingRule& rule, std::uint64_t seed);

struct BudgetAudit {
    double realized_rate = 0.0;
    double target_rate = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
    double hoeffding_min_units = 0.0;  // log(1/delta) / (2 epsilon^2)
    bool hoeffding_applies = false;    // n > hoeffding_min_units
    bool exceeded = false;             // realized rate > target + epsilon
};

/// Compares the realized labeling rate with n_b/n + epsilon.
BudgetAudit budget_audit(const LabelDraw& draw, const Budget& budget, double epsilon, double delta);

} // namespace robust_ai
