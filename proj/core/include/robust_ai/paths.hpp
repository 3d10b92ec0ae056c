#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "robust_ai/data_model.hpp"

namespace robust_ai {

/// Smallest admissible labeling probability; caps inverse weights at 1000.
inline constexpr double kDefaultFloor = 1e-3;
/// Tolerance on |mean(probs) - n_b/n|.
inline constexpr double kBudgetTol = 1e-9;
/// Below this Hellinger angle the path degenerates to the linear one.
inline constexpr double kAngleTol = 1e-10;

/// Per-unit labeling probabilities pi(X_i) under a budget.
struct SamplingRule {
    std::vector<double> probs;
    double floor = kDefaultFloor;
    Budget budget;

    std::size_t size() const noexcept { return probs.size(); }
    double mean() const noexcept;
    /// Throws InvalidArgument if a probability leaves [floor, 1] or the mean misses the budget.
    void validate(double budget_tol = kBudgetTol) const;
};

enum class PathKind { Linear, Geometric, Hellinger };

std::string_view to_string(PathKind kind) noexcept;
PathKind parse_path_kind(std::string_view text);

/// pi_i = n_b / n for every unit.
SamplingRule uniform_rule(const Budget& budget, double floor = kDefaultFloor);

/// Scales nonnegative weights into probabilities in [floor, 1] with mean
/// exactly n_b/n. Units strictly between the bounds stay proportional to
/// their weights (water-filling). Zero weights sit at the floor unless the
/// budget cannot otherwise be met.
SamplingRule normalize_to_budget(std::span<const double> raw_weights, const Budget& budget,
                                 double floor = kDefaultFloor);

/// Budget-preserving path between `pi` (rho = 0) and the uniform rule (rho = 1).
SamplingRule path_eval(PathKind kind, const SamplingRule& pi, double rho);

} // namespace robust_ai
