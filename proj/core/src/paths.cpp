#include "robust_ai/paths.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "robust_ai/error.hpp"

namespace robust_ai {

double SamplingRule::mean() const noexcept {
    if (probs.empty()) return 0.0;
    return std::accumulate(probs.begin(), probs.end(), 0.0) / static_cast<double>(probs.size());
}

void SamplingRule::validate(double budget_tol) const {
    if (probs.size() != budget.units)
        throw Error(ErrorCode::DimensionMismatch, "rule has " + std::to_string(probs.size()) + " units, budget " +
                                                      std::to_string(budget.units));
    if (!(floor > 0.0 && floor <= 1.0)) throw Error(ErrorCode::InvalidArgument, "floor must lie in (0, 1]");
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = probs[i];
        if (!(p >= floor * (1.0 - 1e-12) && p <= 1.0 + 1e-12))
            throw Error(ErrorCode::InvalidArgument, "probability " + std::to_string(p) + " outside [floor, 1] at unit " +
                                                        std::to_string(i));
    }
    if (std::abs(mean() - budget.rate()) > budget_tol)
        throw Error(ErrorCode::InvalidArgument, "rule mean misses the budget rate");
}

std::string_view to_string(PathKind kind) noexcept {
    switch (kind) {
    case PathKind::Linear: return "linear";
    case PathKind::Geometric: return "geometric";
    case PathKind::Hellinger: return "hellinger";
    }
    return "geometric";
}

PathKind parse_path_kind(std::string_view text) {
    if (text == "linear") return PathKind::Linear;
    if (text == "geometric") return PathKind::Geometric;
    if (text == "hellinger") return PathKind::Hellinger;
    throw Error(ErrorCode::ConfigError, "unknown path kind '" + std::string(text) + "'");
}

SamplingRule uniform_rule(const Budget& budget, double floor) {
    return SamplingRule{std::vector<double>(budget.units, budget.rate()), floor, budget};
}

SamplingRule normalize_to_budget(std::span<const double> raw_weights, const Budget& budget, double floor) {
    const std::size_t n = budget.units;
    if (raw_weights.size() != n) throw Error(ErrorCode::DimensionMismatch, "weights do not match budget units");
    if (!(floor > 0.0 && floor <= 1.0)) throw Error(ErrorCode::InvalidArgument, "floor must lie in (0, 1]");
    const double target = static_cast<double>(budget.labels);
    if (floor * static_cast<double>(n) > target * (1.0 + 1e-12))
        throw Error(ErrorCode::InfeasibleBudget, "floor * n exceeds the label budget");

    std::size_t positive = 0;
    for (double w : raw_weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "weights must be finite and >= 0");
        if (w > 0.0) ++positive;
    }
    if (positive == 0) throw Error(ErrorCode::AllZeroWeights, "all weights are zero");

    SamplingRule rule{std::vector<double>(n, floor), floor, budget};
    if (budget.labels == n) {
        std::fill(rule.probs.begin(), rule.probs.end(), 1.0);
        return rule;
    }

    const std::size_t zeros = n - positive;
    const double zero_mass = static_cast<double>(zeros) * floor;
    if (static_cast<double>(positive) + zero_mass <= target) {
        // Every positive unit is capped; the zero-weight units absorb the rest evenly.
        const double share = zeros > 0 ? (target - static_cast<double>(positive)) / static_cast<double>(zeros) : 1.0;
        for (std::size_t i = 0; i < n; ++i) rule.probs[i] = raw_weights[i] > 0.0 ? 1.0 : std::clamp(share, floor, 1.0);
        return rule;
    }

    // G(s) = sum_i clip(s * w_i, floor, 1) is continuous and nondecreasing with
    // breakpoints floor/w_i (unit leaves the floor) and 1/w_i (unit hits the cap).
    struct Event {
        double s;
        double dslope;
        double dconst;
    };
    std::vector<Event> events;
    events.reserve(2 * positive);
    for (double w : raw_weights) {
        if (w <= 0.0) continue;
        events.push_back({floor / w, w, -floor});
        events.push_back({1.0 / w, -w, 1.0});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.s < b.s; });

    double constant = static_cast<double>(n) * floor;
    double slope = 0.0;
    double scale = 0.0;
    bool found = constant >= target;
    for (std::size_t k = 0; k < events.size() && !found; ++k) {
        slope += events[k].dslope;
        constant += events[k].dconst;
        // Apply every event at the same breakpoint before testing the segment.
        while (k + 1 < events.size() && events[k + 1].s == events[k].s) {
            ++k;
            slope += events[k].dslope;
            constant += events[k].dconst;
        }
        if (slope <= 0.0) continue;
        const double s = (target - constant) / slope;
        const double next = k + 1 < events.size() ? events[k + 1].s : s;
        if (s <= next) {
            scale = std::max(s, events[k].s);
            found = true;
        }
    }
    if (found) {
        // The running sums cancel; re-solve on the located segment from fresh sums.
        double fixed = 0.0, free_weight = 0.0;
        for (double w : raw_weights) {
            const double p = scale * w;
            if (p <= floor) fixed += floor;
            else if (p >= 1.0) fixed += 1.0;
            else free_weight += w;
        }
        if (free_weight > 0.0) {
            const double refined = (target - fixed) / free_weight;
            if (std::isfinite(refined) && refined > 0.0) scale = refined;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (raw_weights[i] > 0.0) rule.probs[i] = std::clamp(scale * raw_weights[i], floor, 1.0);
    }
    return rule;
}

namespace {

bool within_bounds(const std::vector<double>& p, double floor) {
    return std::all_of(p.begin(), p.end(), [floor](double v) { return v >= floor && v <= 1.0; });
}

SamplingRule linear_point(const SamplingRule& pi, double rho) {
    SamplingRule out = pi;
    const double rate = pi.budget.rate();
    for (auto& p : out.probs) p = (1.0 - rho) * p + rho * rate;
    return out;
}

SamplingRule geometric_point(const SamplingRule& pi, double rho) {
    std::vector<double> q(pi.size());
    const double exponent = 1.0 - rho;
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = std::exp(exponent * std::log(pi.probs[i]));
    const double mean_q = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
    SamplingRule out{q, pi.floor, pi.budget};
    const double scale = pi.budget.rate() / mean_q;
    for (auto& p : out.probs) p *= scale;
    if (!within_bounds(out.probs, pi.floor)) return normalize_to_budget(q, pi.budget, pi.floor);
    return out;
}

SamplingRule hellinger_point(const SamplingRule& pi, double rho) {
    const double n_b = static_cast<double>(pi.budget.labels);
    const double v = std::sqrt(pi.budget.rate());
    std::vector<double> u(pi.size());
    double inner = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = std::sqrt(pi.probs[i]);
        inner += u[i] * v;
    }
    const double beta = std::acos(std::clamp(inner / n_b, -1.0, 1.0));
    if (beta < kAngleTol) return linear_point(pi, rho);
    const double a = std::sin((1.0 - rho) * beta) / std::sin(beta);
    const double b = std::sin(rho * beta) / std::sin(beta);
    SamplingRule out{std::vector<double>(u.size()), pi.floor, pi.budget};
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double s = a * u[i] + b * v;
        out.probs[i] = s * s;
    }
    if (!within_bounds(out.probs, pi.floor)) {
        std::vector<double> raw = out.probs;
        return normalize_to_budget(raw, pi.budget, pi.floor);
    }
    return out;
}

} // namespace

SamplingRule path_eval(PathKind kind, const SamplingRule& pi, double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::RhoOutOfRange, "rho must lie in [0, 1]");
    if (pi.size() != pi.budget.units) throw Error(ErrorCode::DimensionMismatch, "rule size does not match budget");
    if (rho == 0.0) return pi;
    if (rho == 1.0) return uniform_rule(pi.budget, pi.floor);
    switch (kind) {
    case PathKind::Linear: return linear_point(pi, rho);
    case PathKind::Geometric: return geometric_point(pi, rho);
    case PathKind::Hellinger: return hellinger_point(pi, rho);
    }
    return pi;
}

} // namespace robust_ai
