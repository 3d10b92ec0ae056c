#include "robust_ai/robust_opt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>

#include "robust_ai/error.hpp"

namespace robust_ai {

ConstraintSet ConstraintSet::with_radius(double radius) const {
    ConstraintSet out = *this;
    out.c = radius;
    return out;
}

ConstraintSet ConstraintSet::restricted(std::span<const std::size_t> units) const {
    if (kind != Kind::StructuredL2) return *this;
    ConstraintSet out = *this;
    out.region_labels.clear();
    out.region_labels.reserve(units.size());
    for (auto u : units) out.region_labels.push_back(region_labels.at(u));
    return out;
}

void ConstraintSet::validate(std::size_t n) const {
    if (!(c >= 0.0) || !std::isfinite(c)) throw Error(ErrorCode::InvalidArgument, "constraint radius must be >= 0");
    if (kind == Kind::StructuredL2) {
        if (region_labels.size() != n)
            throw Error(ErrorCode::DimensionMismatch, "structured constraint needs a region label per unit");
        for (const auto& [region, radius] : c_per_region)
            if (!(radius >= 0.0) || !std::isfinite(radius))
                throw Error(ErrorCode::InvalidArgument, "region " + std::to_string(region) + " has a negative radius");
    }
}

std::string_view to_string(ConstraintSet::Kind kind) noexcept {
    switch (kind) {
    case ConstraintSet::Kind::None: return "none";
    case ConstraintSet::Kind::L2: return "l2";
    case ConstraintSet::Kind::L1: return "l1";
    case ConstraintSet::Kind::RelativeL1: return "rel-l1";
    case ConstraintSet::Kind::RelativeL2: return "rel-l2";
    case ConstraintSet::Kind::StructuredL2: return "structured";
    }
    return "none";
}

ConstraintSet::Kind parse_constraint_kind(std::string_view text) {
    if (text == "none") return ConstraintSet::Kind::None;
    if (text == "l2") return ConstraintSet::Kind::L2;
    if (text == "l1") return ConstraintSet::Kind::L1;
    if (text == "rel-l1" || text == "relative_l1") return ConstraintSet::Kind::RelativeL1;
    if (text == "rel-l2" || text == "relative_l2") return ConstraintSet::Kind::RelativeL2;
    if (text == "structured") return ConstraintSet::Kind::StructuredL2;
    throw Error(ErrorCode::ConfigError, "unknown constraint kind '" + std::string(text) + "'");
}

RhoGrid RhoGrid::make(double step) {
    if (!(step > 0.0 && step <= 1.0)) throw Error(ErrorCode::InvalidArgument, "rho step must lie in (0, 1]");
    return RhoGrid{step};
}

std::vector<double> RhoGrid::points() const {
    std::vector<double> out;
    const auto count = static_cast<std::size_t>(std::floor(1.0 / step + 1e-9));
    for (std::size_t k = 0; k <= count; ++k) out.push_back(std::min(1.0, static_cast<double>(k) * step));
    if (std::abs(out.back() - 1.0) > 1e-9) out.push_back(1.0);
    out.back() = 1.0;
    return out;
}

double objective(std::span<const double> ehat2, std::span<const double> probs) {
    if (ehat2.size() != probs.size()) throw Error(ErrorCode::DimensionMismatch, "error and rule lengths differ");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) total += ehat2[i] / probs[i];
    return total / static_cast<double>(probs.size());
}

double objective(const ErrorEstimate& ehat2, const SamplingRule& rule) { return objective(ehat2.values, rule.probs); }

namespace {

// Maximizes sum_i g_i * z_i over ||z||_2 <= c; returns the maximizer.
std::vector<double> l2_direction(const std::vector<double>& g, double c) {
    double norm = 0.0;
    for (double v : g) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> z(g.size(), 0.0);
    if (norm == 0.0 || c == 0.0) return z;
    for (std::size_t i = 0; i < g.size(); ++i) z[i] = c * g[i] / norm;
    return z;
}

// Maximizes sum_i g_i * z_i over ||z||_1 <= c with g >= 0: all mass on the
// largest coordinate, lowest index on ties.
std::vector<double> l1_direction(const std::vector<double>& g, double c) {
    std::vector<double> z(g.size(), 0.0);
    if (g.empty() || c == 0.0) return z;
    const auto best = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
    z[best] = c;
    return z;
}

} // namespace

InnerMax inner_max(std::span<const double> ehat2, std::span<const double> probs, const ConstraintSet& cset) {
    const std::size_t n = probs.size();
    if (ehat2.size() != n) throw Error(ErrorCode::DimensionMismatch, "error and rule lengths differ");
    cset.validate(n);

    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / (static_cast<double>(n) * probs[i]);

    InnerMax out;
    out.eps.assign(n, 0.0);
    using Kind = ConstraintSet::Kind;
    switch (cset.kind) {
    case Kind::None:
        break;
    case Kind::L2:
        out.eps = l2_direction(w, cset.c);
        break;
    case Kind::L1:
        out.eps = l1_direction(w, cset.c);
        break;
    case Kind::RelativeL2:
    case Kind::RelativeL1: {
        std::vector<double> g(n);
        for (std::size_t i = 0; i < n; ++i) g[i] = ehat2[i] * w[i];
        const auto eta = cset.kind == Kind::RelativeL2 ? l2_direction(g, cset.c) : l1_direction(g, cset.c);
        for (std::size_t i = 0; i < n; ++i) out.eps[i] = ehat2[i] * eta[i];
        break;
    }
    case Kind::StructuredL2: {
        std::map<int, double> norms;
        for (std::size_t i = 0; i < n; ++i) norms[cset.region_labels[i]] += w[i] * w[i];
        for (std::size_t i = 0; i < n; ++i) {
            const int region = cset.region_labels[i];
            const auto it = cset.c_per_region.find(region);
            const double radius = it == cset.c_per_region.end() ? 0.0 : it->second;
            const double norm = std::sqrt(norms[region]);
            if (radius > 0.0 && norm > 0.0) out.eps[i] = radius * w[i] / norm;
        }
        break;
    }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (ehat2[i] + out.eps[i]) * w[i];
    out.value = total;
    return out;
}

InnerMax inner_max(const ErrorEstimate& ehat2, const SamplingRule& rule, const ConstraintSet& cset) {
    return inner_max(ehat2.values, rule.probs, cset);
}

PathTable PathTable::build(PathKind path, const SamplingRule& pi, const RhoGrid& grid) {
    PathTable table;
    table.path = path;
    table.rhos = grid.points();
    table.rules.reserve(table.rhos.size());
    for (double rho : table.rhos) table.rules.push_back(path_eval(path, pi, rho));
    return table;
}

RhoSolution solve_rho(const PathTable& table, const ErrorEstimate& ehat2, const ConstraintSet& cset) {
    if (table.rules.empty()) throw Error(ErrorCode::InvalidArgument, "empty path table");
    if (ehat2.values.size() != table.rules.front().size())
        throw Error(ErrorCode::DimensionMismatch, "error and rule lengths differ");
    cset.validate(ehat2.values.size());
    RhoSolution best;
    for (std::size_t k = 0; k < table.rules.size(); ++k) {
        const SamplingRule& rule = table.rules[k];
        const double plain = objective(ehat2, rule);
        const double robust = inner_max(ehat2.values, rule.probs, cset).value;
        best.trace.push_back({table.rhos[k], plain, robust});
        // Ascending rho with <= keeps the largest rho among exact ties.
        if (k == 0 || robust <= best.value) {
            best.value = robust;
            best.rho = table.rhos[k];
        }
    }
    return best;
}

RhoSolution solve_rho(PathKind path, const SamplingRule& pi, const ErrorEstimate& ehat2, const ConstraintSet& cset,
                      const RhoGrid& grid) {
    if (ehat2.values.size() != pi.size()) throw Error(ErrorCode::DimensionMismatch, "error and rule lengths differ");
    return solve_rho(PathTable::build(path, pi, grid), ehat2, cset);
}

void write_trace_csv(std::ostream& out, std::span<const RhoTracePoint> trace) {
    out << "rho,objective,robust_value\n";
    char buf[96];
    for (const auto& t : trace) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", t.rho, t.objective, t.robust_value);
        out << buf;
    }
}

std::vector<double> default_c_grid(std::span<const double> ehat2) {
    double norm = 0.0;
    for (double v : ehat2) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> grid{0.0};
    for (int k = 0; k < 7; ++k) grid.push_back(std::pow(10.0, -2.0 + 0.5 * k) * norm);
    return grid;
}

CrossValidation cross_validate_c(std::span<const std::size_t> burn_in_units, std::span<const double> residuals_sq,
                                 const ErrorRefit& refit, const SamplingRule& pi, PathKind path,
                                 std::span<const double> c_grid, std::size_t folds, const RhoGrid& grid,
                                 ConstraintSet::Kind kind) {
    if (folds < 2) throw Error(ErrorCode::InvalidArgument, "cross-validation needs at least two folds");
    if (burn_in_units.size() < folds)
        throw Error(ErrorCode::BurnInTooSmall, "burn-in of " + std::to_string(burn_in_units.size()) + " is smaller than " +
                                                   std::to_string(folds) + " folds");
    if (residuals_sq.size() != burn_in_units.size())
        throw Error(ErrorCode::DimensionMismatch, "one residual per burn-in unit expected");
    if (c_grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty c grid");
    if (kind == ConstraintSet::Kind::StructuredL2)
        throw Error(ErrorCode::InvalidArgument, "cross-validation covers scalar-radius constraint sets only");

    const PathTable table = PathTable::build(path, pi, grid);
    CrossValidation cv;
    cv.c_grid.assign(c_grid.begin(), c_grid.end());
    cv.scores.assign(c_grid.size(), 0.0);

    for (std::size_t fold = 0; fold < folds; ++fold) {
        std::vector<std::size_t> train;
        std::vector<std::size_t> validation;
        for (std::size_t k = 0; k < burn_in_units.size(); ++k) (k % folds == fold ? validation : train).push_back(k);
        const ErrorEstimate ehat2 = refit(train);
        if (ehat2.values.size() != pi.size())
            throw Error(ErrorCode::DimensionMismatch, "refit must cover the rule's population");
        // For absolute balls the worst case adds c * phi(rho), with phi free of
        // the error estimate, so one pass per rho serves every candidate.
        const bool separable = kind == ConstraintSet::Kind::None || kind == ConstraintSet::Kind::L2 ||
                               kind == ConstraintSet::Kind::L1;
        std::vector<double> plain(table.rules.size()), phi(table.rules.size(), 0.0);
        if (separable) {
            ConstraintSet unit;
            unit.kind = kind;
            unit.c = 1.0;
            for (std::size_t k = 0; k < table.rules.size(); ++k) {
                plain[k] = objective(ehat2, table.rules[k]);
                if (kind != ConstraintSet::Kind::None)
                    phi[k] = inner_max(ehat2.values, table.rules[k].probs, unit).value - plain[k];
            }
        }
        for (std::size_t ci = 0; ci < c_grid.size(); ++ci) {
            std::size_t chosen = 0;
            if (separable) {
                double best_value = 0.0;
                for (std::size_t k = 0; k < table.rules.size(); ++k) {
                    const double value = plain[k] + c_grid[ci] * phi[k];
                    if (k == 0 || value <= best_value) {
                        best_value = value;
                        chosen = k;
                    }
                }
            } else {
                ConstraintSet cset;
                cset.kind = kind;
                cset.c = c_grid[ci];
                const RhoSolution sol = solve_rho(table, ehat2, cset);
                chosen = static_cast<std::size_t>(std::find(table.rhos.begin(), table.rhos.end(), sol.rho) -
                                                  table.rhos.begin());
            }
            const SamplingRule& rule = table.rules[chosen];
            double score = 0.0;
            for (auto k : validation) score += residuals_sq[k] / rule.probs[burn_in_units[k]];
            cv.scores[ci] += score / static_cast<double>(validation.size()) / static_cast<double>(folds);
        }
    }
    std::size_t best = 0;
    for (std::size_t ci = 1; ci < c_grid.size(); ++ci) {
        // Scores within rounding of each other count as a tie.
        const double tol = 1e-12 * std::max(std::abs(cv.scores[ci]), std::abs(cv.scores[best]));
        const bool better = cv.scores[ci] < cv.scores[best] - tol ||
                            (std::abs(cv.scores[ci] - cv.scores[best]) <= tol && c_grid[ci] >= c_grid[best]);
        if (better) best = ci;
    }
    cv.c_star = c_grid[best];
    return cv;
}

namespace {

double gini(double positives, double total) {
    if (total <= 0.0) return 0.0;
    const double p = positives / total;
    return 2.0 * p * (1.0 - p);
}

} // namespace

RegionTree RegionTree::fit(const Eigen::MatrixXd& features, std::span<const double> residuals_sq,
                           std::span<const double> ehat2, int depth, std::size_t min_leaf) {
    const auto m = static_cast<std::size_t>(features.rows());
    if (m == 0) throw Error(ErrorCode::EmptyBurnIn, "region learner needs burn-in rows");
    if (residuals_sq.size() != m || ehat2.size() != m)
        throw Error(ErrorCode::DimensionMismatch, "residuals and estimates must match burn-in rows");
    if (depth < 0) throw Error(ErrorCode::InvalidArgument, "depth must be >= 0");
    if (min_leaf == 0) min_leaf = std::max<std::size_t>(1, m / 50);

    std::vector<int> target(m);
    for (std::size_t i = 0; i < m; ++i) target[i] = residuals_sq[i] > ehat2[i] ? kRegionOverconfident : kRegionOther;

    RegionTree tree;
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), std::size_t{0});

    // Returns the index of the node built for `rows`.
    std::function<int(std::vector<std::size_t>, int)> build = [&](std::vector<std::size_t> rows, int remaining) -> int {
        const int id = static_cast<int>(tree.nodes_.size());
        tree.nodes_.push_back({});
        double positives = 0.0;
        for (auto r : rows) positives += target[r];
        const double total = static_cast<double>(rows.size());
        // Majority label; an even split stays in the "other" region.
        tree.nodes_[static_cast<std::size_t>(id)].label = positives * 2.0 > total ? kRegionOverconfident : kRegionOther;
        if (remaining == 0 || positives == 0.0 || positives == total || rows.size() < 2 * min_leaf) return id;

        const double parent = gini(positives, total);
        double best_gain = 1e-12;
        int best_feature = -1;
        double best_threshold = 0.0;
        std::vector<std::size_t> order = rows;
        for (Eigen::Index f = 0; f < features.cols(); ++f) {
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                const double va = features(static_cast<Eigen::Index>(a), f);
                const double vb = features(static_cast<Eigen::Index>(b), f);
                return va < vb || (va == vb && a < b);
            });
            double left_pos = 0.0;
            for (std::size_t k = 0; k + 1 < order.size(); ++k) {
                left_pos += target[order[k]];
                const double v = features(static_cast<Eigen::Index>(order[k]), f);
                const double next = features(static_cast<Eigen::Index>(order[k + 1]), f);
                const std::size_t left_n = k + 1;
                if (v == next || left_n < min_leaf || order.size() - left_n < min_leaf) continue;
                const double ln = static_cast<double>(left_n);
                const double rn = total - ln;
                const double child = (ln * gini(left_pos, ln) + rn * gini(positives - left_pos, rn)) / total;
                const double gain = parent - child;
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (v + next);
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto r : rows)
            (features(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? left : right).push_back(r);
        const int l = build(std::move(left), remaining - 1);
        const int rt = build(std::move(right), remaining - 1);
        auto& node = tree.nodes_[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = rt;
        return id;
    };
    build(std::move(all), depth);
    return tree;
}

int RegionTree::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    std::size_t id = 0;
    while (nodes_[id].feature >= 0) {
        const auto& node = nodes_[id];
        id = static_cast<std::size_t>(x[node.feature] <= node.threshold ? node.left : node.right);
    }
    return nodes_[id].label;
}

std::vector<int> RegionTree::predict(const Eigen::MatrixXd& features) const {
    std::vector<int> out(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i) out[static_cast<std::size_t>(i)] = predict_row(features.row(i));
    return out;
}

std::vector<int> learn_regions(const Eigen::MatrixXd& burn_in_features, std::span<const double> residuals_sq,
                               std::span<const double> ehat2_burn_in, int depth, const Eigen::MatrixXd& query) {
    return RegionTree::fit(burn_in_features, residuals_sq, ehat2_burn_in, depth).predict(query);
}

} // namespace robust_ai
