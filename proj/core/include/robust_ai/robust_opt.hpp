#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "robust_ai/error_model.hpp"
#include "robust_ai/paths.hpp"

namespace robust_ai {

/// Admissible misspecifications eps of the squared-error estimates.
///
/// Relative kinds perturb multiplicatively: eps_i = ehat2_i * eta_i with the
/// norm bound on eta. StructuredL2 applies an l2 ball per region label with
/// its own radius; units in regions without a radius are not perturbed.
struct ConstraintSet {
    enum class Kind { None, L2, L1, RelativeL1, RelativeL2, StructuredL2 };

    Kind kind = Kind::None;
    double c = 0.0;
    std::vector<int> region_labels;
    std::map<int, double> c_per_region;

    static ConstraintSet none() { return {}; }
    static ConstraintSet l2(double c) { return {Kind::L2, c, {}, {}}; }
    static ConstraintSet l1(double c) { return {Kind::L1, c, {}, {}}; }
    static ConstraintSet relative_l1(double c) { return {Kind::RelativeL1, c, {}, {}}; }
    static ConstraintSet relative_l2(double c) { return {Kind::RelativeL2, c, {}, {}}; }
    static ConstraintSet structured(std::vector<int> labels, std::map<int, double> radii) {
        return {Kind::StructuredL2, 0.0, std::move(labels), std::move(radii)};
    }

    /// Same kind with radius `c` (scalar kinds only).
    ConstraintSet with_radius(double radius) const;
    /// Restricts region labels to the given units (StructuredL2 only).
    ConstraintSet restricted(std::span<const std::size_t> units) const;

    void validate(std::size_t n) const;
};

std::string_view to_string(ConstraintSet::Kind kind) noexcept;
/// none | l2 | l1 | rel-l1 | rel-l2 | structured
ConstraintSet::Kind parse_constraint_kind(std::string_view text);

/// Grid {0, step, 2 step, ..., 1}; 1 is appended when step does not divide it.
struct RhoGrid {
    double step = 0.01;

    static RhoGrid make(double step);
    std::vector<double> points() const;
};

/// (1/n) sum_i ehat2_i / pi_i
double objective(std::span<const double> ehat2, std::span<const double> probs);
double objective(const ErrorEstimate& ehat2, const SamplingRule& rule);

struct InnerMax {
    double value = 0.0;
    std::vector<double> eps;
};

/// Closed-form maximizer of (1/n) sum_i (ehat2_i + eps_i) / pi_i over the set.
InnerMax inner_max(std::span<const double> ehat2, std::span<const double> probs, const ConstraintSet& cset);
InnerMax inner_max(const ErrorEstimate& ehat2, const SamplingRule& rule, const ConstraintSet& cset);

struct RhoTracePoint {
    double rho = 0.0;
    double objective = 0.0;
    double robust_value = 0.0;
};

struct RhoSolution {
    double rho = 1.0;
    double value = 0.0;
    std::vector<RhoTracePoint> trace;
};

/// Path rules evaluated once per grid point, reusable across error estimates
/// and radii.
struct PathTable {
    PathKind path = PathKind::Geometric;
    std::vector<double> rhos;
    std::vector<SamplingRule> rules;

    static PathTable build(PathKind path, const SamplingRule& pi, const RhoGrid& grid);
};

/// Grid search for the minimax rho; ties resolve toward the larger rho.
RhoSolution solve_rho(PathKind path, const SamplingRule& pi, const ErrorEstimate& ehat2, const ConstraintSet& cset,
                      const RhoGrid& grid);
RhoSolution solve_rho(const PathTable& table, const ErrorEstimate& ehat2, const ConstraintSet& cset);

/// CSV with columns rho,objective,robust_value.
void write_trace_csv(std::ostream& out, std::span<const RhoTracePoint> trace);

/// {0} and seven log-spaced multiples 10^-2 .. 10^1 of ||ehat2||_2.
std::vector<double> default_c_grid(std::span<const double> ehat2);

/// Refits the error estimate on a subset of burn-in positions and returns it
/// for every unit of the rule's population.
using ErrorRefit = std::function<ErrorEstimate(std::span<const std::size_t> train_positions)>;

struct CrossValidation {
    double c_star = 0.0;
    std::vector<double> c_grid;
    std::vector<double> scores;  // K-fold average per candidate
};

/// K-fold choice of the l2 radius. Burn-in position k belongs to fold k mod K.
/// For each candidate c and fold, the error estimate is refit on the training
/// folds, rho is solved on the full population and the fold is scored by the
/// mean of r_i^2 / pi^(rho)_i over its units. Ties go to the larger c.
///
/// `burn_in_units[k]` indexes the rule's population; `residuals_sq[k]` is the
/// observed squared residual of that unit on the error scale.
CrossValidation cross_validate_c(std::span<const std::size_t> burn_in_units, std::span<const double> residuals_sq,
                                 const ErrorRefit& refit, const SamplingRule& pi, PathKind path,
                                 std::span<const double> c_grid, std::size_t folds, const RhoGrid& grid,
                                 ConstraintSet::Kind kind = ConstraintSet::Kind::L2);

/// Region ids produced by the region learner.
inline constexpr int kRegionOther = 0;
inline constexpr int kRegionOverconfident = 1;

/// Shallow axis-aligned classification tree separating units whose observed
/// squared residual exceeds the estimate (overconfident) from the rest.
class RegionTree {
public:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        int label = kRegionOther;
    };

    static RegionTree fit(const Eigen::MatrixXd& features, std::span<const double> residuals_sq,
                          std::span<const double> ehat2, int depth, std::size_t min_leaf = 0);

    int predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
    std::vector<int> predict(const Eigen::MatrixXd& features) const;

    const std::vector<Node>& nodes() const noexcept { return nodes_; }

private:
    std::vector<Node> nodes_;
};

std::vector<int> learn_regions(const Eigen::MatrixXd& burn_in_features, std::span<const double> residuals_sq,
                               std::span<const double> ehat2_burn_in, int depth, const Eigen::MatrixXd& query);

} // namespace robust_ai
