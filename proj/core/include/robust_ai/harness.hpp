#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robust_ai/data_model.hpp"
#include "robust_ai/error_model.hpp"
#include "robust_ai/estimation.hpp"
#include "robust_ai/paths.hpp"
#include "robust_ai/robust_opt.hpp"
#include "robust_ai/sampler.hpp"

namespace robust_ai {

enum class InitialRule { Uniform, PropUncertainty, PropEhat, PropOneMinusConf };
enum class MethodKind { Uniform, Active, Robust };
enum class RegionSource { Pilot, BurnIn };
enum class ResampleMode { Bootstrap, Fixed };

std::string_view to_string(InitialRule rule) noexcept;
InitialRule parse_initial_rule(std::string_view text);
std::string_view to_string(MethodKind kind) noexcept;
MethodKind parse_method_kind(std::string_view text);
ErrorSource parse_error_source(std::string_view text);

/// Where the units come from: a CSV file or a named synthetic generator.
struct DatasetSource {
    std::string csv;
    std::string generator;  // toy_regions | gaussian_mean | linear_regression
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

struct ErrorModelConfig {
    ErrorSource source = ErrorSource::Knn;
    std::size_t k = 0;  // 0 selects default_knn_k
    std::size_t bins = 10;
};

struct MethodConfig {
    std::string name;
    MethodKind kind = MethodKind::Robust;
    ConstraintSet::Kind constraint = ConstraintSet::Kind::L2;
    double c = 0.0;
    std::map<int, double> c_per_region;  // structured only
    bool cross_validate = false;
    std::vector<double> c_grid;  // empty selects default_c_grid
    std::size_t folds = 5;
    RegionSource regions = RegionSource::Pilot;
    int tree_depth = 3;
};

struct ExperimentConfig {
    DatasetSource dataset;
    EstimandSpec estimand;
    std::vector<std::size_t> budgets;
    std::size_t burn_in = 0;
    InitialRule initial_rule = InitialRule::PropEhat;
    PathKind path = PathKind::Geometric;
    ErrorModelConfig error_model;
    std::vector<MethodConfig> methods;
    std::size_t trials = 500;
    double rho_step = 0.01;
    std::uint64_t seed = 0;
    double alpha = kDefaultAlpha;
    ResampleMode resample = ResampleMode::Bootstrap;
    double floor = kDefaultFloor;
    std::size_t pilot_size = 2000;  // units for pilot-learned regions

    /// Parses the JSON form; unknown keys are rejected. Throws ConfigError.
    static ExperimentConfig from_json(std::string_view text);
    static ExperimentConfig load(const std::filesystem::path& path);

    /// Throws ConfigError when the config cannot describe a valid experiment
    /// on `n` units.
    void validate(std::size_t n) const;
};

// ---------------------------------------------------------------------------
// synthetic scenarios

/// Units on X ~ U(-5, 5) with a hard region |X| <= 2 where the supplied error
/// estimates are too small and an easy region where they are too large.
struct ToyRegions {
    Dataset data;                // f = 0, ehat2 column set
    std::vector<double> true_e2; // e(X_i)^2
    std::vector<int> region;     // kRegionOverconfident in the hard region
};

ToyRegions generate_toy_regions(std::size_t n, std::uint64_t seed);

/// One covariate X ~ N(0,1), Y = 1 + X + (0.3 + 0.7|X|) Z, f = 1 + 0.8 X.
Dataset generate_gaussian_mean(std::size_t n, std::uint64_t seed);

/// Two covariates, heteroscedastic linear response and a mildly biased
/// predictor.
Dataset generate_linear_regression(std::size_t n, std::uint64_t seed);

/// Loads the CSV or runs the named generator.
Dataset load_source(const DatasetSource& source);

// ---------------------------------------------------------------------------
// single-trial planning (shared by simulation and the plan command)

/// Everything decided before labels are drawn in one trial.
///
/// Burn-in units are labeled with certainty; the rest follow the chosen rule
/// over the remaining budget. The estimator weights (`rule`) put the burn-in
/// units at n_b/n and scale the remainder rule to the same mean, which mixes
/// the two unbiased parts in proportion to their label counts.
struct TrialPlan {
    BurnInSplit split;
    SamplingRule rule;      // estimator probabilities, mean n_b/n
    SamplingRule labeling;  // probabilities the labels were drawn with
    LabelDraw draw;
    double rho = 1.0;
    double c = 0.0;
    std::optional<CrossValidation> cv;
    std::vector<RhoTracePoint> trace;
};

/// Regions learned once per experiment from an independent pilot sample.
std::optional<RegionTree> learn_pilot_regions(const ExperimentConfig& config, const MethodConfig& method);

/// Burn-in split, error fit, initial rule, rho selection and label draw for
/// one method. Only burn-in labels are read (MissingBurnInLabels otherwise).
TrialPlan plan_trial(const ExperimentConfig& config, const Dataset& data, std::size_t budget,
                     const MethodConfig& method, std::uint64_t seed, const RegionTree* pilot_regions = nullptr);

// ---------------------------------------------------------------------------
// simulation

struct TrialRecord {
    std::string method;
    std::size_t budget = 0;
    std::size_t trial = 0;
    double estimate = std::numeric_limits<double>::quiet_NaN();
    double ci_lo = std::numeric_limits<double>::quiet_NaN();
    double ci_hi = std::numeric_limits<double>::quiet_NaN();
    double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_labeled = 0;
    double rho = std::numeric_limits<double>::quiet_NaN();
    double c = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string error;
};

/// Worker count from ROBUST_AI_THREADS, else the hardware concurrency.
unsigned default_thread_count();

/// Records ordered by (method as configured, budget as configured, trial).
/// Identical for every thread count.
std::vector<TrialRecord> run_trials(const ExperimentConfig& config, const Dataset& base, unsigned threads = 0);

/// Uniform-sampling variance curve V(m) = A + B/m of the coordinate estimate,
/// from per-unit influence terms on fully labeled data at its own estimate.
struct EssCurve {
    double a = 0.0;
    double b = 0.0;
    std::size_t n = 0;
    double theta_star = 0.0;

    static EssCurve from_data(const Dataset& data, const EstimandSpec& spec = {});

    double variance(double m) const noexcept { return a + b / m; }
    /// B / (V - A), or +infinity when V <= A. Throws NonpositiveVariance for V <= 0.
    double invert(double v_hat) const;
};

double effective_sample_size(double v_hat, const Dataset& data, const EstimandSpec& spec = {});

struct CoverageResult {
    double proportion = 0.0;
    std::size_t covered = 0;
    std::size_t counted = 0;
    std::size_t failed = 0;
};

CoverageResult coverage(const std::vector<TrialRecord>& records, double theta_star);

struct MetricsSummary {
    std::string method;
    std::size_t budget = 0;
    std::size_t trials = 0;
    std::size_t failed = 0;
    double mean_estimate = 0.0;
    double sd_estimate = 0.0;
    double v_hat = 0.0;            // variance of estimates across trials
    double n_eff_empirical = 0.0;  // ESS of v_hat
    double n_eff = 0.0;            // mean over trials of ESS(sigma2_hat / n)
    double n_eff_std = 0.0;
    double coverage = 0.0;
    double mean_rho = 0.0;
    double mean_c = 0.0;
    double mean_n_labeled = 0.0;
};

struct ExperimentResult {
    std::vector<TrialRecord> records;
    std::vector<MetricsSummary> summary;
    EssCurve curve;
};

/// ESS values above 10 n (including +infinity) are reported as 10 n.
std::vector<MetricsSummary> summarize(const ExperimentConfig& config, const std::vector<TrialRecord>& records,
                                      const EssCurve& curve);

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads = 0);
ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& base, unsigned threads = 0);

// ---------------------------------------------------------------------------
// misspecification demo

struct PerturbationReport {
    std::vector<double> ehat2;
    std::vector<double> perturbed;  // ehat2 + eps*
    std::vector<double> e2;
    double gap_before = 0.0;        // mean |ehat2 - e2|
    double gap_after = 0.0;         // mean |ehat2 + eps* - e2|
    double rho = 0.5;
    double c = 50.0;
};

/// n = 20 units, budget 10, e ~ N(5, 0.25), ehat ~ N(3, 0.25), pi proportional
/// to ehat moved halfway along the linear path, l2 ball of radius c.
PerturbationReport perturbation_demo(std::uint64_t seed, double c = 50.0);

// ---------------------------------------------------------------------------
// reports

struct ReportOptions {
    bool svg = true;
};

/// Writes summary.json, trials.csv and, if requested, ess.svg and coverage.svg
/// into `dir` (created if needed). Throws InvalidArgument on an empty summary.
void emit_report(const ExperimentConfig& config, const ExperimentResult& result, const std::filesystem::path& dir,
                 const ReportOptions& options = {});

std::string trials_csv(const std::vector<TrialRecord>& records);
std::string summary_json(const ExperimentConfig& config, const ExperimentResult& result);
/// Line chart with budget on x, one polyline and one 1-sigma band per method.
std::string metric_svg(const std::vector<MetricsSummary>& summary, std::string_view metric);

} // namespace robust_ai
