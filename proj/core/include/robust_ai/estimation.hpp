#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "robust_ai/data_model.hpp"
#include "robust_ai/error_model.hpp"
#include "robust_ai/paths.hpp"
#include "robust_ai/sampler.hpp"

namespace robust_ai {

inline constexpr double kDefaultAlpha = 0.1;

struct EstimateDiagnostics {
    double max_inverse_weight = 0.0;  // over labeled units
    int solver_iterations = 0;
    double gradient_norm = 0.0;
    bool zero_labels = false;
    bool gradient_fallback = false;
};

struct EstimateResult {
    Eigen::VectorXd theta_hat;
    double estimate = 0.0;    // coordinate of interest
    double sigma2_hat = 0.0;  // plug-in n * Var(estimate)
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::size_t n = 0;
    std::size_t n_labeled = 0;
    double alpha = kDefaultAlpha;
    EstimateDiagnostics diagnostics;
};

/// Inverse of the standard normal CDF (Acklam's approximation polished by one
/// Halley step; absolute error well below 1e-12 on (1e-300, 1 - 1e-16)).
double normal_quantile(double p);

/// estimate -/+ z_{1-alpha/2} sqrt(sigma2 / n)
std::pair<double, double> confidence_interval(double estimate, double sigma2_hat, std::size_t n, double alpha);

/// ytilde_i = f_i + (Y_i - f_i) xi_i / pi_i. Throws MissingLabelAtSampledUnit
/// (listing the offending rows) if a sampled unit has no label.
std::vector<double> pseudo_outcomes(const Dataset& data, const LabelDraw& draw, const SamplingRule& rule);

/// Active inference estimate of the label mean with its plug-in interval.
EstimateResult estimate_mean(const Dataset& data, const LabelDraw& draw, const SamplingRule& rule,
                             double alpha = kDefaultAlpha);

/// Minimizer of the inverse-probability-corrected empirical risk. The mean
/// estimand delegates to estimate_mean.
EstimateResult estimate_m(const EstimandSpec& spec, const Dataset& data, const LabelDraw& draw,
                          const SamplingRule& rule, double alpha = kDefaultAlpha);

/// Sample variance over units of the coordinate's influence term.
double variance_plugin(const EstimandSpec& spec, const Dataset& data, const LabelDraw& draw, const SamplingRule& rule,
                       const Eigen::VectorXd& theta_hat, const HessianColumn& h);

/// Exact variance of the mean estimate over the labeling draws for fixed,
/// fully labeled data: (1/n^2) sum_i (Y_i - f_i)^2 (1 - pi_i) / pi_i.
double design_variance(const Dataset& data, const SamplingRule& rule);

/// JSON with keys theta_hat, estimate, sigma2_hat, ci_lo, ci_hi, n_labeled,
/// alpha, diagnostics.
std::string to_json(const EstimateResult& result, int indent = 2);

} // namespace robust_ai
