#include "robust_ai/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "robust_ai/error.hpp"
#include "robust_ai/losses.hpp"

namespace robust_ai {

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile level must lie in (0, 1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x = 0.0;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement against the exact CDF.
    for (int it = 0; it < 2; ++it) {
        const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
        const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

std::pair<double, double> confidence_interval(double estimate, double sigma2_hat, std::size_t n, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
    if (n == 0) throw Error(ErrorCode::InvalidArgument, "interval needs n >= 1");
    const double z = normal_quantile(1.0 - alpha / 2.0);
    const double half = z * std::sqrt(std::max(0.0, sigma2_hat) / static_cast<double>(n));
    return {estimate - half, estimate + half};
}

namespace {

void check_shapes(const Dataset& data, const LabelDraw& draw, const SamplingRule& rule) {
    if (draw.xi.size() != data.size() || rule.size() != data.size())
        throw Error(ErrorCode::DimensionMismatch, "dataset, draw and rule must cover the same units");
}

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

EstimateDiagnostics base_diagnostics(const LabelDraw& draw, const SamplingRule& rule) {
    EstimateDiagnostics diag;
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < draw.xi.size(); ++i) {
        if (!draw.xi[i]) continue;
        ++labeled;
        diag.max_inverse_weight = std::max(diag.max_inverse_weight, 1.0 / rule.probs[i]);
    }
    diag.zero_labels = labeled == 0;
    return diag;
}

std::size_t count_labeled(const LabelDraw& draw) {
    return static_cast<std::size_t>(std::count(draw.xi.begin(), draw.xi.end(), std::uint8_t{1}));
}

} // namespace

std::vector<double> pseudo_outcomes(const Dataset& data, const LabelDraw& draw, const SamplingRule& rule) {
    check_shapes(data, draw, rule);
    std::vector<double> out(data.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < data.size(); ++i) {
        out[i] = data.predictions[i];
        if (!draw.xi[i]) continue;
        if (!data.observed[i]) {
            missing.push_back(i);
            continue;
        }
        out[i] += (data.labels[i] - data.predictions[i]) / rule.probs[i];
    }
    if (!missing.empty()) {
        std::string rows;
        for (std::size_t k = 0; k < missing.size() && k < 20; ++k) rows += (k ? "," : "") + std::to_string(missing[k]);
        if (missing.size() > 20) rows += ",...";
        throw Error(ErrorCode::MissingLabelAtSampledUnit,
                    std::to_string(missing.size()) + " sampled rows lack labels: " + rows);
    }
    return out;
}

EstimateResult estimate_mean(const Dataset& data, const LabelDraw& draw, const SamplingRule& rule, double alpha) {
    const std::vector<double> t = pseudo_outcomes(data, draw, rule);
    EstimateResult result;
    result.n = data.size();
    double total = 0.0;
    for (double v : t) total += v;
    result.estimate = total / static_cast<double>(t.size());
    result.theta_hat = Eigen::VectorXd::Constant(1, result.estimate);
    result.sigma2_hat = sample_variance(t);
    std::tie(result.ci_lo, result.ci_hi) = confidence_interval(result.estimate, result.sigma2_hat, result.n, alpha);
    result.n_labeled = count_labeled(draw);
    result.alpha = alpha;
    result.diagnostics = base_diagnostics(draw, rule);
    return result;
}

double variance_plugin(const EstimandSpec& spec, const Dataset& data, const LabelDraw& draw, const SamplingRule& rule,
                       const Eigen::VectorXd& theta_hat, const HessianColumn& h) {
    const std::vector<double> ytilde = pseudo_outcomes(data, draw, rule);
    if (spec.kind == EstimandKind::Mean) return sample_variance(ytilde);
    const Eigen::MatrixXd x = design_matrix(data, spec);
    if (theta_hat.size() != x.cols() || h.h.size() != x.cols())
        throw Error(ErrorCode::DimensionMismatch, "theta or Hessian column does not match the design");
    const LossFamily family(spec.kind);
    const Eigen::VectorXd eta = x * theta_hat;
    const Eigen::VectorXd proj = x * h.h;
    std::vector<double> influence(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        influence[i] = family.residual(eta[k], ytilde[i]) * proj[k];
    }
    return sample_variance(influence);
}

EstimateResult estimate_m(const EstimandSpec& spec, const Dataset& data, const LabelDraw& draw,
                          const SamplingRule& rule, double alpha) {
    if (spec.kind == EstimandKind::Mean) return estimate_mean(data, draw, rule, alpha);
    spec.validate(data.dim());
    const std::vector<double> ytilde = pseudo_outcomes(data, draw, rule);
    const Eigen::MatrixXd x = design_matrix(data, spec);
    const GlmFit fit = fit_pseudo_outcome(spec.kind, x, ytilde);

    EstimateResult result;
    result.n = data.size();
    result.theta_hat = fit.theta;
    result.estimate = fit.theta[static_cast<Eigen::Index>(spec.coordinate)];
    const HessianColumn h = estimate_hessian_inverse_column(spec, data, fit.theta, spec.coordinate);
    result.sigma2_hat = variance_plugin(spec, data, draw, rule, fit.theta, h);
    std::tie(result.ci_lo, result.ci_hi) = confidence_interval(result.estimate, result.sigma2_hat, result.n, alpha);
    result.n_labeled = count_labeled(draw);
    result.alpha = alpha;
    result.diagnostics = base_diagnostics(draw, rule);
    result.diagnostics.solver_iterations = fit.iterations;
    result.diagnostics.gradient_norm = fit.gradient_norm;
    result.diagnostics.gradient_fallback = fit.used_gradient_fallback;
    return result;
}

double design_variance(const Dataset& data, const SamplingRule& rule) {
    if (rule.size() != data.size()) throw Error(ErrorCode::DimensionMismatch, "rule does not match dataset");
    if (!data.fully_labeled()) throw Error(ErrorCode::InvalidArgument, "design variance needs every label");
    const double n = static_cast<double>(data.size());
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double r = data.labels[i] - data.predictions[i];
        total += r * r * (1.0 - rule.probs[i]) / rule.probs[i];
    }
    return total / (n * n);
}

std::string to_json(const EstimateResult& result, int indent) {
    nlohmann::json j;
    j["theta_hat"] = std::vector<double>(result.theta_hat.data(), result.theta_hat.data() + result.theta_hat.size());
    j["estimate"] = result.estimate;
    j["sigma2_hat"] = result.sigma2_hat;
    j["ci_lo"] = result.ci_lo;
    j["ci_hi"] = result.ci_hi;
    j["n"] = result.n;
    j["n_labeled"] = result.n_labeled;
    j["alpha"] = result.alpha;
    j["diagnostics"] = {
        {"max_inverse_weight", result.diagnostics.max_inverse_weight},
        {"solver_iterations", result.diagnostics.solver_iterations},
        {"gradient_norm", result.diagnostics.gradient_norm},
        {"zero_labels", result.diagnostics.zero_labels},
        {"gradient_fallback", result.diagnostics.gradient_fallback},
    };
    return j.dump(indent);
}

} // namespace robust_ai
