#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "robust_ai/data_model.hpp"

namespace robust_ai {

enum class ErrorSource { Knn, Binned, ExternalColumn, AnalyticBinary };

std::string_view to_string(ErrorSource source) noexcept;

/// Estimated squared prediction error at each unit; nonnegative and finite.
struct ErrorEstimate {
    std::vector<double> values;
    ErrorSource source = ErrorSource::Knn;
};

/// j-th column of the inverse Hessian of the population loss.
struct HessianColumn {
    Eigen::VectorXd h;
};

/// max(5, ceil(sqrt(burn_in_size))), capped at the burn-in size.
std::size_t default_knn_k(std::size_t burn_in_size) noexcept;

/// Mean squared residual over the k nearest training rows (Euclidean), ties
/// resolved toward the lower training index.
ErrorEstimate fit_knn_error(const Eigen::MatrixXd& train_features, std::span<const double> residuals_sq,
                            std::size_t k, const Eigen::MatrixXd& query);

/// Equal-width bins of the confidence score on [0,1]; empty bins copy the
/// nearest nonempty bin (the lower one on a distance tie).
ErrorEstimate fit_binned_error(std::span<const double> train_confidence, std::span<const double> residuals_sq,
                               std::size_t bins, std::span<const double> query_confidence);

/// User-supplied estimates, clamped below at zero.
ErrorEstimate external_error(std::span<const double> ehat2);

/// p(1-p) for probabilistic predictions of a binary label.
ErrorEstimate binary_error(std::span<const double> predictions);

/// Hessian of the empirical population loss at `theta` over every row of the
/// design (label-free for all supported families).
Eigen::MatrixXd estimate_hessian(const EstimandSpec& spec, const Eigen::MatrixXd& design, const Eigen::VectorXd& theta);

/// Column `j` of the inverse Hessian. Throws SingularHessian when the condition
/// number exceeds 1e12.
HessianColumn estimate_hessian_inverse_column(const EstimandSpec& spec, const Dataset& data,
                                              const Eigen::VectorXd& theta, std::size_t j);

/// values[i] = base[i] * (x_i' h)^2.
ErrorEstimate glm_error_transform(const ErrorEstimate& base, const Eigen::MatrixXd& design, const HessianColumn& h);

/// Pilot parameter for the Hessian: labels on the given rows, predictions as
/// pseudo-labels everywhere else.
Eigen::VectorXd fit_pilot_theta(const EstimandSpec& spec, const Dataset& data, std::span<const std::size_t> labeled_rows);

} // namespace robust_ai
