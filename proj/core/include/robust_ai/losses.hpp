#pragma once

#include <cstddef>
#include <span>

#include <Eigen/Core>

#include "robust_ai/data_model.hpp"

namespace robust_ai {

/// Convex per-unit loss l_theta(x, y) for the supported estimands.
///
/// The mean is squared loss on an intercept-only design, so it shares the
/// linear-regression formulas. Logistic loss accepts soft labels y in [0,1]
/// (and, as a pseudo-outcome, any real y).
class LossFamily {
public:
    explicit LossFamily(EstimandKind kind) noexcept : kind_(kind) {}

    EstimandKind kind() const noexcept { return kind_; }

    double loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) const;
    Eigen::VectorXd gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) const;
    Eigen::MatrixXd hessian(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) const;

    /// d loss / d eta at eta = x'theta; the gradient is this times x.
    double residual(double eta, double y) const noexcept;
    /// d^2 loss / d eta^2 at eta; label-free for every supported family.
    double curvature(double eta) const noexcept;

private:
    EstimandKind kind_;
};

double sigmoid(double eta) noexcept;

struct GlmFitOptions {
    double gradient_tol = 1e-8;
    int max_newton_iterations = 100;
    int max_gradient_iterations = 20000;
};

struct GlmFit {
    Eigen::VectorXd theta;
    int iterations = 0;
    double gradient_norm = 0.0;
    bool used_gradient_fallback = false;
};

/// Minimizes (1/n) sum_i [ b(x_i'theta) - ytilde_i x_i'theta ], the form that
/// the active-inference objective takes for squared and logistic loss once the
/// inverse-probability correction is folded into the pseudo-outcome ytilde.
///
/// Squared loss: closed form through the normal equations (SingularSystem on
/// rank deficiency). Logistic: damped Newton from zero with step halving, then
/// backtracking gradient descent if Newton stalls; NoConvergence if both fail.
GlmFit fit_pseudo_outcome(EstimandKind kind, const Eigen::MatrixXd& design, std::span<const double> ytilde,
                          const GlmFitOptions& options = {});

/// Value of the pseudo-outcome objective above (up to a theta-free constant).
double pseudo_outcome_objective(EstimandKind kind, const Eigen::MatrixXd& design, std::span<const double> ytilde,
                                const Eigen::VectorXd& theta);

} // namespace robust_ai
