#include "robust_ai/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "robust_ai/error.hpp"

namespace robust_ai {

double sigmoid(double eta) noexcept {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

namespace {

// log(1 + e^eta) without overflow.
double softplus(double eta) noexcept { return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta))); }

bool is_logistic(EstimandKind kind) noexcept { return kind == EstimandKind::LogisticRegression; }

} // namespace

double LossFamily::loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) const {
    const double eta = x.dot(theta);
    if (is_logistic(kind_)) return softplus(eta) - y * eta;
    const double r = y - eta;
    return 0.5 * r * r;
}

double LossFamily::residual(double eta, double y) const noexcept {
    return is_logistic(kind_) ? sigmoid(eta) - y : eta - y;
}

double LossFamily::curvature(double eta) const noexcept {
    if (!is_logistic(kind_)) return 1.0;
    const double mu = sigmoid(eta);
    return mu * (1.0 - mu);
}

Eigen::VectorXd LossFamily::gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) const {
    return residual(x.dot(theta), y) * x;
}

Eigen::MatrixXd LossFamily::hessian(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double) const {
    return curvature(x.dot(theta)) * (x * x.transpose());
}

double pseudo_outcome_objective(EstimandKind kind, const Eigen::MatrixXd& design, std::span<const double> ytilde,
                                const Eigen::VectorXd& theta) {
    const Eigen::VectorXd eta = design * theta;
    double total = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double b = is_logistic(kind) ? softplus(eta[i]) : 0.5 * eta[i] * eta[i];
        total += b - ytilde[static_cast<std::size_t>(i)] * eta[i];
    }
    return total / static_cast<double>(eta.size());
}

namespace {

Eigen::VectorXd as_vector(std::span<const double> v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd logistic_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& theta) {
    Eigen::VectorXd r = x * theta;
    for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = sigmoid(r[i]) - y[i];
    return x.transpose() * r / static_cast<double>(x.rows());
}

GlmFit fit_squared(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const Eigen::MatrixXd gram = x.transpose() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    const auto d = ldlt.vectorD();
    const double scale = std::max(d.cwiseAbs().maxCoeff(), 1e-300);
    if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * scale)
        throw Error(ErrorCode::SingularSystem, "design is rank deficient");
    GlmFit fit;
    fit.theta = ldlt.solve(x.transpose() * y);
    fit.gradient_norm = (x.transpose() * (x * fit.theta - y)).norm() / static_cast<double>(x.rows());
    return fit;
}

GlmFit fit_logistic(const Eigen::MatrixXd& x, std::span<const double> ytilde, const Eigen::VectorXd& y,
                    const GlmFitOptions& options) {
    const auto p = x.cols();
    const double n = static_cast<double>(x.rows());
    GlmFit fit;
    fit.theta = Eigen::VectorXd::Zero(p);
    auto objective = [&](const Eigen::VectorXd& t) {
        return pseudo_outcome_objective(EstimandKind::LogisticRegression, x, ytilde, t);
    };

    double value = objective(fit.theta);
    bool newton_ok = true;
    for (int it = 0; it < options.max_newton_iterations; ++it) {
        const Eigen::VectorXd g = logistic_gradient(x, y, fit.theta);
        fit.gradient_norm = g.norm();
        fit.iterations = it;
        if (fit.gradient_norm < options.gradient_tol) return fit;

        Eigen::VectorXd w = x * fit.theta;
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double mu = sigmoid(w[i]);
            w[i] = mu * (1.0 - mu);
        }
        const Eigen::MatrixXd h = x.transpose() * w.asDiagonal() * x / n;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 0.0) {
            newton_ok = false;
            break;
        }
        const Eigen::VectorXd step = -ldlt.solve(g);
        const double slope = g.dot(step);
        if (!(slope < 0.0)) {
            newton_ok = false;
            break;
        }
        double t = 1.0;
        bool accepted = false;
        for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
            const Eigen::VectorXd candidate = fit.theta + t * step;
            const double cv = objective(candidate);
            if (std::isfinite(cv) && cv <= value + 1e-4 * t * slope) {
                fit.theta = candidate;
                value = cv;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            // Newton direction no longer decreases the objective measurably; at
            // this point the gradient is usually already at round-off level.
            const double gnorm = logistic_gradient(x, y, fit.theta).norm();
            fit.gradient_norm = gnorm;
            if (gnorm < 1e3 * options.gradient_tol) return fit;
            newton_ok = false;
            break;
        }
    }
    if (newton_ok) {
        fit.gradient_norm = logistic_gradient(x, y, fit.theta).norm();
        if (fit.gradient_norm < options.gradient_tol) return fit;
    }

    fit.used_gradient_fallback = true;
    double step_size = 1.0;
    for (int it = 0; it < options.max_gradient_iterations; ++it) {
        const Eigen::VectorXd g = logistic_gradient(x, y, fit.theta);
        fit.gradient_norm = g.norm();
        ++fit.iterations;
        if (fit.gradient_norm < options.gradient_tol) return fit;
        step_size = std::min(step_size * 2.0, 1e6);
        bool accepted = false;
        for (int halving = 0; halving < 80; ++halving, step_size *= 0.5) {
            const Eigen::VectorXd candidate = fit.theta - step_size * g;
            const double cv = objective(candidate);
            if (std::isfinite(cv) && cv <= value - 1e-4 * step_size * g.squaredNorm()) {
                fit.theta = candidate;
                value = cv;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
    }
    throw Error(ErrorCode::NoConvergence, "logistic fit stopped after " + std::to_string(fit.iterations) +
                                              " iterations, gradient norm " + std::to_string(fit.gradient_norm));
}

} // namespace

GlmFit fit_pseudo_outcome(EstimandKind kind, const Eigen::MatrixXd& design, std::span<const double> ytilde,
                          const GlmFitOptions& options) {
    if (static_cast<std::size_t>(design.rows()) != ytilde.size())
        throw Error(ErrorCode::DimensionMismatch, "design rows do not match outcomes");
    if (design.rows() == 0) throw Error(ErrorCode::EmptyDataset, "no rows to fit");
    const Eigen::VectorXd y = as_vector(ytilde);
    if (kind == EstimandKind::LogisticRegression) return fit_logistic(design, ytilde, y, options);
    return fit_squared(design, y);
}

} // namespace robust_ai
