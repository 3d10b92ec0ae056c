#include "robust_ai/error_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "robust_ai/error.hpp"
#include "robust_ai/losses.hpp"

namespace robust_ai {

std::string_view to_string(ErrorSource source) noexcept {
    switch (source) {
    case ErrorSource::Knn: return "knn";
    case ErrorSource::Binned: return "binned";
    case ErrorSource::ExternalColumn: return "external_column";
    case ErrorSource::AnalyticBinary: return "analytic_binary";
    }
    return "knn";
}

std::size_t default_knn_k(std::size_t burn_in_size) noexcept {
    const auto root = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(burn_in_size))));
    return std::min(burn_in_size, std::max<std::size_t>(5, root));
}

ErrorEstimate fit_knn_error(const Eigen::MatrixXd& train_features, std::span<const double> residuals_sq,
                            std::size_t k, const Eigen::MatrixXd& query) {
    const auto m = static_cast<std::size_t>(train_features.rows());
    if (m == 0) throw Error(ErrorCode::EmptyBurnIn, "k-NN needs at least one burn-in row");
    if (residuals_sq.size() != m) throw Error(ErrorCode::DimensionMismatch, "residuals do not match burn-in rows");
    if (query.cols() != train_features.cols()) throw Error(ErrorCode::DimensionMismatch, "query dimension");
    if (k == 0 || k > m)
        throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " with " + std::to_string(m) + " burn-in rows");

    ErrorEstimate out{std::vector<double>(static_cast<std::size_t>(query.rows())), ErrorSource::Knn};
    std::vector<std::pair<double, std::size_t>> dist(m);
    for (Eigen::Index q = 0; q < query.rows(); ++q) {
        for (std::size_t i = 0; i < m; ++i)
            dist[i] = {(train_features.row(static_cast<Eigen::Index>(i)) - query.row(q)).squaredNorm(), i};
        // Pair ordering compares the distance first, then the row index.
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += residuals_sq[dist[j].second];
        out.values[static_cast<std::size_t>(q)] = std::max(0.0, total / static_cast<double>(k));
    }
    return out;
}

namespace {

std::size_t bin_of(double c, std::size_t bins) {
    const auto b = static_cast<std::size_t>(std::clamp(c, 0.0, 1.0) * static_cast<double>(bins));
    return std::min(b, bins - 1);
}

} // namespace

ErrorEstimate fit_binned_error(std::span<const double> train_confidence, std::span<const double> residuals_sq,
                               std::size_t bins, std::span<const double> query_confidence) {
    if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be >= 1");
    if (train_confidence.empty()) throw Error(ErrorCode::EmptyBurnIn, "binned fit needs burn-in rows");
    if (train_confidence.size() != residuals_sq.size())
        throw Error(ErrorCode::DimensionMismatch, "confidence and residuals differ in length");

    std::vector<double> sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (std::size_t i = 0; i < train_confidence.size(); ++i) {
        const auto b = bin_of(train_confidence[i], bins);
        sum[b] += residuals_sq[i];
        ++count[b];
    }
    std::vector<double> value(bins, 0.0);
    for (std::size_t b = 0; b < bins; ++b) {
        if (count[b] > 0) {
            value[b] = sum[b] / static_cast<double>(count[b]);
            continue;
        }
        for (std::size_t offset = 1; offset < bins; ++offset) {
            if (b >= offset && count[b - offset] > 0) {
                value[b] = sum[b - offset] / static_cast<double>(count[b - offset]);
                break;
            }
            if (b + offset < bins && count[b + offset] > 0) {
                value[b] = sum[b + offset] / static_cast<double>(count[b + offset]);
                break;
            }
        }
    }
    ErrorEstimate out{std::vector<double>(query_confidence.size()), ErrorSource::Binned};
    for (std::size_t i = 0; i < query_confidence.size(); ++i)
        out.values[i] = std::max(0.0, value[bin_of(query_confidence[i], bins)]);
    return out;
}

ErrorEstimate external_error(std::span<const double> ehat2) {
    ErrorEstimate out{std::vector<double>(ehat2.begin(), ehat2.end()), ErrorSource::ExternalColumn};
    for (auto& v : out.values) {
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite external error estimate");
        v = std::max(0.0, v);
    }
    return out;
}

ErrorEstimate binary_error(std::span<const double> predictions) {
    ErrorEstimate out{std::vector<double>(predictions.size()), ErrorSource::AnalyticBinary};
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double p = std::clamp(predictions[i], 0.0, 1.0);
        out.values[i] = p * (1.0 - p);
    }
    return out;
}

Eigen::MatrixXd estimate_hessian(const EstimandSpec& spec, const Eigen::MatrixXd& design, const Eigen::VectorXd& theta) {
    if (theta.size() != design.cols()) throw Error(ErrorCode::DimensionMismatch, "theta does not match design");
    const LossFamily family(spec.kind);
    Eigen::VectorXd w(design.rows());
    const Eigen::VectorXd eta = design * theta;
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = family.curvature(eta[i]);
    return design.transpose() * w.asDiagonal() * design / static_cast<double>(design.rows());
}

HessianColumn estimate_hessian_inverse_column(const EstimandSpec& spec, const Dataset& data,
                                              const Eigen::VectorXd& theta, std::size_t j) {
    if (spec.kind == EstimandKind::Mean) return HessianColumn{Eigen::VectorXd::Ones(1)};
    const Eigen::MatrixXd x = design_matrix(data, spec);
    if (j >= static_cast<std::size_t>(x.cols())) throw Error(ErrorCode::InvalidArgument, "coordinate out of range");
    const Eigen::MatrixXd h = estimate_hessian(spec, x, theta);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) throw Error(ErrorCode::SingularHessian, "Hessian is singular or ill-conditioned");
    Eigen::VectorXd e = Eigen::VectorXd::Zero(x.cols());
    e[static_cast<Eigen::Index>(j)] = 1.0;
    return HessianColumn{h.ldlt().solve(e)};
}

ErrorEstimate glm_error_transform(const ErrorEstimate& base, const Eigen::MatrixXd& design, const HessianColumn& h) {
    if (static_cast<std::size_t>(design.rows()) != base.values.size() || design.cols() != h.h.size())
        throw Error(ErrorCode::DimensionMismatch, "design, error vector and Hessian column disagree");
    ErrorEstimate out{base.values, base.source};
    const Eigen::VectorXd proj = design * h.h;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double s = proj[static_cast<Eigen::Index>(i)];
        out.values[i] = std::max(0.0, base.values[i] * s * s);
    }
    return out;
}

Eigen::VectorXd fit_pilot_theta(const EstimandSpec& spec, const Dataset& data, std::span<const std::size_t> labeled_rows) {
    std::vector<double> pseudo = data.predictions;
    for (auto i : labeled_rows) {
        if (!data.observed[i]) throw Error(ErrorCode::MissingLabelAtSampledUnit, "burn-in row " + std::to_string(i) + " has no label");
        pseudo[i] = data.labels[i];
    }
    const Eigen::MatrixXd x = design_matrix(data, spec);
    return fit_pseudo_outcome(spec.kind, x, pseudo).theta;
}

} // namespace robust_ai
