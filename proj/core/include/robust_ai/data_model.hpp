#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace robust_ai {

/// Units with covariates, black-box predictions and (partially observed) labels.
///
/// `labels[i]` is meaningful only where `observed[i] != 0`; unobserved entries
/// hold NaN. All per-unit vectors have length n = features.rows().
struct Dataset {
    Eigen::MatrixXd features;  // n x d, d may be 0
    std::vector<std::string> feature_names;
    std::vector<double> predictions;
    std::vector<double> labels;
    std::vector<std::uint8_t> observed;
    std::optional<std::vector<double>> confidence;
    std::optional<std::vector<double>> ehat2;  // externally supplied squared-error estimates

    std::size_t size() const noexcept { return predictions.size(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(features.cols()); }

    bool fully_labeled() const noexcept;
    std::size_t labeled_count() const noexcept;

    /// Throws Error{DimensionMismatch|EmptyDataset|InvalidArgument} on a broken invariant.
    void validate() const;

    /// Rows in the given order (duplicates allowed, as for bootstrap resamples).
    Dataset subset(std::span<const std::size_t> rows) const;

    /// Copy whose observed mask is `mask`; labels outside the mask are hidden.
    Dataset masked(std::span<const std::uint8_t> mask) const;
};

/// Column mapping for CSV ingestion. An empty `features` list selects every
/// header column whose name starts with `x`, in header order.
struct CsvSchema {
    std::vector<std::string> features;
    std::string prediction = "f";
    std::string label = "y";
    std::string confidence = "conf";  // optional column
    std::string ehat2 = "ehat2";      // optional column
};

Dataset parse_csv(std::istream& in, const CsvSchema& schema = {});
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Writes the dataset with `%.17g` numerics; unobserved labels become empty cells.
void write_csv(std::ostream& out, const Dataset& data);
void save_csv(const std::filesystem::path& path, const Dataset& data);

/// Label budget n_b out of n units.
struct Budget {
    std::size_t labels = 1;
    std::size_t units = 1;

    /// Throws InvalidArgument unless 1 <= labels <= units.
    static Budget make(std::size_t labels, std::size_t units);

    double rate() const noexcept { return static_cast<double>(labels) / static_cast<double>(units); }
};

enum class EstimandKind { Mean, LinearRegression, LogisticRegression };

std::string_view to_string(EstimandKind kind) noexcept;
/// Accepts mean | linear_regression | linreg | logistic_regression | logreg.
EstimandKind parse_estimand_kind(std::string_view text);

struct EstimandSpec {
    EstimandKind kind = EstimandKind::Mean;
    std::size_t coordinate = 0;  // ignored for the mean
    bool include_intercept = true;

    /// Number of parameters for a dataset with `dim` feature columns.
    std::size_t parameter_count(std::size_t dim) const noexcept;
    /// Throws InvalidArgument if the coordinate is out of range.
    void validate(std::size_t dim) const;
};

/// Regression design for the estimand: a column of ones for the mean, the
/// features (with a leading intercept column when requested) otherwise.
Eigen::MatrixXd design_matrix(const Dataset& data, const EstimandSpec& spec);

/// Throws InvalidArgument unless observed labels are in {0,1} and predictions in [0,1].
void require_binary(const Dataset& data);

struct BurnInPlan {
    std::size_t size = 0;
    std::uint64_t seed = 0;
};

struct BurnInSplit {
    std::vector<std::size_t> burn_in;    // ascending
    std::vector<std::size_t> remainder;  // ascending
};

/// Uniform sample without replacement of `plan.size` units out of n.
BurnInSplit split_burn_in(std::size_t n, const BurnInPlan& plan);
BurnInSplit split_burn_in(const Dataset& data, const BurnInPlan& plan);

/// Writes `content` to `path` through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

} // namespace robust_ai
