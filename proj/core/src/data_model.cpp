#include "robust_ai/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <system_error>

#include "robust_ai/error.hpp"
#include "robust_ai/random.hpp"

namespace robust_ai {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

std::optional<double> parse_number(std::string_view cell) {
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double value = 0.0;
    const auto* first = cell.data();
    const auto* last = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) return std::nullopt;
    return value;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

bool Dataset::fully_labeled() const noexcept {
    return std::all_of(observed.begin(), observed.end(), [](std::uint8_t o) { return o != 0; });
}

std::size_t Dataset::labeled_count() const noexcept {
    return static_cast<std::size_t>(std::count_if(observed.begin(), observed.end(), [](std::uint8_t o) { return o != 0; }));
}

void Dataset::validate() const {
    const std::size_t n = predictions.size();
    if (n == 0) throw Error(ErrorCode::EmptyDataset, "dataset has no rows");
    if (static_cast<std::size_t>(features.rows()) != n || labels.size() != n || observed.size() != n)
        throw Error(ErrorCode::DimensionMismatch, "per-unit vectors disagree in length");
    if (!feature_names.empty() && feature_names.size() != dim())
        throw Error(ErrorCode::DimensionMismatch, "feature_names does not match feature columns");
    if (confidence) {
        if (confidence->size() != n) throw Error(ErrorCode::DimensionMismatch, "confidence length");
        for (double c : *confidence)
            if (!(c >= 0.0 && c <= 1.0)) throw Error(ErrorCode::InvalidArgument, "confidence outside [0,1]");
    }
    if (ehat2 && ehat2->size() != n) throw Error(ErrorCode::DimensionMismatch, "ehat2 length");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(predictions[i])) throw Error(ErrorCode::InvalidArgument, "non-finite prediction");
        if (observed[i] && !std::isfinite(labels[i]))
            throw Error(ErrorCode::InvalidArgument, "observed label is not finite");
    }
    if (!features.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite feature value");
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.feature_names = feature_names;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.predictions.reserve(rows.size());
    out.labels.reserve(rows.size());
    out.observed.reserve(rows.size());
    if (confidence) out.confidence.emplace().reserve(rows.size());
    if (ehat2) out.ehat2.emplace().reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t i = rows[k];
        out.features.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(i));
        out.predictions.push_back(predictions[i]);
        out.labels.push_back(labels[i]);
        out.observed.push_back(observed[i]);
        if (confidence) out.confidence->push_back((*confidence)[i]);
        if (ehat2) out.ehat2->push_back((*ehat2)[i]);
    }
    return out;
}

Dataset Dataset::masked(std::span<const std::uint8_t> mask) const {
    if (mask.size() != size()) throw Error(ErrorCode::DimensionMismatch, "mask length");
    Dataset out = *this;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        out.observed[i] = static_cast<std::uint8_t>(mask[i] && observed[i]);
        if (!out.observed[i]) out.labels[i] = kNaN;
    }
    return out;
}

Dataset parse_csv(std::istream& in, const CsvSchema& schema) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::EmptyDataset, "missing header row");
    const auto header_views = split_fields(line);
    std::vector<std::string> header(header_views.begin(), header_views.end());

    auto find_column = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - header.begin());
    };
    auto require_column = [&](const std::string& name) {
        const auto col = find_column(name);
        if (!col) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
        return *col;
    };

    std::vector<std::string> feature_names = schema.features;
    if (feature_names.empty()) {
        for (const auto& h : header)
            if (!h.empty() && h.front() == 'x') feature_names.push_back(h);
    }
    std::vector<std::size_t> feature_cols;
    for (const auto& name : feature_names) feature_cols.push_back(require_column(name));
    const std::size_t pred_col = require_column(schema.prediction);
    const std::size_t label_col = require_column(schema.label);
    const auto conf_col = find_column(schema.confidence);
    const auto ehat_col = find_column(schema.ehat2);

    std::vector<std::vector<double>> rows;
    Dataset data;
    data.feature_names = feature_names;
    if (conf_col) data.confidence.emplace();
    if (ehat_col) data.ehat2.emplace();

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto cells = split_fields(line);
        if (cells.size() != header.size())
            throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + ": expected " +
                                                   std::to_string(header.size()) + " fields");
        auto number = [&](std::size_t col) {
            const auto v = parse_number(cells[col]);
            if (!v)
                throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + ", column '" + header[col] +
                                                       "': cannot parse '" + std::string(cells[col]) + "'");
            return *v;
        };
        std::vector<double> x;
        x.reserve(feature_cols.size());
        for (auto c : feature_cols) x.push_back(number(c));
        rows.push_back(std::move(x));
        data.predictions.push_back(number(pred_col));
        if (cells[label_col].empty()) {
            data.labels.push_back(kNaN);
            data.observed.push_back(0);
        } else {
            data.labels.push_back(number(label_col));
            data.observed.push_back(1);
        }
        if (conf_col) data.confidence->push_back(number(*conf_col));
        if (ehat_col) data.ehat2->push_back(std::max(0.0, number(*ehat_col)));
    }
    if (rows.empty()) throw Error(ErrorCode::EmptyDataset, "no data rows");

    data.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feature_cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < feature_cols.size(); ++j)
            data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    data.validate();
    return data;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    return parse_csv(in, schema);
}

void write_csv(std::ostream& out, const Dataset& data) {
    std::vector<std::string> names = data.feature_names;
    if (names.empty())
        for (std::size_t j = 0; j < data.dim(); ++j) names.push_back("x" + std::to_string(j + 1));
    for (const auto& name : names) out << name << ',';
    out << "f,y";
    if (data.confidence) out << ",conf";
    if (data.ehat2) out << ",ehat2";
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.dim(); ++j)
            out << format_double(data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ',';
        out << format_double(data.predictions[i]) << ',';
        if (data.observed[i]) out << format_double(data.labels[i]);
        if (data.confidence) out << ',' << format_double((*data.confidence)[i]);
        if (data.ehat2) out << ',' << format_double((*data.ehat2)[i]);
        out << '\n';
    }
}

void save_csv(const std::filesystem::path& path, const Dataset& data) {
    std::ostringstream out;
    write_csv(out, data);
    write_file_atomic(path, out.str());
}

Budget Budget::make(std::size_t labels, std::size_t units) {
    if (units == 0 || labels == 0 || labels > units)
        throw Error(ErrorCode::InvalidArgument,
                    "budget must satisfy 1 <= n_b <= n (got n_b=" + std::to_string(labels) + ", n=" + std::to_string(units) + ")");
    return Budget{labels, units};
}

std::string_view to_string(EstimandKind kind) noexcept {
    switch (kind) {
    case EstimandKind::Mean: return "mean";
    case EstimandKind::LinearRegression: return "linear_regression";
    case EstimandKind::LogisticRegression: return "logistic_regression";
    }
    return "mean";
}

EstimandKind parse_estimand_kind(std::string_view text) {
    if (text == "mean") return EstimandKind::Mean;
    if (text == "linear_regression" || text == "linreg") return EstimandKind::LinearRegression;
    if (text == "logistic_regression" || text == "logreg") return EstimandKind::LogisticRegression;
    throw Error(ErrorCode::ConfigError, "unknown estimand '" + std::string(text) + "'");
}

std::size_t EstimandSpec::parameter_count(std::size_t dim) const noexcept {
    if (kind == EstimandKind::Mean) return 1;
    return dim + (include_intercept ? 1 : 0);
}

void EstimandSpec::validate(std::size_t dim) const {
    const std::size_t p = parameter_count(dim);
    if (p == 0) throw Error(ErrorCode::InvalidArgument, "regression needs at least one column");
    if (kind != EstimandKind::Mean && coordinate >= p)
        throw Error(ErrorCode::InvalidArgument,
                    "coordinate " + std::to_string(coordinate) + " out of range for " + std::to_string(p) + " columns");
}

Eigen::MatrixXd design_matrix(const Dataset& data, const EstimandSpec& spec) {
    const auto n = static_cast<Eigen::Index>(data.size());
    if (spec.kind == EstimandKind::Mean) return Eigen::MatrixXd::Ones(n, 1);
    const Eigen::Index d = data.features.cols();
    if (!spec.include_intercept) return data.features;
    Eigen::MatrixXd x(n, d + 1);
    x.col(0).setOnes();
    x.rightCols(d) = data.features;
    return x;
}

void require_binary(const Dataset& data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double p = data.predictions[i];
        if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "prediction outside [0,1] at row " + std::to_string(i));
        if (data.observed[i] && data.labels[i] != 0.0 && data.labels[i] != 1.0)
            throw Error(ErrorCode::InvalidArgument, "non-binary label at row " + std::to_string(i));
    }
}

BurnInSplit split_burn_in(std::size_t n, const BurnInPlan& plan) {
    if (plan.size > n)
        throw Error(ErrorCode::BurnInTooLarge,
                    "burn-in of " + std::to_string(plan.size) + " exceeds " + std::to_string(n) + " units");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = 0; k < plan.size; ++k) {
        const double u = uniform01(plan.seed, Stream::BurnIn, k);
        auto j = k + static_cast<std::size_t>(u * static_cast<double>(n - k));
        j = std::min(j, n - 1);
        std::swap(perm[k], perm[j]);
    }
    BurnInSplit split;
    split.burn_in.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(plan.size));
    split.remainder.assign(perm.begin() + static_cast<std::ptrdiff_t>(plan.size), perm.end());
    std::sort(split.burn_in.begin(), split.burn_in.end());
    std::sort(split.remainder.begin(), split.remainder.end());
    return split;
}

BurnInSplit split_burn_in(const Dataset& data, const BurnInPlan& plan) {
    return split_burn_in(data.size(), plan);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

} // namespace robust_ai
