#include "robust_ai/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "robust_ai/error.hpp"
#include "robust_ai/losses.hpp"
#include "robust_ai/random.hpp"

namespace robust_ai {

using nlohmann::json;

std::string_view to_string(InitialRule rule) noexcept {
    switch (rule) {
    case InitialRule::Uniform: return "uniform";
    case InitialRule::PropUncertainty: return "prop_uncertainty";
    case InitialRule::PropEhat: return "prop_ehat";
    case InitialRule::PropOneMinusConf: return "prop_one_minus_conf";
    }
    return "uniform";
}

InitialRule parse_initial_rule(std::string_view text) {
    if (text == "uniform") return InitialRule::Uniform;
    if (text == "prop_uncertainty") return InitialRule::PropUncertainty;
    if (text == "prop_ehat") return InitialRule::PropEhat;
    if (text == "prop_one_minus_conf") return InitialRule::PropOneMinusConf;
    throw Error(ErrorCode::ConfigError, "unknown initial rule '" + std::string(text) + "'");
}

std::string_view to_string(MethodKind kind) noexcept {
    switch (kind) {
    case MethodKind::Uniform: return "uniform";
    case MethodKind::Active: return "active";
    case MethodKind::Robust: return "robust";
    }
    return "robust";
}

MethodKind parse_method_kind(std::string_view text) {
    if (text == "uniform") return MethodKind::Uniform;
    if (text == "active") return MethodKind::Active;
    if (text == "robust") return MethodKind::Robust;
    throw Error(ErrorCode::ConfigError, "unknown method kind '" + std::string(text) + "'");
}

ErrorSource parse_error_source(std::string_view text) {
    if (text == "knn") return ErrorSource::Knn;
    if (text == "binned") return ErrorSource::Binned;
    if (text == "external") return ErrorSource::ExternalColumn;
    if (text == "analytic") return ErrorSource::AnalyticBinary;
    throw Error(ErrorCode::ConfigError, "unknown error source '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// config

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, std::string_view where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
            throw Error(ErrorCode::ConfigError, "unknown key '" + it.key() + "' in " + std::string(where));
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

MethodConfig parse_method(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ConfigError, "each method must be an object");
    reject_unknown(j,
                   {"name", "kind", "constraint", "c", "c_per_region", "cross_validate", "c_grid", "folds", "regions",
                    "tree_depth"},
                   "method");
    MethodConfig m;
    m.kind = parse_method_kind(j.at("kind").get<std::string>());
    m.name = j.value("name", std::string(to_string(m.kind)));
    if (j.contains("constraint")) {
        try {
            m.constraint = parse_constraint_kind(j.at("constraint").get<std::string>());
        } catch (const Error& e) {
            throw Error(ErrorCode::ConfigError, e.what());
        }
    }
    read(j, "c", m.c);
    if (j.contains("c_per_region")) {
        for (auto it = j.at("c_per_region").begin(); it != j.at("c_per_region").end(); ++it)
            m.c_per_region[std::stoi(it.key())] = it.value().get<double>();
    }
    read(j, "cross_validate", m.cross_validate);
    read(j, "c_grid", m.c_grid);
    read(j, "folds", m.folds);
    if (j.contains("regions")) {
        const auto r = j.at("regions").get<std::string>();
        if (r == "pilot") m.regions = RegionSource::Pilot;
        else if (r == "burn_in") m.regions = RegionSource::BurnIn;
        else throw Error(ErrorCode::ConfigError, "regions must be pilot or burn_in");
    }
    read(j, "tree_depth", m.tree_depth);
    return m;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(std::string_view text) {
    ExperimentConfig cfg;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
        reject_unknown(j,
                       {"dataset", "estimand", "budgets", "burn_in", "initial_rule", "path", "error_model", "methods",
                        "trials", "rho_step", "seed", "alpha", "resample", "floor", "pilot_size"},
                       "config");
        const json& ds = j.at("dataset");
        reject_unknown(ds, {"csv", "generator", "n", "seed"}, "dataset");
        read(ds, "csv", cfg.dataset.csv);
        read(ds, "generator", cfg.dataset.generator);
        read(ds, "n", cfg.dataset.n);
        read(ds, "seed", cfg.dataset.seed);
        if (j.contains("estimand")) {
            const json& es = j.at("estimand");
            reject_unknown(es, {"kind", "coordinate", "include_intercept"}, "estimand");
            if (es.contains("kind")) cfg.estimand.kind = parse_estimand_kind(es.at("kind").get<std::string>());
            read(es, "coordinate", cfg.estimand.coordinate);
            read(es, "include_intercept", cfg.estimand.include_intercept);
        }
        cfg.budgets = j.at("budgets").get<std::vector<std::size_t>>();
        read(j, "burn_in", cfg.burn_in);
        if (j.contains("initial_rule")) cfg.initial_rule = parse_initial_rule(j.at("initial_rule").get<std::string>());
        if (j.contains("path")) cfg.path = parse_path_kind(j.at("path").get<std::string>());
        if (j.contains("error_model")) {
            const json& em = j.at("error_model");
            reject_unknown(em, {"source", "k", "bins"}, "error_model");
            if (em.contains("source")) cfg.error_model.source = parse_error_source(em.at("source").get<std::string>());
            read(em, "k", cfg.error_model.k);
            read(em, "bins", cfg.error_model.bins);
        }
        for (const json& m : j.at("methods")) cfg.methods.push_back(parse_method(m));
        read(j, "trials", cfg.trials);
        read(j, "rho_step", cfg.rho_step);
        read(j, "seed", cfg.seed);
        read(j, "alpha", cfg.alpha);
        if (j.contains("resample")) {
            const auto r = j.at("resample").get<std::string>();
            if (r == "bootstrap") cfg.resample = ResampleMode::Bootstrap;
            else if (r == "fixed") cfg.resample = ResampleMode::Fixed;
            else throw Error(ErrorCode::ConfigError, "resample must be bootstrap or fixed");
        }
        read(j, "floor", cfg.floor);
        read(j, "pilot_size", cfg.pilot_size);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, e.what());
    } catch (const Error& e) {
        if (e.category() == ErrorCategory::Config) throw Error(ErrorCode::ConfigError, e.what());
        throw;
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void ExperimentConfig::validate(std::size_t n) const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
    if (trials < 1) fail("trials must be >= 1");
    if (budgets.empty()) fail("at least one budget is required");
    for (auto b : budgets) {
        if (b < 1 || b > n) fail("budget " + std::to_string(b) + " outside [1, " + std::to_string(n) + "]");
        if (b <= burn_in && burn_in < n) fail("budget " + std::to_string(b) + " does not exceed the burn-in size");
    }
    if (burn_in > n) fail("burn-in larger than the dataset");
    if (!(rho_step > 0.0 && rho_step <= 1.0)) fail("rho_step must lie in (0, 1]");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
    if (!(floor > 0.0 && floor < 1.0)) fail("floor must lie in (0, 1)");
    if (methods.empty()) fail("at least one method is required");
    std::set<std::string> names;
    for (const auto& m : methods) {
        if (!names.insert(m.name).second) fail("duplicate method name '" + m.name + "'");
        if (m.kind != MethodKind::Robust) continue;
        if (m.constraint == ConstraintSet::Kind::StructuredL2) {
            if (m.c_per_region.empty()) fail("structured method '" + m.name + "' needs c_per_region");
            if (m.cross_validate) fail("cross-validation is not available for structured sets");
            if (m.regions == RegionSource::BurnIn && burn_in == 0) fail("burn-in regions need a burn-in");
            if (m.regions == RegionSource::Pilot && dataset.generator.empty())
                fail("pilot regions need a generator dataset");
        }
        if (m.cross_validate) {
            if (m.folds < 2) fail("folds must be >= 2");
            if (burn_in < m.folds) fail("burn-in smaller than the number of folds");
        }
        if (m.c < 0.0) fail("radius must be nonnegative");
    }
    if (error_model.source == ErrorSource::Knn || error_model.source == ErrorSource::Binned) {
        bool needs = false;
        for (const auto& m : methods)
            needs = needs || m.kind == MethodKind::Robust ||
                    (m.kind == MethodKind::Active && initial_rule == InitialRule::PropEhat);
        if (needs && burn_in == 0) fail("fitted error models need a burn-in");
    }
}

// ---------------------------------------------------------------------------
// generators

ToyRegions generate_toy_regions(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "generator needs n >= 2");
    ToyRegions toy;
    Dataset& d = toy.data;
    d.features.resize(static_cast<Eigen::Index>(n), 1);
    d.feature_names = {"x1"};
    d.predictions.assign(n, 0.0);
    d.labels.resize(n);
    d.observed.assign(n, 1);
    d.ehat2 = std::vector<double>(n);
    toy.true_e2.resize(n);
    toy.region.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = -5.0 + 10.0 * uniform01(seed, Stream::Generator, 4 * i);
        const bool hard = std::abs(x) <= 2.0;
        const double e = hard ? 1.0 + 0.5 * standard_normal(seed, Stream::Generator, 4 * i + 1)
                              : 2.0 + std::sqrt(0.05) * standard_normal(seed, Stream::Generator, 4 * i + 1);
        const double z = standard_normal(seed, Stream::Generator, 4 * i + 2);
        d.features(static_cast<Eigen::Index>(i), 0) = x;
        d.labels[i] = e * z;
        (*d.ehat2)[i] = hard ? 0.25 : 6.25;
        toy.true_e2[i] = e * e;
        toy.region[i] = hard ? kRegionOverconfident : kRegionOther;
    }
    return toy;
}

Dataset generate_gaussian_mean(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "generator needs n >= 2");
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(n), 1);
    d.feature_names = {"x1"};
    d.predictions.resize(n);
    d.labels.resize(n);
    d.observed.assign(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = standard_normal(seed, Stream::Generator, 4 * i);
        const double z = standard_normal(seed, Stream::Generator, 4 * i + 1);
        d.features(static_cast<Eigen::Index>(i), 0) = x;
        d.labels[i] = 1.0 + x + (0.3 + 0.7 * std::abs(x)) * z;
        d.predictions[i] = 1.0 + 0.8 * x;
    }
    return d;
}

Dataset generate_linear_regression(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw Error(ErrorCode::InvalidArgument, "generator needs n >= 2");
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(n), 2);
    d.feature_names = {"x1", "x2"};
    d.predictions.resize(n);
    d.labels.resize(n);
    d.observed.assign(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = standard_normal(seed, Stream::Generator, 4 * i);
        const double x2 = standard_normal(seed, Stream::Generator, 4 * i + 1);
        const double z = standard_normal(seed, Stream::Generator, 4 * i + 2);
        const auto r = static_cast<Eigen::Index>(i);
        d.features(r, 0) = x1;
        d.features(r, 1) = x2;
        d.labels[i] = 0.5 + x1 - 0.5 * x2 + (0.3 + 0.8 * std::abs(x1)) * z;
        d.predictions[i] = 0.5 + 0.9 * x1 - 0.4 * x2 + 0.3 * std::sin(2.0 * x2);
    }
    return d;
}

Dataset load_source(const DatasetSource& source) {
    if (!source.csv.empty()) {
        if (!source.generator.empty()) throw Error(ErrorCode::ConfigError, "dataset needs csv or generator, not both");
        return load_csv(source.csv);
    }
    if (source.generator == "toy_regions") return generate_toy_regions(source.n, source.seed).data;
    if (source.generator == "gaussian_mean") return generate_gaussian_mean(source.n, source.seed);
    if (source.generator == "linear_regression") return generate_linear_regression(source.n, source.seed);
    throw Error(ErrorCode::ConfigError, "unknown generator '" + source.generator + "'");
}

// ---------------------------------------------------------------------------
// planning

namespace {

std::vector<double> gather(std::span<const double> values, std::span<const std::size_t> rows) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(values[r]);
    return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
    return out;
}

// Shared per (trial, budget) work; every piece is computed on first use.
class TrialContext {
public:
    TrialContext(const ExperimentConfig& config, const Dataset& data, std::size_t budget, std::uint64_t seed)
        : config_(config), data_(data), seed_(seed), budget_(Budget::make(budget, data.size())) {
        split_ = split_burn_in(data.size(), {config.burn_in, seed});
        std::vector<std::size_t> missing;
        for (auto u : split_.burn_in)
            if (!data.observed[u]) missing.push_back(u);
        if (!missing.empty()) {
            std::string rows;
            for (std::size_t k = 0; k < missing.size(); ++k) rows += (k ? "," : "") + std::to_string(missing[k]);
            throw Error(ErrorCode::MissingBurnInLabels, "burn-in rows lack labels: " + rows);
        }
        const std::size_t b = split_.burn_in.size();
        if (b >= budget && b < data.size())
            throw Error(ErrorCode::BurnInTooLarge, "burn-in uses the whole budget");
        if (b < data.size()) remainder_budget_ = Budget::make(budget - b, data.size() - b);
    }

    const BurnInSplit& split() const { return split_; }
    const Budget& budget() const { return budget_; }
    bool all_burn_in() const { return split_.remainder.empty(); }

    // Base-scale squared residuals of the burn-in units.
    const std::vector<double>& burn_in_r2() {
        if (!burn_in_r2_) {
            std::vector<double> r2;
            for (auto u : split_.burn_in) {
                const double r = data_.labels[u] - data_.predictions[u];
                r2.push_back(r * r);
            }
            burn_in_r2_ = std::move(r2);
        }
        return *burn_in_r2_;
    }

    // Per-unit factor (x_i' h)^2 taking base errors to the coordinate scale.
    const std::vector<double>& scale() {
        if (!scale_) {
            std::vector<double> s(data_.size(), 1.0);
            if (config_.estimand.kind != EstimandKind::Mean) {
                const Eigen::VectorXd theta = fit_pilot_theta(config_.estimand, data_, split_.burn_in);
                const HessianColumn h =
                    estimate_hessian_inverse_column(config_.estimand, data_, theta, config_.estimand.coordinate);
                const Eigen::VectorXd proj = design_matrix(data_, config_.estimand) * h.h;
                for (std::size_t i = 0; i < s.size(); ++i) s[i] = proj[static_cast<Eigen::Index>(i)] * proj[static_cast<Eigen::Index>(i)];
            }
            scale_ = std::move(s);
        }
        return *scale_;
    }

    // Base-scale error estimate over every unit, fit on the given burn-in positions.
    ErrorEstimate fit_base(std::span<const std::size_t> positions) {
        const auto& em = config_.error_model;
        switch (em.source) {
        case ErrorSource::Knn: {
            std::vector<std::size_t> rows;
            for (auto p : positions) rows.push_back(split_.burn_in[p]);
            const std::vector<double> r2 = gather(burn_in_r2(), positions);
            const std::size_t k = em.k ? em.k : default_knn_k(rows.size());
            return fit_knn_error(gather_rows(data_.features, rows), r2, std::min(k, rows.size()), data_.features);
        }
        case ErrorSource::Binned: {
            if (!data_.confidence) throw Error(ErrorCode::MissingColumn, "binned errors need a confidence column");
            std::vector<std::size_t> rows;
            for (auto p : positions) rows.push_back(split_.burn_in[p]);
            return fit_binned_error(gather(*data_.confidence, rows), gather(burn_in_r2(), positions), em.bins,
                                    *data_.confidence);
        }
        case ErrorSource::ExternalColumn:
            if (!data_.ehat2) throw Error(ErrorCode::MissingColumn, "external errors need an ehat2 column");
            return external_error(*data_.ehat2);
        case ErrorSource::AnalyticBinary:
            return binary_error(data_.predictions);
        }
        throw Error(ErrorCode::ConfigError, "unknown error source");
    }

    ErrorEstimate fit_scaled(std::span<const std::size_t> positions) {
        ErrorEstimate e = fit_base(positions);
        const auto& s = scale();
        for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] *= s[i];
        return e;
    }

    std::vector<std::size_t> all_positions() const {
        std::vector<std::size_t> p(split_.burn_in.size());
        for (std::size_t k = 0; k < p.size(); ++k) p[k] = k;
        return p;
    }

    const ErrorEstimate& base_error() {
        if (!base_error_) base_error_ = fit_base(all_positions());
        return *base_error_;
    }

    const ErrorEstimate& error() {
        if (!error_) {
            ErrorEstimate e = base_error();
            const auto& s = scale();
            for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] *= s[i];
            error_ = std::move(e);
        }
        return *error_;
    }

    // Error-scale squared residuals of the burn-in units.
    std::vector<double> burn_in_r2_scaled() {
        std::vector<double> r2 = burn_in_r2();
        const auto& s = scale();
        for (std::size_t k = 0; k < r2.size(); ++k) r2[k] *= s[split_.burn_in[k]];
        return r2;
    }

    std::vector<double> initial_weights(std::span<const std::size_t> units) {
        std::vector<double> w;
        w.reserve(units.size());
        switch (config_.initial_rule) {
        case InitialRule::Uniform:
            w.assign(units.size(), 1.0);
            break;
        case InitialRule::PropEhat: {
            const auto& e = error().values;
            for (auto u : units) w.push_back(std::sqrt(e[u]));
            break;
        }
        case InitialRule::PropUncertainty:
            for (auto u : units) {
                const double f = data_.predictions[u];
                if (!(f >= 0.0 && f <= 1.0))
                    throw Error(ErrorCode::InvalidArgument, "uncertainty rule needs predictions in [0, 1]");
                w.push_back(std::min(f, 1.0 - f));
            }
            break;
        case InitialRule::PropOneMinusConf:
            if (!data_.confidence) throw Error(ErrorCode::MissingColumn, "confidence rule needs a conf column");
            for (auto u : units) w.push_back(std::clamp(1.0 - (*data_.confidence)[u], 0.0, 1.0));
            break;
        }
        return w;
    }

    const SamplingRule& initial_rule() {
        if (!initial_) initial_ = normalize_to_budget(initial_weights(split_.remainder), *remainder_budget_, config_.floor);
        return *initial_;
    }

    const PathTable& table() {
        if (!table_) table_ = PathTable::build(config_.path, initial_rule(), RhoGrid::make(config_.rho_step));
        return *table_;
    }

    std::vector<double> remainder_error() { return gather(error().values, split_.remainder); }

    SamplingRule uniform_remainder() const { return uniform_rule(*remainder_budget_, config_.floor); }

    const SamplingRule& remainder_rule(double rho) {
        const PathTable& t = table();
        for (std::size_t k = 0; k < t.rhos.size(); ++k)
            if (t.rhos[k] == rho) return t.rules[k];
        extra_ = path_eval(config_.path, initial_rule(), rho);
        return extra_;
    }

    // Labeling probabilities: burn-in units were labeled with certainty.
    SamplingRule labeling(const SamplingRule& remainder) const {
        SamplingRule full;
        full.floor = config_.floor;
        full.budget = budget_;
        full.probs.assign(data_.size(), 1.0);
        for (std::size_t k = 0; k < split_.remainder.size(); ++k) full.probs[split_.remainder[k]] = remainder.probs[k];
        return full;
    }

    // Estimator weights: burn-in units at n_b/n and the remainder rule scaled to
    // mean n_b/n, i.e. the burn-in and remainder estimates mixed in proportion
    // b : (n_b - b).
    SamplingRule weights(const SamplingRule& remainder) const {
        SamplingRule full = labeling(remainder);
        if (split_.burn_in.empty()) return full;
        const double rate = budget_.rate();
        const double scale = rate / remainder_budget_->rate();
        for (auto u : split_.burn_in) full.probs[u] = rate;
        for (std::size_t k = 0; k < split_.remainder.size(); ++k)
            full.probs[split_.remainder[k]] = remainder.probs[k] * scale;
        full.floor = std::min(config_.floor, rate);
        return full;
    }

    const ExperimentConfig& config() const { return config_; }
    const Dataset& data() const { return data_; }
    std::uint64_t seed() const { return seed_; }

private:
    const ExperimentConfig& config_;
    const Dataset& data_;
    std::uint64_t seed_;
    Budget budget_;
    BurnInSplit split_;
    std::optional<Budget> remainder_budget_;
    std::optional<std::vector<double>> burn_in_r2_;
    std::optional<std::vector<double>> scale_;
    std::optional<ErrorEstimate> base_error_;
    std::optional<ErrorEstimate> error_;
    std::optional<SamplingRule> initial_;
    std::optional<PathTable> table_;
    SamplingRule extra_;
};

TrialPlan plan_in_context(TrialContext& ctx, const MethodConfig& method, const RegionTree* pilot_regions) {
    const ExperimentConfig& config = ctx.config();
    TrialPlan plan;
    plan.split = ctx.split();
    if (ctx.all_burn_in()) {
        plan.rule.probs.assign(ctx.data().size(), 1.0);
        plan.rule.budget = ctx.budget();
        plan.rule.floor = config.floor;
        plan.labeling = plan.rule;
        plan.draw = draw_labels(plan.rule, ctx.seed());
        return plan;
    }
    switch (method.kind) {
    case MethodKind::Uniform:
        plan.rho = 1.0;
        break;
    case MethodKind::Active:
        plan.rho = 0.0;
        break;
    case MethodKind::Robust: {
        ConstraintSet cset;
        cset.kind = method.constraint;
        cset.c = method.c;
        if (method.constraint == ConstraintSet::Kind::StructuredL2) {
            std::vector<int> labels;
            if (method.regions == RegionSource::Pilot) {
                if (!pilot_regions) throw Error(ErrorCode::ConfigError, "pilot regions were not learned");
                labels = pilot_regions->predict(ctx.data().features);
            } else {
                const auto& burn = ctx.split().burn_in;
                labels = learn_regions(gather_rows(ctx.data().features, burn), ctx.burn_in_r2(),
                                       gather(ctx.base_error().values, burn), method.tree_depth, ctx.data().features);
            }
            cset = ConstraintSet::structured(std::move(labels), method.c_per_region).restricted(ctx.split().remainder);
            for (const auto& [region, radius] : method.c_per_region) cset.c = std::max(cset.c, radius);
        } else if (method.cross_validate) {
            const ErrorEstimate& e = ctx.error();
            std::vector<std::size_t> all(ctx.data().size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            const SamplingRule pi_full =
                normalize_to_budget(ctx.initial_weights(all), ctx.budget(), config.floor);
            const std::vector<double> grid = method.c_grid.empty() ? default_c_grid(e.values) : method.c_grid;
            const ErrorRefit refit = [&ctx](std::span<const std::size_t> train) { return ctx.fit_scaled(train); };
            plan.cv = cross_validate_c(ctx.split().burn_in, ctx.burn_in_r2_scaled(), refit, pi_full, config.path,
                                       grid, method.folds, RhoGrid::make(config.rho_step), method.constraint);
            cset.c = plan.cv->c_star;
        }
        plan.c = cset.c;
        ErrorEstimate rem;
        rem.values = ctx.remainder_error();
        rem.source = ctx.error().source;
        RhoSolution sol = solve_rho(ctx.table(), rem, cset);
        plan.rho = sol.rho;
        plan.trace = std::move(sol.trace);
        break;
    }
    }
    const SamplingRule remainder = method.kind == MethodKind::Uniform  ? ctx.uniform_remainder()
                                   : method.kind == MethodKind::Active ? ctx.initial_rule()
                                                                       : ctx.remainder_rule(plan.rho);
    plan.labeling = ctx.labeling(remainder);
    plan.rule = ctx.weights(remainder);
    plan.draw = draw_labels(plan.labeling, ctx.seed());
    return plan;
}

} // namespace

std::optional<RegionTree> learn_pilot_regions(const ExperimentConfig& config, const MethodConfig& method) {
    if (method.kind != MethodKind::Robust || method.constraint != ConstraintSet::Kind::StructuredL2 ||
        method.regions != RegionSource::Pilot)
        return std::nullopt;
    if (config.dataset.generator.empty()) throw Error(ErrorCode::ConfigError, "pilot regions need a generator");
    DatasetSource src = config.dataset;
    src.n = config.pilot_size;
    src.seed = derive_seed(config.dataset.seed, static_cast<std::uint64_t>(Stream::Pilot));
    const Dataset pilot = load_source(src);
    std::vector<double> r2(pilot.size());
    for (std::size_t i = 0; i < pilot.size(); ++i) {
        const double r = pilot.labels[i] - pilot.predictions[i];
        r2[i] = r * r;
    }
    std::vector<double> ehat2;
    switch (config.error_model.source) {
    case ErrorSource::ExternalColumn:
        if (!pilot.ehat2) throw Error(ErrorCode::ConfigError, "pilot data has no ehat2 column");
        ehat2 = external_error(*pilot.ehat2).values;
        break;
    case ErrorSource::AnalyticBinary:
        ehat2 = binary_error(pilot.predictions).values;
        break;
    default:
        throw Error(ErrorCode::ConfigError, "pilot regions need external or analytic error estimates");
    }
    return RegionTree::fit(pilot.features, r2, ehat2, method.tree_depth);
}

TrialPlan plan_trial(const ExperimentConfig& config, const Dataset& data, std::size_t budget,
                     const MethodConfig& method, std::uint64_t seed, const RegionTree* pilot_regions) {
    TrialContext ctx(config, data, budget, seed);
    return plan_in_context(ctx, method, pilot_regions);
}

// ---------------------------------------------------------------------------
// simulation

unsigned default_thread_count() {
    if (const char* env = std::getenv("ROBUST_AI_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

std::vector<std::size_t> bootstrap_rows(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> rows(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto r = static_cast<std::size_t>(uniform01(seed, Stream::Resample, k) * static_cast<double>(n));
        rows[k] = std::min(r, n - 1);
    }
    return rows;
}

} // namespace

std::vector<TrialRecord> run_trials(const ExperimentConfig& config, const Dataset& base, unsigned threads) {
    base.validate();
    if (!base.fully_labeled()) throw Error(ErrorCode::InvalidArgument, "simulation needs a fully labeled dataset");
    config.validate(base.size());
    config.estimand.validate(base.dim());

    std::vector<std::optional<RegionTree>> regions;
    for (const auto& m : config.methods) regions.push_back(learn_pilot_regions(config, m));

    const std::size_t T = config.trials;
    const std::size_t nb = config.budgets.size();
    const std::size_t nm = config.methods.size();
    std::vector<TrialRecord> records(nm * nb * T);

    auto run_one = [&](std::size_t t) {
        const std::uint64_t seed = trial_seed(config.seed, t);
        Dataset resampled;
        if (config.resample == ResampleMode::Bootstrap) resampled = base.subset(bootstrap_rows(base.size(), seed));
        const Dataset& data = config.resample == ResampleMode::Bootstrap ? resampled : base;
        for (std::size_t bi = 0; bi < nb; ++bi) {
            std::optional<TrialContext> ctx;
            std::string ctx_error;
            try {
                ctx.emplace(config, data, config.budgets[bi], seed);
            } catch (const std::exception& e) {
                ctx_error = e.what();
            }
            for (std::size_t mi = 0; mi < nm; ++mi) {
                const MethodConfig& method = config.methods[mi];
                TrialRecord& rec = records[(mi * nb + bi) * T + t];
                rec.method = method.name;
                rec.budget = config.budgets[bi];
                rec.trial = t;
                try {
                    if (!ctx) throw std::runtime_error(ctx_error);
                    const TrialPlan plan = plan_in_context(*ctx, method, regions[mi] ? &*regions[mi] : nullptr);
                    const Dataset observed = data.masked(plan.draw.xi);
                    const EstimateResult est = estimate_m(config.estimand, observed, plan.draw, plan.rule, config.alpha);
                    rec.estimate = est.estimate;
                    rec.ci_lo = est.ci_lo;
                    rec.ci_hi = est.ci_hi;
                    rec.sigma2_hat = est.sigma2_hat;
                    rec.n_labeled = est.n_labeled;
                    rec.rho = plan.rho;
                    rec.c = plan.c;
                } catch (const std::exception& e) {
                    rec.failed = true;
                    rec.error = e.what();
                }
            }
        }
    };

    if (threads == 0) threads = default_thread_count();
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, T));
    if (threads <= 1) {
        for (std::size_t t = 0; t < T; ++t) run_one(t);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t t = next++; t < T; t = next++) run_one(t);
            });
        for (auto& th : pool) th.join();
    }
    return records;
}

namespace {

double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

} // namespace

EssCurve EssCurve::from_data(const Dataset& data, const EstimandSpec& spec) {
    if (!data.fully_labeled()) throw Error(ErrorCode::InvalidArgument, "the variance curve needs every label");
    const std::size_t n = data.size();
    if (n < 2) throw Error(ErrorCode::EmptyDataset, "the variance curve needs n >= 2");
    std::vector<double> influence(n);
    std::vector<double> correction(n);
    EssCurve curve;
    curve.n = n;
    if (spec.kind == EstimandKind::Mean) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            influence[i] = data.labels[i];
            correction[i] = data.labels[i] - data.predictions[i];
            total += data.labels[i];
        }
        curve.theta_star = total / static_cast<double>(n);
    } else {
        spec.validate(data.dim());
        const Eigen::MatrixXd x = design_matrix(data, spec);
        const GlmFit fit = fit_pseudo_outcome(spec.kind, x, data.labels);
        curve.theta_star = fit.theta[static_cast<Eigen::Index>(spec.coordinate)];
        const HessianColumn h = estimate_hessian_inverse_column(spec, data, fit.theta, spec.coordinate);
        const LossFamily family(spec.kind);
        const Eigen::VectorXd eta = x * fit.theta;
        const Eigen::VectorXd proj = x * h.h;
        for (std::size_t i = 0; i < n; ++i) {
            const auto k = static_cast<Eigen::Index>(i);
            influence[i] = family.residual(eta[k], data.labels[i]) * proj[k];
            correction[i] = (data.predictions[i] - data.labels[i]) * proj[k];
        }
    }
    double b = 0.0;
    for (double v : correction) b += v * v;
    b /= static_cast<double>(n);
    curve.b = b;
    curve.a = (sample_variance(influence) - b) / static_cast<double>(n);
    return curve;
}

double EssCurve::invert(double v_hat) const {
    if (!(v_hat > 0.0)) throw Error(ErrorCode::NonpositiveVariance, "variance must be positive");
    if (v_hat <= a) return std::numeric_limits<double>::infinity();
    return b / (v_hat - a);
}

double effective_sample_size(double v_hat, const Dataset& data, const EstimandSpec& spec) {
    return EssCurve::from_data(data, spec).invert(v_hat);
}

CoverageResult coverage(const std::vector<TrialRecord>& records, double theta_star) {
    CoverageResult out;
    for (const auto& r : records) {
        if (r.failed) {
            ++out.failed;
            continue;
        }
        ++out.counted;
        if (r.ci_lo <= theta_star && theta_star <= r.ci_hi) ++out.covered;
    }
    out.proportion = out.counted ? static_cast<double>(out.covered) / static_cast<double>(out.counted) : 0.0;
    return out;
}

std::vector<MetricsSummary> summarize(const ExperimentConfig& config, const std::vector<TrialRecord>& records,
                                      const EssCurve& curve) {
    const double cap = 10.0 * static_cast<double>(curve.n);
    auto capped = [&](double v) {
        if (!(v > 0.0)) return cap;
        return std::min(cap, curve.invert(v));
    };
    std::vector<MetricsSummary> out;
    for (const auto& method : config.methods) {
        for (auto budget : config.budgets) {
            std::vector<TrialRecord> cell;
            for (const auto& r : records)
                if (r.method == method.name && r.budget == budget) cell.push_back(r);
            MetricsSummary s;
            s.method = method.name;
            s.budget = budget;
            s.trials = cell.size();
            std::vector<double> est, ess;
            double rho = 0.0, c = 0.0, labeled = 0.0;
            for (const auto& r : cell) {
                if (r.failed) {
                    ++s.failed;
                    continue;
                }
                est.push_back(r.estimate);
                ess.push_back(capped(r.sigma2_hat / static_cast<double>(curve.n)));
                rho += r.rho;
                c += r.c;
                labeled += static_cast<double>(r.n_labeled);
            }
            const double ok = static_cast<double>(est.size());
            if (!est.empty()) {
                double m = 0.0;
                for (double v : est) m += v;
                s.mean_estimate = m / ok;
                s.v_hat = sample_variance(est);
                s.sd_estimate = std::sqrt(s.v_hat);
                s.n_eff_empirical = est.size() > 1 ? capped(s.v_hat) : std::numeric_limits<double>::quiet_NaN();
                double e = 0.0;
                for (double v : ess) e += v;
                s.n_eff = e / ok;
                s.n_eff_std = ess.size() > 1 ? std::sqrt(sample_variance(ess)) : 0.0;
                s.mean_rho = rho / ok;
                s.mean_c = c / ok;
                s.mean_n_labeled = labeled / ok;
            }
            s.coverage = coverage(cell, curve.theta_star).proportion;
            out.push_back(s);
        }
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& base, unsigned threads) {
    ExperimentResult result;
    result.records = run_trials(config, base, threads);
    result.curve = EssCurve::from_data(base, config.estimand);
    result.summary = summarize(config, result.records, result.curve);
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config, unsigned threads) {
    return run_experiment(config, load_source(config.dataset), threads);
}

// ---------------------------------------------------------------------------
// misspecification demo

PerturbationReport perturbation_demo(std::uint64_t seed, double c) {
    constexpr std::size_t n = 20;
    PerturbationReport rep;
    rep.c = c;
    std::vector<double> ehat(n);
    rep.ehat2.resize(n);
    rep.e2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = 5.0 + 0.5 * standard_normal(seed, Stream::Generator, 2 * i);
        ehat[i] = std::abs(3.0 + 0.5 * standard_normal(seed, Stream::Generator, 2 * i + 1));
        rep.e2[i] = e * e;
        rep.ehat2[i] = ehat[i] * ehat[i];
    }
    const SamplingRule pi = normalize_to_budget(ehat, Budget::make(10, n));
    const SamplingRule rule = path_eval(PathKind::Linear, pi, rep.rho);
    const InnerMax im = inner_max(rep.ehat2, rule.probs, ConstraintSet::l2(c));
    rep.perturbed.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        rep.perturbed[i] = rep.ehat2[i] + im.eps[i];
        rep.gap_before += std::abs(rep.ehat2[i] - rep.e2[i]) / static_cast<double>(n);
        rep.gap_after += std::abs(rep.perturbed[i] - rep.e2[i]) / static_cast<double>(n);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// reports

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

std::string trials_csv(const std::vector<TrialRecord>& records) {
    std::string out = "method,budget,trial,estimate,ci_lo,ci_hi,n_labeled,rho,c,sigma2_hat,failed\n";
    for (const auto& r : records) {
        out += r.method + "," + std::to_string(r.budget) + "," + std::to_string(r.trial) + "," + fmt(r.estimate) + "," +
               fmt(r.ci_lo) + "," + fmt(r.ci_hi) + "," + std::to_string(r.n_labeled) + "," + fmt(r.rho) + "," +
               fmt(r.c) + "," + fmt(r.sigma2_hat) + "," + (r.failed ? "1" : "0") + "\n";
    }
    return out;
}

std::string summary_json(const ExperimentConfig& config, const ExperimentResult& result) {
    json j;
    j["trials"] = config.trials;
    j["seed"] = config.seed;
    j["path"] = std::string(to_string(config.path));
    j["estimand"] = std::string(to_string(config.estimand.kind));
    j["coordinate"] = config.estimand.coordinate;
    j["theta_star"] = result.curve.theta_star;
    j["variance_curve"] = {{"a", result.curve.a}, {"b", result.curve.b}, {"n", result.curve.n}};
    json cells = json::array();
    for (const auto& s : result.summary) {
        cells.push_back({
            {"method", s.method},
            {"budget", s.budget},
            {"trials", s.trials},
            {"failed", s.failed},
            {"mean_estimate", finite_or_null(s.mean_estimate)},
            {"sd_estimate", finite_or_null(s.sd_estimate)},
            {"v_hat", finite_or_null(s.v_hat)},
            {"n_eff", finite_or_null(s.n_eff)},
            {"n_eff_std", finite_or_null(s.n_eff_std)},
            {"n_eff_empirical", finite_or_null(s.n_eff_empirical)},
            {"coverage", s.coverage},
            {"mean_rho", s.mean_rho},
            {"mean_c", s.mean_c},
            {"mean_n_labeled", s.mean_n_labeled},
        });
    }
    j["cells"] = std::move(cells);
    return j.dump(2) + "\n";
}

std::string metric_svg(const std::vector<MetricsSummary>& summary, std::string_view metric) {
    if (metric != "n_eff" && metric != "coverage")
        throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(metric) + "'");
    struct Point {
        double x, y, sd;
    };
    std::vector<std::string> methods;
    for (const auto& s : summary)
        if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) methods.push_back(s.method);
    std::vector<std::vector<Point>> series(methods.size());
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : summary) {
        const auto k = static_cast<std::size_t>(std::find(methods.begin(), methods.end(), s.method) - methods.begin());
        Point p{static_cast<double>(s.budget), 0.0, 0.0};
        if (metric == "n_eff") {
            p.y = s.n_eff;
            p.sd = s.n_eff_std;
        } else {
            const double m = static_cast<double>(s.trials - s.failed);
            p.y = s.coverage;
            p.sd = m > 0 ? std::sqrt(s.coverage * (1.0 - s.coverage) / m) : 0.0;
        }
        if (!std::isfinite(p.y)) continue;
        if (!std::isfinite(p.sd)) p.sd = 0.0;
        series[k].push_back(p);
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y - p.sd);
        ymax = std::max(ymax, p.y + p.sd);
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmin -= 1, xmax += 1;
    if (ymax == ymin) ymin -= 1, ymax += 1;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    constexpr double W = 640, H = 400, L = 70, R = 150, T = 30, B = 50;
    auto sx = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto sy = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(2);
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
      << ' ' << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">budget</text>\n"
      << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 15 " << (T + H - B) / 2
      << ")\" text-anchor=\"middle\">" << metric << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = ymin + (ymax - ymin) * k / 4.0;
        const double xv = xmin + (xmax - xmin) * k / 4.0;
        o << "<text x=\"" << L - 5 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
          << fmt(std::round(yv * 1000) / 1000) << "</text>\n";
        o << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 15 << "\" text-anchor=\"middle\" font-size=\"10\">"
          << fmt(std::round(xv)) << "</text>\n";
    }
    for (std::size_t k = 0; k < methods.size(); ++k) {
        auto pts = series[k];
        std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
        const char* color = colors[k % 6];
        o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
        for (const auto& p : pts) o << sx(p.x) << ',' << sy(p.y + p.sd) << ' ';
        for (auto it = pts.rbegin(); it != pts.rend(); ++it) o << sx(it->x) << ',' << sy(it->y - it->sd) << ' ';
        o << "\"/>\n";
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : pts) o << sx(p.x) << ',' << sy(p.y) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 15 + 18.0 * static_cast<double>(k) << "\" fill=\"" << color
          << "\" font-size=\"12\">" << methods[k] << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void emit_report(const ExperimentConfig& config, const ExperimentResult& result, const std::filesystem::path& dir,
                 const ReportOptions& options) {
    if (result.summary.empty()) throw Error(ErrorCode::InvalidArgument, "nothing to report: empty summary");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    write_file_atomic(dir / "summary.json", summary_json(config, result));
    write_file_atomic(dir / "trials.csv", trials_csv(result.records));
    if (options.svg) {
        write_file_atomic(dir / "ess.svg", metric_svg(result.summary, "n_eff"));
        write_file_atomic(dir / "coverage.svg", metric_svg(result.summary, "coverage"));
    }
}

} // namespace robust_ai
