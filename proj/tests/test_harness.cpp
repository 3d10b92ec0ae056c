#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "robust_ai/error.hpp"
#include "robust_ai/harness.hpp"
#include "test_support.hpp"

using namespace robust_ai;

namespace {

ExperimentConfig gaussian_config(std::size_t trials) {
    ExperimentConfig cfg;
    cfg.dataset.generator = "gaussian_mean";
    cfg.dataset.n = 1000;
    cfg.dataset.seed = 17;
    cfg.budgets = {150};
    cfg.burn_in = 50;
    cfg.error_model.source = ErrorSource::Knn;
    cfg.trials = trials;
    cfg.seed = 99;
    MethodConfig uniform;
    uniform.name = "uniform";
    uniform.kind = MethodKind::Uniform;
    MethodConfig active;
    active.name = "active";
    active.kind = MethodKind::Active;
    MethodConfig robust;
    robust.name = "robust";
    robust.kind = MethodKind::Robust;
    robust.constraint = ConstraintSet::Kind::L2;
    robust.c = 1.0;
    cfg.methods = {uniform, active, robust};
    return cfg;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t k = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++k;
    return k;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0u);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t k = 0; k < idx.size();) {
            std::size_t m = k;
            while (m + 1 < idx.size() && v[idx[m + 1]] == v[idx[k]]) ++m;
            for (std::size_t t = k; t <= m; ++t) r[idx[t]] = 0.5 * static_cast<double>(k + m);
            k = m + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

} // namespace

TEST(Toy, RegionsAndEstimates) {
    const ToyRegions toy = generate_toy_regions(100000, 5);
    std::size_t hard = 0;
    double e2_hard = 0, e2_easy = 0;
    for (std::size_t i = 0; i < toy.data.size(); ++i) {
        const double x = toy.data.features(static_cast<Eigen::Index>(i), 0);
        ASSERT_GE(x, -5.0);
        ASSERT_LT(x, 5.0);
        const bool in_hard = std::abs(x) <= 2.0;
        ASSERT_EQ(toy.region[i], in_hard ? kRegionOverconfident : kRegionOther);
        ASSERT_EQ((*toy.data.ehat2)[i], in_hard ? 0.25 : 6.25);
        ASSERT_EQ(toy.data.predictions[i], 0.0);
        hard += in_hard;
        (in_hard ? e2_hard : e2_easy) += toy.true_e2[i];
    }
    const double p = static_cast<double>(hard) / 1e5;
    EXPECT_NEAR(p, 0.4, 5.0 * std::sqrt(0.24 / 1e5));
    // e ~ N(1, 0.25) in the hard region and N(2, 0.05) elsewhere.
    EXPECT_NEAR(e2_hard / static_cast<double>(hard), 1.25, 0.02);
    EXPECT_NEAR(e2_easy / static_cast<double>(1e5 - hard), 4.05, 0.02);
}

TEST(Generators, DeterministicAndDistinct) {
    const Dataset a = generate_gaussian_mean(50, 1), b = generate_gaussian_mean(50, 1), c = generate_gaussian_mean(50, 2);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_NE(a.labels, c.labels);
    EXPECT_EQ(generate_linear_regression(30, 4).dim(), 2u);
    EXPECT_THROW(load_source({"", "unknown", 10, 0}), Error);
}

TEST(EssCurve, SelfInversion) {
    const Dataset d = generate_gaussian_mean(2000, 3);
    const EssCurve curve = EssCurve::from_data(d);
    EXPECT_GT(curve.b, 0.0);
    EXPECT_NEAR(curve.invert(curve.variance(300)), 300.0, 1e-9);
    EXPECT_NEAR(curve.invert(curve.variance(600)), 600.0, 1e-9);
    EXPECT_NEAR(effective_sample_size(curve.variance(450), d), 450.0, 1e-9);
    if (curve.a > 0) EXPECT_TRUE(std::isinf(curve.invert(curve.a)));
    EXPECT_THROW(curve.invert(0.0), Error);
}

TEST(EssCurve, MeanTermsByHand) {
    const Dataset d = test_util::mean_dataset({0, 0, 0, 0}, {1, -1, 3, -3});
    const EssCurve curve = EssCurve::from_data(d);
    // var(Y) = 20/3, mean residual^2 = 5.
    EXPECT_NEAR(curve.b, 5.0, 1e-15);
    EXPECT_NEAR(curve.a, (20.0 / 3.0 - 5.0) / 4.0, 1e-15);
    EXPECT_EQ(curve.theta_star, 0.0);
}

TEST(EssCurve, RegressionCoordinate) {
    const Dataset d = generate_linear_regression(1500, 8);
    const EssCurve curve = EssCurve::from_data(d, {EstimandKind::LinearRegression, 1, true});
    EXPECT_GT(curve.b, 0.0);
    EXPECT_NEAR(curve.theta_star, 1.0, 0.15);
    EXPECT_NEAR(curve.invert(curve.variance(200)), 200.0, 1e-8);
}

TEST(Coverage, TrivialCases) {
    std::vector<TrialRecord> wide(10), narrow(10);
    for (auto& r : wide) {
        r.estimate = 1.0;
        r.ci_lo = -1e300;
        r.ci_hi = 1e300;
    }
    for (auto& r : narrow) r.estimate = r.ci_lo = r.ci_hi = 1.0;
    EXPECT_EQ(coverage(wide, 0.3).proportion, 1.0);
    EXPECT_EQ(coverage(narrow, 0.3).proportion, 0.0);
    narrow[0].failed = true;
    const CoverageResult c = coverage(narrow, 1.0);
    EXPECT_EQ(c.failed, 1u);
    EXPECT_EQ(c.counted, 9u);
    EXPECT_EQ(c.proportion, 1.0);
}

TEST(Config, ParsesShippedConfigs) {
    for (const char* name : {"toy_regions.json", "gaussian_mean.json", "linear_regression.json"}) {
        const ExperimentConfig cfg = ExperimentConfig::load(std::filesystem::path(ROBUST_AI_CONFIG_DIR) / name);
        EXPECT_NO_THROW(cfg.validate(cfg.dataset.n)) << name;
        EXPECT_EQ(cfg.trials, 500u) << name;
    }
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    auto code = [](const std::string& text) {
        try {
            ExperimentConfig::from_json(text);
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::IoError;
    };
    const std::string base = R"("dataset":{"generator":"gaussian_mean","n":100},"budgets":[10],"methods":[{"name":"u","kind":"uniform"}])";
    EXPECT_EQ(code("{" + base + R"(,"tirals":5})"), ErrorCode::ConfigError);
    EXPECT_EQ(code("{" + base + R"(,"path":"spiral"})"), ErrorCode::ConfigError);
    EXPECT_EQ(code("{" + base + R"(,"resample":"jackknife"})"), ErrorCode::ConfigError);
    EXPECT_EQ(code("not json"), ErrorCode::ConfigError);
    const ExperimentConfig ok = ExperimentConfig::from_json("{" + base + "}");
    EXPECT_EQ(ok.budgets, std::vector<std::size_t>{10});
    ExperimentConfig bad = ok;
    bad.budgets = {200};
    EXPECT_THROW(bad.validate(100), Error);
    bad = ok;
    bad.trials = 0;
    EXPECT_THROW(bad.validate(100), Error);
}

TEST(Plan, UniformMethodGivesConstantRule) {
    const ExperimentConfig cfg = gaussian_config(1);
    const Dataset d = load_source(cfg.dataset);
    const TrialPlan plan = plan_trial(cfg, d, 150, cfg.methods[0], 7);
    for (double p : plan.rule.probs) EXPECT_NEAR(p, 0.15, 1e-12);
    EXPECT_EQ(plan.split.burn_in.size(), 50u);
    for (auto i : plan.split.burn_in) {
        EXPECT_EQ(plan.labeling.probs[i], 1.0);
        EXPECT_EQ(plan.draw.xi[i], 1);
    }
    EXPECT_NEAR(plan.rule.mean(), 0.15, 1e-12);
    EXPECT_NEAR(plan.labeling.mean(), 0.15, 1e-12);
}

TEST(Plan, ActiveRuleKeepsBudget) {
    const ExperimentConfig cfg = gaussian_config(1);
    const Dataset d = load_source(cfg.dataset);
    for (std::size_t m = 1; m < cfg.methods.size(); ++m) {
        const TrialPlan plan = plan_trial(cfg, d, 150, cfg.methods[m], 7);
        EXPECT_NEAR(plan.labeling.mean(), 0.15, 1e-9);
        EXPECT_NEAR(plan.rule.mean(), 0.15, 1e-9);
        EXPECT_GE(plan.rho, 0.0);
        EXPECT_LE(plan.rho, 1.0);
    }
}

TEST(Plan, MissingBurnInLabels) {
    ExperimentConfig cfg = gaussian_config(1);
    Dataset d = load_source(cfg.dataset);
    d.observed.assign(d.size(), 0);
    try {
        plan_trial(cfg, d, 150, cfg.methods[1], 7);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingBurnInLabels);
    }
}

TEST(RunTrials, SingleUniformTrial) {
    ExperimentConfig cfg = gaussian_config(1);
    cfg.methods.resize(1);
    const auto records = run_trials(cfg, load_source(cfg.dataset), 1);
    ASSERT_EQ(records.size(), 1u);
    EXPECT_FALSE(records[0].failed);
    EXPECT_EQ(records[0].rho, 1.0);
}

TEST(RunTrials, DeterministicAcrossThreadCounts) {
    const ExperimentConfig cfg = gaussian_config(12);
    const Dataset base = load_source(cfg.dataset);
    const auto a = run_trials(cfg, base, 1);
    const auto b = run_trials(cfg, base, 1);
    const auto c = run_trials(cfg, base, 3);
    EXPECT_EQ(trials_csv(a), trials_csv(b));
    EXPECT_EQ(trials_csv(a), trials_csv(c));
    ASSERT_EQ(a.size(), 36u);
    EXPECT_EQ(a[0].method, "uniform");
    EXPECT_EQ(a[12].method, "active");
    EXPECT_EQ(a[13].trial, 1u);
}

TEST(RunTrials, PairedSeedsAcrossMethods) {
    ExperimentConfig cfg = gaussian_config(5);
    cfg.methods = {cfg.methods[0], cfg.methods[0]};
    cfg.methods[1].name = "uniform_copy";
    const auto records = run_trials(cfg, load_source(cfg.dataset), 1);
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(records[t].estimate, records[5 + t].estimate);
}

TEST(RunTrials, CompositeBurnInEstimatorIsUnbiased) {
    ExperimentConfig cfg = gaussian_config(3000);
    cfg.dataset.n = 400;
    cfg.budgets = {60};
    cfg.burn_in = 20;
    cfg.resample = ResampleMode::Fixed;
    cfg.methods = {cfg.methods[1]};
    const Dataset base = load_source(cfg.dataset);
    const auto records = run_trials(cfg, base, 0);
    double sum = 0, sum2 = 0;
    for (const auto& r : records) {
        ASSERT_FALSE(r.failed) << r.error;
        sum += r.estimate;
        sum2 += r.estimate * r.estimate;
    }
    const double t = static_cast<double>(records.size());
    const double mean = sum / t;
    const double sd = std::sqrt((sum2 / t - mean * mean) / t);
    double truth = 0;
    for (double y : base.labels) truth += y / static_cast<double>(base.size());
    EXPECT_NEAR(mean, truth, 4.0 * sd);
}

TEST(RunTrials, LargeRadiusPushesRhoUp) {
    ExperimentConfig cfg = gaussian_config(20);
    MethodConfig zero = cfg.methods[2];
    zero.name = "c0";
    zero.cross_validate = true;
    zero.c_grid = {0.0};
    MethodConfig huge = zero;
    huge.name = "cinf";
    huge.c_grid = {1e9};
    cfg.methods = {zero, huge};
    const auto records = run_trials(cfg, load_source(cfg.dataset), 0);
    double rho0 = 0, rho1 = 0;
    for (std::size_t t = 0; t < 20; ++t) {
        rho0 += records[t].rho;
        rho1 += records[20 + t].rho;
    }
    EXPECT_GE(rho1, rho0);
    EXPECT_NEAR(rho1 / 20, 1.0, 1e-12);
}

TEST(RunTrials, RhoFallsAsBurnInGrows) {
    ExperimentConfig cfg = gaussian_config(30);
    cfg.dataset.n = 3000;
    cfg.budgets = {1000};
    MethodConfig robust = cfg.methods[2];
    robust.cross_validate = true;
    cfg.methods = {robust};
    const Dataset base = load_source(cfg.dataset);
    std::vector<double> sizes, rhos;
    for (std::size_t b : {25, 50, 100, 200, 400, 800}) {
        cfg.burn_in = b;
        const auto records = run_trials(cfg, base, 0);
        double rho = 0;
        for (const auto& r : records) rho += r.rho / static_cast<double>(records.size());
        sizes.push_back(static_cast<double>(b));
        rhos.push_back(rho);
    }
    EXPECT_LE(spearman(sizes, rhos), 0.0);
}

TEST(RunTrials, UniformEssSelfConsistent) {
    ExperimentConfig cfg = gaussian_config(500);
    cfg.dataset.n = 4000;
    cfg.budgets = {400};
    cfg.burn_in = 0;
    cfg.methods.resize(1);
    const ExperimentResult result = run_experiment(cfg, 0);
    ASSERT_EQ(result.summary.size(), 1u);
    EXPECT_NEAR(result.summary[0].n_eff_empirical, 400.0, 40.0);
    EXPECT_NEAR(result.summary[0].n_eff, 400.0, 40.0);
}

TEST(Summary, ShapeAndRanges) {
    ExperimentConfig cfg = gaussian_config(8);
    cfg.budgets = {100, 200};
    const ExperimentResult result = run_experiment(cfg, 0);
    ASSERT_EQ(result.summary.size(), 6u);
    for (const auto& s : result.summary) {
        EXPECT_EQ(s.trials, 8u);
        EXPECT_GE(s.coverage, 0.0);
        EXPECT_LE(s.coverage, 1.0);
        EXPECT_GT(s.n_eff, 0.0);
    }
}

TEST(Report, FilesRowsAndSvg) {
    ExperimentConfig cfg = gaussian_config(4);
    cfg.methods.resize(1);
    cfg.budgets = {100, 200};
    const ExperimentResult result = run_experiment(cfg, 1);
    test_util::TempDir dir;
    emit_report(cfg, result, dir.path());
    const std::string csv = read_file(dir / "trials.csv");
    EXPECT_EQ(count(csv, "\n"), 1u + 2u * 4u);
    const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
    EXPECT_EQ(summary["cells"].size(), 2u);
    for (const char* svg : {"ess.svg", "coverage.svg"}) {
        const std::string text = read_file(dir / svg);
        EXPECT_EQ(text.rfind("<?xml", 0), 0u);
        EXPECT_EQ(count(text, "<polyline"), 1u);
        EXPECT_EQ(count(text, "<svg"), count(text, "</svg>"));
    }
}

TEST(Report, PolylinePerMethod) {
    std::vector<MetricsSummary> summary(4);
    for (std::size_t i = 0; i < 4; ++i) {
        summary[i].method = i < 2 ? "a" : "b";
        summary[i].budget = 100 * (1 + i % 2);
        summary[i].n_eff = 50.0 + static_cast<double>(i);
        summary[i].trials = 10;
        summary[i].coverage = 0.9;
    }
    EXPECT_EQ(count(metric_svg(summary, "n_eff"), "<polyline"), 2u);
    EXPECT_THROW(metric_svg(summary, "bias"), Error);
}

TEST(Report, EmptySummaryIsAnError) {
    test_util::TempDir dir;
    EXPECT_THROW(emit_report(gaussian_config(1), ExperimentResult{}, dir.path()), Error);
}

TEST(Perturbation, ZeroRadius) {
    const PerturbationReport rep = perturbation_demo(1, 0.0);
    EXPECT_EQ(rep.perturbed, rep.ehat2);
    EXPECT_EQ(rep.gap_before, rep.gap_after);
}

TEST(Perturbation, GapShrinks) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const PerturbationReport rep = perturbation_demo(seed);
        EXPECT_EQ(rep.ehat2.size(), 20u);
        EXPECT_LT(rep.gap_after, rep.gap_before) << "seed " << seed;
    }
}

TEST(Perturbation, PerUnitShiftBound) {
    std::mt19937_64 rng(81);
    const auto e2 = test_util::uniform_vector(rng, 20, 1, 30);
    const auto p = test_util::uniform_vector(rng, 20, 0.2, 0.8);
    const double c = 0.1;
    const InnerMax m = inner_max(e2, p, ConstraintSet::l2(c));
    double norm = 0, wmax = 0;
    for (double v : p) {
        norm += 1.0 / (400.0 * v * v);
        wmax = std::max(wmax, 1.0 / (20.0 * v));
    }
    for (double eps : m.eps) EXPECT_LE(std::abs(eps), c * wmax / std::sqrt(norm) + 1e-15);
}

TEST(Threads, EnvironmentOverride) {
    setenv("ROBUST_AI_THREADS", "3", 1);
    EXPECT_EQ(default_thread_count(), 3u);
    unsetenv("ROBUST_AI_THREADS");
    EXPECT_GE(default_thread_count(), 1u);
}
