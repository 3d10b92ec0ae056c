#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "robust_ai/error_model.hpp"
#include "robust_ai/harness.hpp"
#include "robust_ai/losses.hpp"
#include "robust_ai/random.hpp"
#include "robust_ai/robust_opt.hpp"

using namespace robust_ai;

namespace {

SamplingRule active_rule(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = 0.1 + uniform01(1, Stream::Generator, i);
    return normalize_to_budget(w, Budget::make(n / 5, n));
}

ErrorEstimate errors(std::size_t n) {
    ErrorEstimate e;
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.values[i] = 2.0 * uniform01(2, Stream::Generator, i);
    return e;
}

} // namespace

static void BM_PathEval(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const SamplingRule pi = active_rule(n);
    const auto kind = static_cast<PathKind>(state.range(1));
    for (auto _ : state) benchmark::DoNotOptimize(path_eval(kind, pi, 0.37));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_PathEval)->ArgsProduct({{1000, 10000}, {0, 1, 2}});

static void BM_SolveRho(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const SamplingRule pi = active_rule(n);
    const ErrorEstimate e = errors(n);
    for (auto _ : state)
        benchmark::DoNotOptimize(solve_rho(PathKind::Geometric, pi, e, ConstraintSet::l2(1.0), RhoGrid::make(0.01)));
}
BENCHMARK(BM_SolveRho)->Arg(1000)->Arg(7000);

static void BM_SolveRhoCachedTable(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const PathTable table = PathTable::build(PathKind::Geometric, active_rule(n), RhoGrid::make(0.01));
    const ErrorEstimate e = errors(n);
    for (auto _ : state) benchmark::DoNotOptimize(solve_rho(table, e, ConstraintSet::l2(1.0)));
}
BENCHMARK(BM_SolveRhoCachedTable)->Arg(1000)->Arg(7000);

static void BM_KnnError(benchmark::State& state) {
    const auto m = static_cast<Eigen::Index>(state.range(0));
    const Dataset d = generate_linear_regression(4000, 3);
    const Eigen::MatrixXd train = d.features.topRows(m);
    std::vector<double> r2(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) r2[static_cast<std::size_t>(i)] = std::pow(d.labels[i] - d.predictions[i], 2);
    const std::size_t k = default_knn_k(static_cast<std::size_t>(m));
    for (auto _ : state) benchmark::DoNotOptimize(fit_knn_error(train, r2, k, d.features));
}
BENCHMARK(BM_KnnError)->Arg(100)->Arg(400);

static void BM_LogisticFit(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    Eigen::MatrixXd x(n, 3);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::uint64_t>(i);
        x(i, 0) = 1.0;
        x(i, 1) = standard_normal(4, Stream::Generator, 3 * u);
        x(i, 2) = standard_normal(4, Stream::Generator, 3 * u + 1);
        const double p = sigmoid(0.3 + x(i, 1) - 0.5 * x(i, 2));
        y[static_cast<std::size_t>(i)] = uniform01(4, Stream::Generator, 3 * u + 2) < p ? 1.0 : 0.0;
    }
    for (auto _ : state) benchmark::DoNotOptimize(fit_pseudo_outcome(EstimandKind::LogisticRegression, x, y));
}
BENCHMARK(BM_LogisticFit)->Arg(1000)->Arg(10000);

static void BM_ToyTrial(benchmark::State& state) {
    ExperimentConfig cfg = ExperimentConfig::from_json(R"({
      "dataset": {"generator": "toy_regions", "n": 7000, "seed": 1},
      "budgets": [1400], "error_model": {"source": "external"},
      "methods": [{"name": "robust", "kind": "robust", "constraint": "l2", "c": 85}],
      "trials": 1, "seed": 2})");
    const Dataset base = load_source(cfg.dataset);
    for (auto _ : state) benchmark::DoNotOptimize(run_trials(cfg, base, 1));
}
BENCHMARK(BM_ToyTrial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
