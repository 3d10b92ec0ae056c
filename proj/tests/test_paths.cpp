#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "robust_ai/error.hpp"
#include "robust_ai/paths.hpp"
#include "test_support.hpp"

using namespace robust_ai;

namespace {

// Independent water-filling oracle: bisection on the scale s of
// mean(clamp(s * w, floor, 1)) = rate.
std::vector<double> water_fill_oracle(const std::vector<double>& w, double rate, double floor) {
    auto mean_at = [&](double s) {
        double total = 0.0;
        for (double v : w) total += std::clamp(s * v, floor, 1.0);
        return total / static_cast<double>(w.size());
    };
    double lo = 0.0, hi = 1.0;
    while (mean_at(hi) < rate) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_at(mid) < rate ? lo : hi) = mid;
    }
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::clamp(hi * w[i], floor, 1.0);
    return out;
}

SamplingRule random_rule(std::mt19937_64& rng, std::size_t n, std::size_t labels) {
    const auto w = test_util::uniform_vector(rng, n, 0.05, 3.0);
    return normalize_to_budget(w, Budget::make(labels, n));
}

} // namespace

TEST(UniformRule, Examples) {
    for (double p : uniform_rule(Budget::make(5, 10)).probs) EXPECT_DOUBLE_EQ(p, 0.5);
    for (double p : uniform_rule(Budget::make(4, 4)).probs) EXPECT_DOUBLE_EQ(p, 1.0);
    const SamplingRule r = uniform_rule(Budget::make(10, 1000));
    EXPECT_EQ(r.size(), 1000u);
    for (double p : r.probs) EXPECT_DOUBLE_EQ(p, 0.01);
    EXPECT_NO_THROW(r.validate());
}

TEST(Normalize, EqualWeightsGiveUniform) {
    const std::vector<double> w(10, 2.5);
    for (double p : normalize_to_budget(w, Budget::make(5, 10)).probs) EXPECT_NEAR(p, 0.5, 1e-15);
}

TEST(Normalize, ProportionalScaling) {
    const std::vector<double> w = {3.0, 1.0};
    const SamplingRule r = normalize_to_budget(w, Budget::make(1, 2));
    EXPECT_NEAR(r.probs[0], 0.75, 1e-15);
    EXPECT_NEAR(r.probs[1], 0.25, 1e-15);
    EXPECT_NEAR(r.mean(), 0.5, 1e-15);
}

TEST(Normalize, CapAtOne) {
    const std::vector<double> w = {100.0, 1.0, 1.0};
    const SamplingRule r = normalize_to_budget(w, Budget::make(2, 3), 0.01);
    EXPECT_DOUBLE_EQ(r.probs[0], 1.0);
    EXPECT_NEAR(r.probs[1], 0.5, 1e-12);
    EXPECT_NEAR(r.probs[2], 0.5, 1e-12);
    EXPECT_NEAR(r.mean(), 2.0 / 3.0, 1e-12);
}

TEST(Normalize, FloorBinds) {
    const std::vector<double> w = {1.0, 1e-9, 1.0, 1.0};
    const SamplingRule r = normalize_to_budget(w, Budget::make(2, 4), 0.05);
    EXPECT_DOUBLE_EQ(r.probs[1], 0.05);
    EXPECT_NEAR(r.mean(), 0.5, 1e-12);
    EXPECT_NEAR(r.probs[0], r.probs[2], 1e-15);
}

TEST(Normalize, ZeroWeightsStayAtFloor) {
    const std::vector<double> w = {0.0, 1.0, 3.0, 0.0};
    const SamplingRule r = normalize_to_budget(w, Budget::make(1, 4), 0.01);
    EXPECT_DOUBLE_EQ(r.probs[0], 0.01);
    EXPECT_DOUBLE_EQ(r.probs[3], 0.01);
    EXPECT_NEAR(r.mean(), 0.25, 1e-12);
    EXPECT_NEAR(r.probs[2] / r.probs[1], 3.0, 1e-12);
}

TEST(Normalize, Errors) {
    const std::vector<double> zeros(3, 0.0);
    EXPECT_THROW(normalize_to_budget(zeros, Budget::make(1, 3)), Error);
    const std::vector<double> neg = {1.0, -1.0};
    EXPECT_THROW(normalize_to_budget(neg, Budget::make(1, 2)), Error);
    const std::vector<double> ok(1000, 1.0);
    try {
        normalize_to_budget(ok, Budget::make(1, 1000), 0.01);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::InfeasibleBudget);
    }
}

TEST(Normalize, MatchesBisectionOracle) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 5 + rng() % 60;
        const std::size_t labels = 1 + rng() % n;
        auto w = test_util::uniform_vector(rng, n, 0.0, 1.0);
        for (auto& v : w) v = std::pow(v, 4.0);  // heavy spread so caps and floors bind
        const double floor = 0.01;
        if (floor * n > labels) continue;
        const SamplingRule r = normalize_to_budget(w, Budget::make(labels, n), floor);
        const auto oracle = water_fill_oracle(w, static_cast<double>(labels) / n, floor);
        for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(r.probs[i], oracle[i], 1e-9) << "rep " << rep;
        EXPECT_NO_THROW(r.validate());
    }
}

TEST(Path, GeometricExample) {
    SamplingRule pi{{0.8, 0.2}, kDefaultFloor, Budget::make(1, 2)};
    const SamplingRule r = path_eval(PathKind::Geometric, pi, 0.5);
    EXPECT_NEAR(r.probs[0], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(r.probs[1], 1.0 / 3.0, 1e-12);
}

TEST(Path, LinearExample) {
    SamplingRule pi{{0.8, 0.2}, kDefaultFloor, Budget::make(1, 2)};
    const SamplingRule r = path_eval(PathKind::Linear, pi, 0.25);
    EXPECT_NEAR(r.probs[0], 0.725, 1e-15);
    EXPECT_NEAR(r.probs[1], 0.275, 1e-15);
}

TEST(Path, HellingerMatchesSlerpOracle) {
    SamplingRule pi{{0.8, 0.2}, kDefaultFloor, Budget::make(1, 2)};
    // sqrt(pi) and sqrt(0.5) 1 both have squared norm 1; slerp between them.
    const double u0 = std::sqrt(0.8), u1 = std::sqrt(0.2), v = std::sqrt(0.5);
    const double beta = std::acos(u0 * v + u1 * v);
    for (double rho : {0.2, 0.5, 0.9}) {
        const double a = std::sin((1 - rho) * beta) / std::sin(beta);
        const double b = std::sin(rho * beta) / std::sin(beta);
        const SamplingRule r = path_eval(PathKind::Hellinger, pi, rho);
        EXPECT_NEAR(r.probs[0], std::pow(a * u0 + b * v, 2), 1e-12);
        EXPECT_NEAR(r.probs[1], std::pow(a * u1 + b * v, 2), 1e-12);
    }
}

TEST(Path, RhoOutOfRange) {
    const SamplingRule pi = uniform_rule(Budget::make(1, 2));
    try {
        path_eval(PathKind::Linear, pi, 1.5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::RhoOutOfRange);
    }
}

class PathProperties : public ::testing::TestWithParam<PathKind> {};

TEST_P(PathProperties, EndpointsExact) {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 20; ++rep) {
        const SamplingRule pi = random_rule(rng, 40, 12);
        EXPECT_EQ(path_eval(GetParam(), pi, 0.0).probs, pi.probs);
        for (double p : path_eval(GetParam(), pi, 1.0).probs) EXPECT_NEAR(p, 0.3, 1e-15);
    }
}

TEST_P(PathProperties, BudgetPreservedAndFeasible) {
    std::mt19937_64 rng(22);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 10 + rng() % 90;
        const SamplingRule pi = random_rule(rng, n, 1 + rng() % (n / 2));
        for (int k = 0; k <= 20; ++k) {
            const SamplingRule r = path_eval(GetParam(), pi, k / 20.0);
            ASSERT_NO_THROW(r.validate()) << "rho " << k / 20.0;
        }
    }
}

TEST_P(PathProperties, Continuous) {
    std::mt19937_64 rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        const SamplingRule pi = random_rule(rng, 30, 9);
        for (int k = 0; k < 1000; k += 37) {
            const double rho = k / 1000.0;
            const auto a = path_eval(GetParam(), pi, rho).probs;
            const auto b = path_eval(GetParam(), pi, rho + 1e-7).probs;
            for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-5);
        }
    }
}

TEST_P(PathProperties, UniformIsFixedPoint) {
    const SamplingRule u = uniform_rule(Budget::make(7, 20));
    for (double rho : {0.1, 0.5, 0.8})
        for (double p : path_eval(GetParam(), u, rho).probs) EXPECT_NEAR(p, 0.35, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(AllPaths, PathProperties,
                         ::testing::Values(PathKind::Linear, PathKind::Geometric, PathKind::Hellinger),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(PathKindText, RoundTrip) {
    for (PathKind k : {PathKind::Linear, PathKind::Geometric, PathKind::Hellinger})
        EXPECT_EQ(parse_path_kind(to_string(k)), k);
    EXPECT_THROW(parse_path_kind("wasserstein"), Error);
}
