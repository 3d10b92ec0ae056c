#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "robust_ai/data_model.hpp"
#include "robust_ai/error.hpp"
#include "robust_ai/estimation.hpp"
#include "robust_ai/paths.hpp"
#include "robust_ai/sampler.hpp"
#include "test_support.hpp"

using namespace robust_ai;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::IoError;
}

} // namespace

TEST(Csv, ThreeRows) {
    std::istringstream in("x1,f,y\n1,0.5,1\n2,0.25,0\n3,0.75,1\n");
    const Dataset d = parse_csv(in);
    EXPECT_EQ(d.size(), 3u);
    EXPECT_EQ(d.dim(), 1u);
    EXPECT_DOUBLE_EQ(d.features(1, 0), 2.0);
    EXPECT_DOUBLE_EQ(d.predictions[2], 0.75);
    EXPECT_TRUE(d.fully_labeled());
}

TEST(Csv, BlankLabelIsUnobserved) {
    std::istringstream in("x1,f,y\n1,0.5,1\n2,0.25,\n");
    const Dataset d = parse_csv(in);
    EXPECT_EQ(d.observed[0], 1);
    EXPECT_EQ(d.observed[1], 0);
    EXPECT_TRUE(std::isnan(d.labels[1]));
    EXPECT_EQ(d.labeled_count(), 1u);
}

TEST(Csv, ConfidenceColumn) {
    std::istringstream in("x1,f,y,conf\n1,0.5,1,0.97\n2,0.25,0,0.50\n");
    const Dataset d = parse_csv(in);
    ASSERT_TRUE(d.confidence.has_value());
    EXPECT_DOUBLE_EQ((*d.confidence)[0], 0.97);
    EXPECT_DOUBLE_EQ((*d.confidence)[1], 0.50);
}

TEST(Csv, ConfidenceOutOfRangeRejected) {
    std::istringstream in("x1,f,y,conf\n1,0.5,1,1.5\n");
    EXPECT_EQ(code_of([&] { parse_csv(in); }), ErrorCode::InvalidArgument);
}

TEST(Csv, MissingPredictionColumn) {
    std::istringstream in("x1,y\n1,1\n");
    EXPECT_EQ(code_of([&] { parse_csv(in); }), ErrorCode::MissingColumn);
}

TEST(Csv, BadNumber) {
    std::istringstream in("x1,f,y\n1,abc,1\n");
    EXPECT_EQ(code_of([&] { parse_csv(in); }), ErrorCode::ParseError);
}

TEST(Csv, RaggedRow) {
    std::istringstream in("x1,f,y\n1,0.5\n");
    EXPECT_EQ(code_of([&] { parse_csv(in); }), ErrorCode::ParseError);
}

TEST(Csv, HeaderOnlyIsEmpty) {
    std::istringstream in("x1,f,y\n");
    EXPECT_EQ(code_of([&] { parse_csv(in); }), ErrorCode::EmptyDataset);
}

TEST(Csv, ExplicitSchema) {
    std::istringstream in("age,score,pred,truth\n30,1.5,0.2,0\n40,2.5,0.8,1\n");
    CsvSchema schema;
    schema.features = {"score"};
    schema.prediction = "pred";
    schema.label = "truth";
    const Dataset d = parse_csv(in, schema);
    EXPECT_EQ(d.dim(), 1u);
    EXPECT_DOUBLE_EQ(d.features(1, 0), 2.5);
    EXPECT_DOUBLE_EQ(d.labels[1], 1.0);
}

TEST(Csv, RoundTripIsExact) {
    std::mt19937_64 rng(1);
    Dataset d;
    d.features = Eigen::MatrixXd::Random(20, 2);
    d.feature_names = {"x1", "x2"};
    d.predictions = test_util::uniform_vector(rng, 20, -1, 1);
    d.labels = test_util::uniform_vector(rng, 20, -3, 3);
    d.observed.assign(20, 1);
    d.observed[4] = 0;
    d.labels[4] = std::nan("");
    d.ehat2 = test_util::uniform_vector(rng, 20, 0, 2);
    std::ostringstream out;
    write_csv(out, d);
    std::istringstream in(out.str());
    const Dataset back = parse_csv(in);
    ASSERT_EQ(back.size(), d.size());
    EXPECT_EQ(back.features, d.features);
    EXPECT_EQ(back.predictions, d.predictions);
    EXPECT_EQ(back.observed, d.observed);
    ASSERT_TRUE(back.ehat2.has_value());
    EXPECT_EQ(*back.ehat2, *d.ehat2);
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.observed[i]) EXPECT_EQ(back.labels[i], d.labels[i]);
}

TEST(Csv, BundledSampleSchemaSmoke) {
    const Dataset d = load_csv(std::filesystem::path(ROBUST_AI_TEST_DATA) / "survey_sample.csv");
    EXPECT_EQ(d.size(), 100u);
    EXPECT_EQ(d.dim(), 2u);
    EXPECT_TRUE(d.confidence.has_value());
    EXPECT_NO_THROW(require_binary(d));
    // The full pipeline runs on it: logistic coefficient under a uniform half budget.
    const SamplingRule rule = uniform_rule(Budget::make(50, 100));
    const LabelDraw draw = draw_labels(rule, 4);
    EstimandSpec spec{EstimandKind::LogisticRegression, 1, true};
    const EstimateResult r = estimate_m(spec, d, draw, rule);
    EXPECT_TRUE(std::isfinite(r.estimate));
    EXPECT_LE(r.ci_lo, r.estimate);
    EXPECT_GE(r.ci_hi, r.estimate);
}

TEST(Csv, MissingFileIsIoError) {
    EXPECT_EQ(code_of([] { load_csv("/nonexistent/robust_ai.csv"); }), ErrorCode::IoError);
}

TEST(Budget, Bounds) {
    EXPECT_EQ(code_of([] { Budget::make(0, 10); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { Budget::make(11, 10); }), ErrorCode::InvalidArgument);
    EXPECT_DOUBLE_EQ(Budget::make(10, 10).rate(), 1.0);
}

TEST(Estimand, ParseAndCoordinates) {
    EXPECT_EQ(parse_estimand_kind("linreg"), EstimandKind::LinearRegression);
    EXPECT_EQ(parse_estimand_kind("logistic_regression"), EstimandKind::LogisticRegression);
    EXPECT_EQ(code_of([] { parse_estimand_kind("median"); }), ErrorCode::ConfigError);
    EstimandSpec spec{EstimandKind::LinearRegression, 2, true};
    EXPECT_EQ(spec.parameter_count(2), 3u);
    EXPECT_NO_THROW(spec.validate(2));
    spec.coordinate = 3;
    EXPECT_EQ(code_of([&] { spec.validate(2); }), ErrorCode::InvalidArgument);
}

TEST(Estimand, DesignMatrixInterceptFirst) {
    Dataset d;
    d.features = Eigen::MatrixXd(2, 1);
    d.features << 3.0, 4.0;
    d.predictions = {0, 0};
    d.labels = {0, 0};
    d.observed = {1, 1};
    const Eigen::MatrixXd x = design_matrix(d, {EstimandKind::LinearRegression, 0, true});
    ASSERT_EQ(x.cols(), 2);
    EXPECT_DOUBLE_EQ(x(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(x(1, 1), 4.0);
    const Eigen::MatrixXd m = design_matrix(d, {});
    EXPECT_EQ(m.cols(), 1);
    EXPECT_DOUBLE_EQ(m(1, 0), 1.0);
}

TEST(BurnIn, EmptyAndFull) {
    const BurnInSplit none = split_burn_in(10, {0, 3});
    EXPECT_TRUE(none.burn_in.empty());
    EXPECT_EQ(none.remainder.size(), 10u);
    const BurnInSplit all = split_burn_in(10, {10, 3});
    EXPECT_EQ(all.burn_in.size(), 10u);
    EXPECT_TRUE(all.remainder.empty());
}

TEST(BurnIn, DeterministicAndDisjoint) {
    const BurnInSplit a = split_burn_in(10, {5, 99});
    const BurnInSplit b = split_burn_in(10, {5, 99});
    EXPECT_EQ(a.burn_in, b.burn_in);
    EXPECT_EQ(a.remainder, b.remainder);
    std::set<std::size_t> seen(a.burn_in.begin(), a.burn_in.end());
    seen.insert(a.remainder.begin(), a.remainder.end());
    EXPECT_EQ(seen.size(), 10u);
    EXPECT_TRUE(std::is_sorted(a.burn_in.begin(), a.burn_in.end()));
}

TEST(BurnIn, TooLarge) {
    EXPECT_EQ(code_of([] { split_burn_in(10, {11, 0}); }), ErrorCode::BurnInTooLarge);
}

TEST(BurnIn, InclusionIsUniform) {
    // Each unit should enter a size-3 burn-in out of 12 with probability 1/4.
    std::vector<int> hits(12, 0);
    const int reps = 20000;
    for (int s = 0; s < reps; ++s)
        for (std::size_t i : split_burn_in(12, {3, static_cast<std::uint64_t>(s)}).burn_in) ++hits[i];
    const double se = std::sqrt(0.25 * 0.75 / reps);
    for (int h : hits) EXPECT_NEAR(static_cast<double>(h) / reps, 0.25, 5.0 * se);
}

TEST(Dataset, SubsetAndMask) {
    const Dataset d = test_util::mean_dataset({1, 2, 3}, {4, 5, 6});
    const std::vector<std::size_t> rows = {2, 2, 0};
    const Dataset s = d.subset(rows);
    EXPECT_EQ(s.predictions, (std::vector<double>{3, 3, 1}));
    const std::vector<std::uint8_t> mask = {1, 0, 1};
    const Dataset m = d.masked(mask);
    EXPECT_EQ(m.labeled_count(), 2u);
    EXPECT_TRUE(std::isnan(m.labels[1]));
}

TEST(Dataset, ValidateCatchesMismatch) {
    Dataset d = test_util::mean_dataset({1, 2}, {1, 2});
    d.labels.pop_back();
    EXPECT_EQ(code_of([&] { d.validate(); }), ErrorCode::DimensionMismatch);
}

TEST(Atomic, WriteReplacesFile) {
    test_util::TempDir dir;
    const auto path = dir / "out.txt";
    write_file_atomic(path, "first");
    write_file_atomic(path, "second");
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(text, "second");
    EXPECT_FALSE(std::filesystem::exists(dir / "out.txt.tmp"));
}
