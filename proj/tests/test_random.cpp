#include <gtest/gtest.h>

#include <cmath>

#include "robust_ai/random.hpp"

using namespace robust_ai;

// Known-answer vectors published with Random123 (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswerZero) {
    const auto out = Philox4x32::block({0, 0, 0, 0}, {0, 0});
    EXPECT_EQ(out[0], 0x6627e8d5u);
    EXPECT_EQ(out[1], 0xe169c58du);
    EXPECT_EQ(out[2], 0xbc57ac4cu);
    EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerAllOnes) {
    const auto out = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                       {0xffffffffu, 0xffffffffu});
    EXPECT_EQ(out[0], 0x408f276du);
    EXPECT_EQ(out[1], 0x41c83b0eu);
    EXPECT_EQ(out[2], 0xa20bc7c6u);
    EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
    const auto out = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                       {0xa4093822u, 0x299f31d0u});
    EXPECT_EQ(out[0], 0xd16cfe09u);
    EXPECT_EQ(out[1], 0x94fdccebu);
    EXPECT_EQ(out[2], 0x5001e420u);
    EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(Uniform01, PureFunctionOfInputs) {
    EXPECT_EQ(uniform01(42, Stream::LabelDraw, 7), uniform01(42, Stream::LabelDraw, 7));
    EXPECT_NE(uniform01(42, Stream::LabelDraw, 7), uniform01(42, Stream::LabelDraw, 8));
    EXPECT_NE(uniform01(42, Stream::LabelDraw, 7), uniform01(42, Stream::BurnIn, 7));
    EXPECT_NE(uniform01(42, Stream::LabelDraw, 7), uniform01(43, Stream::LabelDraw, 7));
}

TEST(Uniform01, MomentsAndRange) {
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = uniform01(9, Stream::Generator, static_cast<std::uint64_t>(i));
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
        sum2 += u * u;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(var, 1.0 / 12.0, 2e-3);
}

TEST(StandardNormal, Moments) {
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0, tail = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = standard_normal(3, Stream::Generator, static_cast<std::uint64_t>(i));
        ASSERT_TRUE(std::isfinite(z));
        sum += z;
        sum2 += z * z;
        if (z > 1.6448536269514722) tail += 1.0;
    }
    EXPECT_NEAR(sum / n, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(sum2 / n, 1.0, 0.02);
    EXPECT_NEAR(tail / n, 0.05, 5.0 * std::sqrt(0.05 * 0.95 / n));
}

TEST(DeriveSeed, DistinctAcrossSalts) {
    EXPECT_NE(trial_seed(1, 0), trial_seed(1, 1));
    EXPECT_NE(trial_seed(1, 0), trial_seed(2, 0));
    EXPECT_EQ(trial_seed(5, 17), trial_seed(5, 17));
}
