#include "proxygate/rewards.hpp"

#include <gtest/gtest.h>

#include "proxygate/rng.hpp"

using namespace proxygate;

TEST(ForbiddenOracle, CountsOccurrences) {
    OracleSpec spec;
    spec.kind = OracleSpec::Kind::Forbidden;
    spec.forbidden = {3};
    spec.penalty = 1.0;
    EXPECT_DOUBLE_EQ(score(spec, {}, {1, 3, 3, 2}), -2.0);
    EXPECT_DOUBLE_EQ(score(spec, {}, {}), 0.0);
    // the prompt is never penalized
    EXPECT_DOUBLE_EQ(score(spec, {3, 3}, {1}), 0.0);
}

TEST(PatternOracle, NonOverlappingSlidingWindow) {
    OracleSpec spec;
    spec.kind = OracleSpec::Kind::Pattern;
    spec.patterns = {{1, 2}};
    spec.bonus = 1.0;
    EXPECT_DOUBLE_EQ(score(spec, {}, {1, 2, 1, 2}), 2.0);
    spec.patterns = {{1, 1}};
    EXPECT_DOUBLE_EQ(score(spec, {}, {1, 1, 1}), 1.0);  // overlap does not double count
}

TEST(LengthShapedOracle, QuadraticPenalty) {
    OracleSpec spec;
    spec.kind = OracleSpec::Kind::LengthShaped;
    spec.target_len = 4.0;
    spec.width = 2.0;
    EXPECT_DOUBLE_EQ(score(spec, {}, {0, 0, 0, 0}), 0.0);
    EXPECT_DOUBLE_EQ(score(spec, {}, {0, 0, 0, 0, 0, 0, 0, 0}), -4.0);
}

TEST(CompositeOracle, WeightedSumByHand) {
    OracleSpec forbidden;
    forbidden.kind = OracleSpec::Kind::Forbidden;
    forbidden.forbidden = {3};
    OracleSpec pattern;
    pattern.kind = OracleSpec::Kind::Pattern;
    pattern.patterns = {{1, 2}};

    OracleSpec composite;
    composite.kind = OracleSpec::Kind::Composite;
    composite.parts = {{0.5, forbidden}, {0.5, pattern}};
    // 0.5 * (-2) + 0.5 * (+2) = 0 on a response containing both
    EXPECT_DOUBLE_EQ(score(composite, {}, {1, 2, 3, 3, 1, 2}), 0.0);
}

TEST(Oracle, PureAndTotal) {
    OracleSpec spec;
    spec.kind = OracleSpec::Kind::Forbidden;
    spec.forbidden = {0, 5};
    spec.penalty = 2.0;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        TokenSeq response;
        for (int j = 0; j < int(rng.below(12)); ++j)
            response.push_back(TokenId(rng.below(8)));
        EXPECT_EQ(score(spec, {}, response), score(spec, {}, response));
    }
}

TEST(WinRate, PairwiseComparison) {
    EXPECT_DOUBLE_EQ(win_rate({1.0, 1.0}, {0.0, 0.0}), 1.0);
    EXPECT_DOUBLE_EQ(win_rate({2.0, 3.0}, {2.0, 3.0}), 0.5);
    EXPECT_DOUBLE_EQ(win_rate({1.0, 0.0, 2.0}, {0.0, 1.0, 2.0}), 0.5);
    EXPECT_THROW(win_rate({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST(WinRate, Complementarity) {
    Rng rng(9);
    for (int iter = 0; iter < 100; ++iter) {
        const std::size_t n = 1 + rng.below(20);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = double(rng.below(4));  // small ints force ties
            b[i] = double(rng.below(4));
        }
        EXPECT_DOUBLE_EQ(win_rate(a, b) + win_rate(b, a), 1.0);
    }
}

TEST(OracleJson, RoundTripPreservesScores) {
    const nlohmann::json j = {
        {"kind", "composite"},
        {"parts",
         {{{"weight", 0.5}, {"kind", "forbidden"}, {"tokens", {3}}, {"penalty", 1.0}},
          {{"weight", 0.5}, {"kind", "pattern"}, {"patterns", {{1, 2}}}, {"bonus", 1.0}},
          {{"weight", 1.0}, {"kind", "length_shaped"}, {"target_len", 2.0}, {"width", 1.0}}}}};
    const OracleSpec spec = OracleSpec::from_json(j);
    const OracleSpec reparsed = OracleSpec::from_json(spec.to_json());
    Rng rng(4);
    for (int i = 0; i < 30; ++i) {
        TokenSeq response;
        for (int k = 0; k < int(rng.below(8)); ++k) response.push_back(TokenId(rng.below(5)));
        EXPECT_DOUBLE_EQ(score(spec, {}, response), score(reparsed, {}, response));
    }
}

TEST(OracleJson, RejectsBadSpecs) {
    EXPECT_THROW(OracleSpec::from_json({{"kind", "unknown"}}), ConfigError);
    EXPECT_THROW(OracleSpec::from_json(
                     {{"kind", "length_shaped"}, {"target_len", 1.0}, {"width", 0.0}}),
                 ConfigError);
}
