#include "proxygate/proxy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "proxygate/experiments.hpp"
#include "proxygate/rng.hpp"

using namespace proxygate;

namespace {

ProxyParams zero_params(int d, int h) {
    ProxyParams p = init_params(d, h, 0);
    for (double& w : p.w1) w = 0.0;
    for (double& w : p.w_act) w = 0.0;
    for (double& w : p.w_val) w = 0.0;
    return p;
}

}  // namespace

TEST(Features, DeterministicAndSeeded) {
    const FeatureExtractor fe(6, 4, 3, 42);
    const Vec hidden = {0.1, 0.2, 0.3};
    const Vec probs = {0.4, 0.3, 0.1, 0.1, 0.05, 0.05};
    const TokenSeq pool = {0, 1, 2, 3};
    const Vec a = fe.extract(hidden, 1, probs, pool, {0}, 2, 10);
    const Vec b = fe.extract(hidden, 1, probs, pool, {0}, 2, 10);
    EXPECT_EQ(a, b);
    ASSERT_EQ(int(a.size()), fe.dim());

    // a different seed gives a different embedding table
    const FeatureExtractor other(6, 4, 3, 43);
    EXPECT_NE(other.extract(hidden, 1, probs, pool, {0}, 2, 10), a);
    // embeddings are unit-norm
    double norm = 0.0;
    for (int j = 0; j < 4; ++j) norm += a[std::size_t(3 + j)] * a[std::size_t(3 + j)];
    EXPECT_NEAR(norm, 1.0, 1e-12);
}

TEST(Features, TrailingScalarsByConstruction) {
    const FeatureExtractor fe(4, 2, 3, 7);
    const Vec hidden = {0.0, 0.0, 0.0};
    const Vec probs = {0.5, 0.25, 0.15, 0.10};
    const Vec f = fe.extract(hidden, 0, probs, {0, 1, 2, 3}, {}, 0, 16);
    ASSERT_EQ(int(f.size()), fe.dim());
    const std::size_t base = f.size() - 4;
    EXPECT_DOUBLE_EQ(f[base + 0], 0.5);   // candidate probability
    EXPECT_DOUBLE_EQ(f[base + 1], 0.25);  // mean remaining probability
    EXPECT_DOUBLE_EQ(f[base + 2], 0.0);   // nothing rejected yet
    EXPECT_DOUBLE_EQ(f[base + 3], 0.0);   // position 0
}

TEST(Features, RejectionAndPositionScalars) {
    const FeatureExtractor fe(4, 2, 1, 7);
    const Vec probs = {0.5, 0.25, 0.15, 0.10};
    const Vec f = fe.extract({0.0}, 1, probs, {0, 1, 2, 3}, {0}, 4, 16);
    const std::size_t base = f.size() - 4;
    EXPECT_DOUBLE_EQ(f[base + 0], 0.25);
    EXPECT_NEAR(f[base + 1], 0.5 / 3.0, 1e-12);  // (0.25+0.15+0.10)/3
    EXPECT_DOUBLE_EQ(f[base + 2], 0.25);         // 1 of 4 rejected
    EXPECT_DOUBLE_EQ(f[base + 3], 0.25);         // position 4 of 16
}

TEST(Forward, ZeroParamsAreIndifferent) {
    const ProxyParams p = zero_params(5, 4);
    const PolicyOutput out = forward(p, {1.0, -2.0, 0.5, 0.0, 3.0});
    EXPECT_DOUBLE_EQ(out.action_probs[0], 0.5);
    EXPECT_DOUBLE_EQ(out.action_probs[1], 0.5);
    EXPECT_DOUBLE_EQ(out.value, 0.0);
}

TEST(Forward, BiasOnlySoftmaxClosedForm) {
    ProxyParams p = zero_params(3, 4);
    p.b_act = {10.0, -10.0};
    const PolicyOutput out = forward(p, {0.0, 0.0, 0.0});
    EXPECT_NEAR(out.action_probs[1], 2.061153622438558e-9, 1e-17);
    EXPECT_NEAR(out.action_probs[0], 1.0 - 2.061153622438558e-9, 1e-15);
}

TEST(Forward, DeterministicAndStrictlyPositive) {
    Rng rng(5);
    for (int iter = 0; iter < 100; ++iter) {
        const ProxyParams p = init_params(6, 8, rng.next_u64());
        Vec f(6);
        for (double& x : f) x = 3.0 * rng.normal();
        const PolicyOutput a = forward(p, f);
        const PolicyOutput b = forward(p, f);
        EXPECT_DOUBLE_EQ(a.action_probs[0], b.action_probs[0]);
        EXPECT_DOUBLE_EQ(a.value, b.value);
        EXPECT_GT(a.action_probs[0], 0.0);
        EXPECT_GT(a.action_probs[1], 0.0);
        EXPECT_NEAR(a.action_probs[0] + a.action_probs[1], 1.0, 1e-12);
    }
}

TEST(MaskedLogProb, ForcedAcceptIsFree) {
    const ProxyParams p = zero_params(2, 2);
    const PolicyOutput out = forward(p, {0.0, 0.0});
    const ActionSet forced{false};
    EXPECT_DOUBLE_EQ(masked_log_prob(out, Action::Accept, forced), 0.0);
    EXPECT_THROW(masked_log_prob(out, Action::Reject, forced), std::runtime_error);
}

TEST(MaskedLogProb, ReadsOffActionProbability) {
    ProxyParams p = zero_params(2, 2);
    const ActionSet open{true};
    EXPECT_DOUBLE_EQ(masked_log_prob(forward(p, {0.0, 0.0}), Action::Reject, open),
                     std::log(0.5));
    p.b_act = {std::log(0.8), std::log(0.2)};
    const PolicyOutput out = forward(p, {0.0, 0.0});
    EXPECT_NEAR(out.action_probs[0], 0.8, 1e-12);
    EXPECT_NEAR(masked_log_prob(out, Action::Reject, open), std::log(0.2), 1e-12);
}

TEST(Backward, ZeroUpstreamGradIsZero) {
    const ProxyParams p = init_params(5, 6, 9);
    const double gl[2] = {0.0, 0.0};
    const ProxyGrad g = backward(p, {1.0, 2.0, 3.0, 4.0, 5.0}, gl, 0.0);
    for (double x : g.w1) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : g.b1) EXPECT_DOUBLE_EQ(x, 0.0);
    for (double x : g.w_act) EXPECT_DOUBLE_EQ(x, 0.0);
    EXPECT_DOUBLE_EQ(g.b_val, 0.0);
}

TEST(Backward, ZeroFeaturesLeaveW1Untouched) {
    const ProxyParams p = init_params(4, 6, 10);
    const double gl[2] = {1.0, -0.5};
    const ProxyGrad g = backward(p, {0.0, 0.0, 0.0, 0.0}, gl, 0.7);
    for (double x : g.w1) EXPECT_DOUBLE_EQ(x, 0.0);
    double b1_mass = 0.0;
    for (double x : g.b1) b1_mass += std::abs(x);
    EXPECT_GT(b1_mass, 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
    const CheckReport report = gradient_check(7, 5, 123, 25);
    EXPECT_TRUE(report.pass) << report.detail;
}

TEST(Backward, CorruptedGradientIsDetected) {
    const BackwardFn corrupted = [](const ProxyParams& p, const Vec& f, const double gl[2],
                                    double gv) {
        ProxyGrad g = backward(p, f, gl, gv);
        if (!g.w1.empty()) g.w1[0] += 0.5;
        return g;
    };
    const CheckReport report = gradient_check(7, 5, 123, 5, 1e-5, 1e-4, corrupted);
    EXPECT_FALSE(report.pass);
}

TEST(Checkpoint, RoundTripIsExact) {
    const auto dir = std::filesystem::temp_directory_path() / "proxygate_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "params.json").string();

    const ProxyParams p = init_params(6, 5, 77);
    save_params(p, path);
    const ProxyParams q = load_params(path, 6, 5);
    EXPECT_EQ(p.seed, q.seed);
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        Vec f(6);
        for (double& x : f) x = rng.normal();
        const PolicyOutput a = forward(p, f);
        const PolicyOutput b = forward(q, f);
        EXPECT_EQ(a.action_probs[0], b.action_probs[0]);
        EXPECT_EQ(a.action_probs[1], b.action_probs[1]);
        EXPECT_EQ(a.value, b.value);
    }
}

TEST(Checkpoint, DimensionMismatchRejected) {
    const auto dir = std::filesystem::temp_directory_path() / "proxygate_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "params2.json").string();
    save_params(init_params(6, 5, 1), path);
    EXPECT_THROW(load_params(path, 7, 5), ConfigError);
    EXPECT_THROW(load_params(path, 6, 4), ConfigError);
    EXPECT_NO_THROW(load_params(path, 6, 5));
}

TEST(Checkpoint, UnversionedFileRejected) {
    const auto dir = std::filesystem::temp_directory_path() / "proxygate_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "params3.json").string();
    save_params(init_params(3, 2, 1), path);

    nlohmann::json j;
    {
        std::ifstream in(path);
        j = nlohmann::json::parse(in);
    }
    j.erase("version");
    {
        std::ofstream out(path);
        out << j.dump();
    }
    try {
        load_params(path);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_STREQ(e.what(), "unversioned checkpoint");
    }
}
