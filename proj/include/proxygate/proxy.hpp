#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "proxygate/rng.hpp"
#include "proxygate/types.hpp"

namespace proxygate {

inline constexpr int kCheckpointVersion = 1;

/// Builds the proxy input vector: generator hidden state, a fixed random
/// unit-norm embedding of the candidate token, and four scalars
/// (candidate probability, mean remaining probability, rejected fraction,
/// position fraction). The embedding table is derived from the run seed so a
/// checkpoint plus its seed reproduces the features exactly.
class FeatureExtractor {
public:
    FeatureExtractor(int vocab_size, int embed_dim, int hidden_dim, std::uint64_t seed)
        : vocab_size_(vocab_size), embed_dim_(embed_dim), hidden_dim_(hidden_dim) {
        Rng rng(derive_seed(seed, 0x7ea7f00du));
        table_.resize(std::size_t(vocab_size) * std::size_t(embed_dim));
        for (int t = 0; t < vocab_size; ++t) {
            double norm_sq = 0.0;
            for (int j = 0; j < embed_dim; ++j) {
                const double x = rng.normal();
                table_[std::size_t(t * embed_dim + j)] = x;
                norm_sq += x * x;
            }
            const double inv = 1.0 / std::sqrt(std::max(norm_sq, 1e-12));
            for (int j = 0; j < embed_dim; ++j) table_[std::size_t(t * embed_dim + j)] *= inv;
        }
    }

    int dim() const { return hidden_dim_ + embed_dim_ + 4; }
    int embed_dim() const { return embed_dim_; }
    int hidden_dim() const { return hidden_dim_; }

    Vec extract(const Vec& hidden, TokenId candidate, const Vec& probs, const TokenSeq& pool,
                const TokenSeq& rejected, int position, int max_response_len) const {
        Vec f;
        f.reserve(std::size_t(dim()));
        f.insert(f.end(), hidden.begin(), hidden.end());
        f.resize(std::size_t(hidden_dim_), 0.0);
        const double* emb = &table_[std::size_t(candidate * embed_dim_)];
        f.insert(f.end(), emb, emb + embed_dim_);

        double remaining = 0.0;
        int remaining_n = 0;
        for (TokenId t : pool) {
            if (std::find(rejected.begin(), rejected.end(), t) != rejected.end()) continue;
            remaining += probs[std::size_t(t)];
            remaining_n++;
        }
        f.push_back(probs[std::size_t(candidate)]);
        f.push_back(remaining_n > 0 ? remaining / remaining_n : 0.0);
        f.push_back(pool.empty() ? 0.0 : double(rejected.size()) / double(pool.size()));
        f.push_back(double(position) / double(max_response_len));
        return f;
    }

private:
    int vocab_size_;
    int embed_dim_;
    int hidden_dim_;
    std::vector<double> table_;  // vocab_size x embed_dim, row-major
};

/// tanh trunk with a 2-logit action head and a scalar value head.
struct ProxyParams {
    int d = 0;  // feature dim
    int h = 0;  // trunk width
    std::uint64_t seed = 0;

    std::vector<double> w1;     // h x d, row-major
    std::vector<double> b1;     // h
    std::vector<double> w_act;  // 2 x h, row-major
    std::vector<double> b_act;  // 2
    std::vector<double> w_val;  // h
    double b_val = 0.0;
};

struct PolicyOutput {
    double action_logits[2] = {0.0, 0.0};
    double action_probs[2] = {0.5, 0.5};
    double value = 0.0;

    double entropy() const {
        double h = 0.0;
        for (double p : action_probs)
            if (p > 0.0) h -= p * std::log(p);
        return h;
    }
};

struct ProxyGrad {
    std::vector<double> w1, b1, w_act, b_act, w_val;
    double b_val = 0.0;

    explicit ProxyGrad(const ProxyParams& p)
        : w1(p.w1.size(), 0.0),
          b1(p.b1.size(), 0.0),
          w_act(p.w_act.size(), 0.0),
          b_act(p.b_act.size(), 0.0),
          w_val(p.w_val.size(), 0.0) {}
};

inline ProxyParams init_params(int d, int h, std::uint64_t seed) {
    ProxyParams p;
    p.d = d;
    p.h = h;
    p.seed = seed;
    Rng rng(derive_seed(seed, 0x1417u));
    auto fill = [&](std::vector<double>& w, std::size_t n, int fan_in) {
        const double bound = 1.0 / std::sqrt(double(fan_in));
        w.resize(n);
        for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * bound;
    };
    fill(p.w1, std::size_t(h) * std::size_t(d), d);
    p.b1.assign(std::size_t(h), 0.0);
    fill(p.w_act, 2 * std::size_t(h), h);
    p.b_act.assign(2, 0.0);
    fill(p.w_val, std::size_t(h), h);
    p.b_val = 0.0;
    return p;
}

inline PolicyOutput forward(const ProxyParams& p, const Vec& f) {
    PolicyOutput out;
    std::vector<double> trunk(std::size_t(p.h));
    for (int i = 0; i < p.h; ++i) {
        double z = p.b1[std::size_t(i)];
        const double* row = &p.w1[std::size_t(i) * std::size_t(p.d)];
        for (int j = 0; j < p.d; ++j) z += row[j] * f[std::size_t(j)];
        trunk[std::size_t(i)] = std::tanh(z);
    }
    for (int a = 0; a < 2; ++a) {
        double z = p.b_act[std::size_t(a)];
        const double* row = &p.w_act[std::size_t(a) * std::size_t(p.h)];
        for (int i = 0; i < p.h; ++i) z += row[i] * trunk[std::size_t(i)];
        out.action_logits[a] = z;
    }
    double v = p.b_val;
    for (int i = 0; i < p.h; ++i) v += p.w_val[std::size_t(i)] * trunk[std::size_t(i)];
    out.value = v;

    const double m = std::max(out.action_logits[0], out.action_logits[1]);
    const double e0 = std::exp(out.action_logits[0] - m);
    const double e1 = std::exp(out.action_logits[1] - m);
    out.action_probs[0] = e0 / (e0 + e1);
    out.action_probs[1] = e1 / (e0 + e1);
    return out;
}

/// Log-likelihood of `action` under the masked policy. Forced decisions
/// (accept-only) have likelihood 1, so they contribute no policy gradient.
inline double masked_log_prob(const PolicyOutput& out, Action action, const ActionSet& allowed) {
    if (!allowed.contains(action)) throw std::runtime_error("masked action");
    if (allowed.accept_only()) return 0.0;
    return std::log(out.action_probs[int(action)]);
}

/// Exact gradients of (grad_logits . action_logits + grad_value * value)
/// with respect to every parameter.
inline ProxyGrad backward(const ProxyParams& p, const Vec& f, const double grad_logits[2],
                          double grad_value) {
    ProxyGrad g(p);
    std::vector<double> trunk(std::size_t(p.h));
    for (int i = 0; i < p.h; ++i) {
        double z = p.b1[std::size_t(i)];
        const double* row = &p.w1[std::size_t(i) * std::size_t(p.d)];
        for (int j = 0; j < p.d; ++j) z += row[j] * f[std::size_t(j)];
        trunk[std::size_t(i)] = std::tanh(z);
    }
    for (int a = 0; a < 2; ++a) {
        g.b_act[std::size_t(a)] = grad_logits[a];
        for (int i = 0; i < p.h; ++i)
            g.w_act[std::size_t(a) * std::size_t(p.h) + std::size_t(i)] =
                grad_logits[a] * trunk[std::size_t(i)];
    }
    g.b_val = grad_value;
    for (int i = 0; i < p.h; ++i) g.w_val[std::size_t(i)] = grad_value * trunk[std::size_t(i)];

    for (int i = 0; i < p.h; ++i) {
        double gt = grad_value * p.w_val[std::size_t(i)];
        for (int a = 0; a < 2; ++a)
            gt += grad_logits[a] * p.w_act[std::size_t(a) * std::size_t(p.h) + std::size_t(i)];
        const double gz = gt * (1.0 - trunk[std::size_t(i)] * trunk[std::size_t(i)]);
        g.b1[std::size_t(i)] = gz;
        double* row = &g.w1[std::size_t(i) * std::size_t(p.d)];
        for (int j = 0; j < p.d; ++j) row[j] = gz * f[std::size_t(j)];
    }
    return g;
}

inline void axpy(ProxyParams& p, double scale, const ProxyGrad& g) {
    for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1[i] += scale * g.w1[i];
    for (std::size_t i = 0; i < p.b1.size(); ++i) p.b1[i] += scale * g.b1[i];
    for (std::size_t i = 0; i < p.w_act.size(); ++i) p.w_act[i] += scale * g.w_act[i];
    for (std::size_t i = 0; i < p.b_act.size(); ++i) p.b_act[i] += scale * g.b_act[i];
    for (std::size_t i = 0; i < p.w_val.size(); ++i) p.w_val[i] += scale * g.w_val[i];
    p.b_val += scale * g.b_val;
}

inline void accumulate(ProxyGrad& acc, const ProxyGrad& g, double scale = 1.0) {
    for (std::size_t i = 0; i < acc.w1.size(); ++i) acc.w1[i] += scale * g.w1[i];
    for (std::size_t i = 0; i < acc.b1.size(); ++i) acc.b1[i] += scale * g.b1[i];
    for (std::size_t i = 0; i < acc.w_act.size(); ++i) acc.w_act[i] += scale * g.w_act[i];
    for (std::size_t i = 0; i < acc.b_act.size(); ++i) acc.b_act[i] += scale * g.b_act[i];
    for (std::size_t i = 0; i < acc.w_val.size(); ++i) acc.w_val[i] += scale * g.w_val[i];
    acc.b_val += scale * g.b_val;
}

namespace detail {

inline std::vector<std::vector<double>> to_rows(const std::vector<double>& flat, int rows,
                                                int cols) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r)
        out[std::size_t(r)].assign(flat.begin() + std::size_t(r) * std::size_t(cols),
                                   flat.begin() + std::size_t(r + 1) * std::size_t(cols));
    return out;
}

inline std::vector<double> from_rows(const nlohmann::json& j, int rows, int cols,
                                     const char* name) {
    if (!j.is_array() || int(j.size()) != rows) throw ConfigError("incompatible checkpoint");
    std::vector<double> flat;
    flat.reserve(std::size_t(rows) * std::size_t(cols));
    for (const auto& row : j) {
        if (!row.is_array() || int(row.size()) != cols)
            throw ConfigError(std::string("incompatible checkpoint: ") + name);
        for (const auto& x : row) flat.push_back(x.get<double>());
    }
    return flat;
}

}  // namespace detail

inline void save_params(const ProxyParams& p, const std::string& path) {
    nlohmann::json j;
    j["version"] = kCheckpointVersion;
    j["d"] = p.d;
    j["h"] = p.h;
    j["seed"] = p.seed;
    j["w1"] = detail::to_rows(p.w1, p.h, p.d);
    j["b1"] = p.b1;
    j["w_act"] = detail::to_rows(p.w_act, 2, p.h);
    j["b_act"] = p.b_act;
    j["w_val"] = detail::to_rows(p.w_val, 1, p.h);
    j["b_val"] = p.b_val;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out << j.dump(1) << '\n';
}

inline ProxyParams load_params(const std::string& path, int expected_d = -1, int expected_h = -1) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (!j.contains("version")) throw ConfigError("unversioned checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw ConfigError("incompatible checkpoint: unsupported version");

    ProxyParams p;
    p.d = j.at("d").get<int>();
    p.h = j.at("h").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    if ((expected_d >= 0 && p.d != expected_d) || (expected_h >= 0 && p.h != expected_h))
        throw ConfigError("incompatible checkpoint");
    p.w1 = detail::from_rows(j.at("w1"), p.h, p.d, "w1");
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w_act = detail::from_rows(j.at("w_act"), 2, p.h, "w_act");
    p.b_act = j.at("b_act").get<std::vector<double>>();
    p.w_val = detail::from_rows(j.at("w_val"), 1, p.h, "w_val");
    p.b_val = j.at("b_val").get<double>();
    if (int(p.b1.size()) != p.h || p.b_act.size() != 2) throw ConfigError("incompatible checkpoint");
    return p;
}

}  // namespace proxygate
