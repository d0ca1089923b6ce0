#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "proxygate/environment.hpp"
#include "proxygate/generator.hpp"
#include "proxygate/proxy.hpp"
#include "proxygate/rewards.hpp"
#include "proxygate/trainer.hpp"

namespace proxygate {

struct ProxyConfig {
    int hidden_size = 64;
    int embed_dim = 8;
};

struct PromptSetConfig {
    int train_size = 512;
    int test_size = 128;
    int min_len = 1;
    int max_len = 4;
};

struct PromptSet {
    std::vector<TokenSeq> train;
    std::vector<TokenSeq> test;
};

namespace detail {

inline TokenSeq sample_prompt(const Generator& gen, int min_len, int max_len, Rng& rng) {
    const TokenId eos = gen.vocab().eos_id;
    const int len = min_len + int(rng.below(std::uint64_t(max_len - min_len + 1)));
    TokenSeq prompt;
    for (int i = 0; i < len; ++i) {
        Vec probs = apply_temperature(gen.logits(prompt), 1.0);
        probs[std::size_t(eos)] = 0.0;  // prompts never contain the terminator
        double total = std::accumulate(probs.begin(), probs.end(), 0.0);
        if (total <= 0.0) {
            for (int t = 0; t < gen.vocab().size; ++t)
                probs[std::size_t(t)] = t == eos ? 0.0 : 1.0;
            total = double(gen.vocab().size - 1);
        }
        prompt.push_back(TokenId(rng.weighted_pick(probs, total)));
    }
    return prompt;
}

}  // namespace detail

/// Short prefixes drawn from the generator's own next-token distribution.
inline PromptSet make_prompt_set(const Generator& gen, const PromptSetConfig& cfg,
                                 std::uint64_t seed) {
    PromptSet set;
    for (int i = 0; i < cfg.train_size; ++i) {
        Rng rng(derive_seed(seed, 0x9147000ull + std::uint64_t(i)));
        set.train.push_back(detail::sample_prompt(gen, cfg.min_len, cfg.max_len, rng));
    }
    for (int i = 0; i < cfg.test_size; ++i) {
        Rng rng(derive_seed(seed, 0x7e57000ull + std::uint64_t(i)));
        set.test.push_back(detail::sample_prompt(gen, cfg.min_len, cfg.max_len, rng));
    }
    return set;
}

struct HistBin {
    double left = 0.0;
    double right = 0.0;
    long count = 0;
};

struct EvalSummary {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<HistBin> histogram;
};

struct EvalResult {
    std::vector<double> scores;
    std::vector<Trajectory> trajectories;
    EvalSummary summary;
};

inline EvalSummary summarize_scores(const std::vector<double>& scores, int bins = 16) {
    EvalSummary s;
    if (scores.empty()) return s;
    for (double x : scores) s.mean += x;
    s.mean /= double(scores.size());
    for (double x : scores) s.stddev += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(s.stddev / double(scores.size()));

    const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
    double lo = *lo_it, hi = *hi_it;
    if (lo == hi) hi = lo + 1.0;
    s.histogram.resize(std::size_t(bins));
    const double width = (hi - lo) / bins;
    for (int b = 0; b < bins; ++b) {
        s.histogram[std::size_t(b)].left = lo + b * width;
        s.histogram[std::size_t(b)].right = lo + (b + 1) * width;
    }
    for (double x : scores) {
        int b = int((x - lo) / width);
        b = std::clamp(b, 0, bins - 1);
        s.histogram[std::size_t(b)].count++;
    }
    return s;
}

/// Deterministic gated decoding: the proxy action is the argmax of its masked
/// action probabilities (ties accept). Scores every prompt with the oracle.
inline EvalResult evaluate(const Generator& gen, const ProxyParams& params,
                           const FeatureExtractor& features, const SkamConfig& cfg,
                           const RewardFn& oracle, const std::vector<TokenSeq>& prompts) {
    EvalResult result;
    Rng unused(0);
    for (const TokenSeq& prompt : prompts) {
        Trajectory traj =
            rollout(gen, params, features, oracle, cfg, prompt, unused, DecodeMode::Greedy);
        result.scores.push_back(oracle(prompt, traj.response));
        result.trajectories.push_back(std::move(traj));
    }
    result.summary = summarize_scores(result.scores);
    return result;
}

/// Ungated temperature + nucleus sampling of the generator; n draws per
/// prompt, keep the best oracle score.
inline std::vector<double> best_of_n(const Generator& gen, const RewardFn& oracle,
                                     const std::vector<TokenSeq>& prompts, int n,
                                     const SkamConfig& cfg, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("n must be >= 1");
    std::vector<double> best(prompts.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        for (int j = 0; j < n; ++j) {
            Rng rng(derive_seed(derive_seed(seed, 0xb0e50000ull + i), std::uint64_t(j)));
            TokenSeq response;
            TokenSeq prefix = prompts[i];
            while (int(response.size()) < cfg.max_response_len) {
                const Vec probs = apply_temperature(gen.logits(prefix), cfg.temperature);
                const TokenSeq pool = nucleus_filter(probs, cfg.top_p);
                Vec weights;
                double total = 0.0;
                for (TokenId t : pool) {
                    weights.push_back(probs[std::size_t(t)]);
                    total += probs[std::size_t(t)];
                }
                const TokenId t = pool[rng.weighted_pick(weights, total)];
                response.push_back(t);
                prefix.push_back(t);
                if (t == gen.vocab().eos_id) break;
            }
            best[i] = std::max(best[i], oracle(prompts[i], response));
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Optimal gate search

namespace detail {

// Tokens an adversarial gate can make the accepted token at one position:
// the proposal chain up to and including the first candidate whose rejection
// is masked.
inline TokenSeq reachable_tokens(const Vec& probs, const TokenSeq& pool, double p_t) {
    TokenSeq reachable;
    TokenSeq rejected;
    while (true) {
        const TokenId t = next_candidate(probs, pool, rejected);
        reachable.push_back(t);
        if (allowed_actions(probs, pool, rejected, p_t).accept_only()) break;
        rejected.insert(std::upper_bound(rejected.begin(), rejected.end(), t), t);
    }
    return reachable;
}

}  // namespace detail

/// Exact best achievable oracle score over all gate decision sequences,
/// by exhaustive depth-first search over the decision tree. Exponential in
/// max_response_len; intended for small instances and for cross-checking
/// optimal_gate_score_context_free.
inline double optimal_gate_score_exhaustive(const Generator& gen, const SkamConfig& cfg,
                                            const RewardFn& oracle, const TokenSeq& prompt,
                                            long max_nodes = 2000000) {
    if (cfg.max_decisions != 0)
        throw std::invalid_argument("optimal gate search requires max_decisions == 0");
    long nodes = 0;
    TokenSeq accepted;
    std::function<double()> best_from = [&]() -> double {
        if (++nodes > max_nodes)
            throw std::runtime_error("instance too large for exhaustive gate search");
        TokenSeq prefix = prompt;
        prefix.insert(prefix.end(), accepted.begin(), accepted.end());
        const Vec probs = apply_temperature(gen.logits(prefix), cfg.temperature);
        const TokenSeq pool = nucleus_filter(probs, cfg.top_p);
        double best = -std::numeric_limits<double>::infinity();
        for (TokenId t : detail::reachable_tokens(probs, pool, cfg.p_t)) {
            accepted.push_back(t);
            const bool terminal =
                t == gen.vocab().eos_id || int(accepted.size()) >= cfg.max_response_len;
            const double s = terminal ? oracle(prompt, accepted) : best_from();
            best = std::max(best, s);
            accepted.pop_back();
        }
        return best;
    };
    return best_from();
}

/// Exact optimum for a position-independent generator (a table with only the
/// fallback row, or a unigram model) under a forbidden-token oracle: the
/// per-token penalty is additive, so a backward pass over positions suffices.
inline double optimal_gate_score_context_free(const Generator& gen, const SkamConfig& cfg,
                                              const OracleSpec& oracle, const TokenSeq& prompt) {
    if (oracle.kind != OracleSpec::Kind::Forbidden)
        throw std::invalid_argument("context-free gate optimum requires a forbidden oracle");
    if (cfg.max_decisions != 0)
        throw std::invalid_argument("optimal gate search requires max_decisions == 0");

    const Vec probs = apply_temperature(gen.logits(prompt), cfg.temperature);
    const TokenSeq pool = nucleus_filter(probs, cfg.top_p);
    const TokenSeq reachable = detail::reachable_tokens(probs, pool, cfg.p_t);
    const auto marginal = [&](TokenId t) {
        return oracle.forbidden.count(t) ? -oracle.penalty : 0.0;
    };

    double value_next = 0.0;  // value at position i+1
    for (int i = cfg.max_response_len - 1; i >= 0; --i) {
        double best = -std::numeric_limits<double>::infinity();
        for (TokenId t : reachable) {
            const bool terminal = t == gen.vocab().eos_id || i + 1 >= cfg.max_response_len;
            best = std::max(best, marginal(t) + (terminal ? 0.0 : value_next));
        }
        value_next = best;
    }
    return value_next;
}

// ---------------------------------------------------------------------------
// Monte Carlo vs analytic selection distribution

struct McReport {
    Vec analytic;
    Vec empirical;
    double max_deviation = 0.0;
};

/// Compares the analytic per-position selection distribution against Monte
/// Carlo frequencies of the first accepted token at `prefix`. The analytic
/// rejection probability of each candidate is the proxy's output in the
/// exact chain state (earlier candidates rejected).
inline McReport mc_oracle_check(const Generator& gen, const ProxyParams& params,
                                const FeatureExtractor& features, const SkamConfig& cfg,
                                const TokenSeq& prefix, long trials, std::uint64_t seed) {
    McReport report;
    GateState state = start_episode(gen, cfg, prefix);
    const Vec hidden = gen.hidden(prefix);
    const Vec& probs = state.probs;
    const TokenSeq& pool = state.pool;

    Vec reject_probs(probs.size(), 0.0);
    {
        TokenSeq rejected;
        for (std::size_t depth = 0; depth < pool.size(); ++depth) {
            const TokenId t = next_candidate(probs, pool, rejected);
            const Vec f = features.extract(hidden, t, probs, pool, rejected, 0,
                                           cfg.max_response_len);
            reject_probs[std::size_t(t)] = forward(params, f).action_probs[1];
            rejected.insert(std::upper_bound(rejected.begin(), rejected.end(), t), t);
        }
    }
    report.analytic = position_selection_distribution(probs, pool, cfg.p_t, reject_probs);

    report.empirical.assign(probs.size(), 0.0);
    Rng rng(derive_seed(seed, 0x3c0ffeeull));
    for (long trial = 0; trial < trials; ++trial) {
        TokenSeq rejected;
        while (true) {
            const TokenId t = next_candidate(probs, pool, rejected);
            if (allowed_actions(probs, pool, rejected, cfg.p_t).accept_only()) {
                report.empirical[std::size_t(t)] += 1.0;
                break;
            }
            const Vec f = features.extract(hidden, t, probs, pool, rejected, 0,
                                           cfg.max_response_len);
            const double p_reject = forward(params, f).action_probs[1];
            if (rng.uniform() < p_reject) {
                rejected.insert(std::upper_bound(rejected.begin(), rejected.end(), t), t);
            } else {
                report.empirical[std::size_t(t)] += 1.0;
                break;
            }
        }
    }
    for (double& x : report.empirical) x /= double(trials);
    for (std::size_t t = 0; t < probs.size(); ++t)
        report.max_deviation =
            std::max(report.max_deviation, std::abs(report.analytic[t] - report.empirical[t]));
    return report;
}

// ---------------------------------------------------------------------------
// Hyper-parameter / data-budget sweep

struct SweepGrid {
    std::vector<double> p_t_values;
    std::vector<double> temperatures;
    std::vector<long> budgets;  // episode counts; 0 = train to the full step budget
};

struct SweepCell {
    double p_t = 0.0;
    double temperature = 1.0;
    long budget = 0;
    double mean_score = 0.0;
    double stderr_score = 0.0;
    long episodes = 0;
};

/// Trains one fresh proxy per (p_t, temperature, budget) cell and evaluates
/// it on the test prompts. Cell seeds derive from the cell index, so cells
/// are independent jobs and may run concurrently.
inline std::vector<SweepCell> sweep(const Generator& gen, const RewardFn& oracle,
                                    const SkamConfig& base_skam, const TrainConfig& base_train,
                                    const ProxyConfig& proxy_cfg, const PromptSet& prompts,
                                    const SweepGrid& grid, int workers = 1) {
    if (grid.p_t_values.empty() || grid.temperatures.empty() || grid.budgets.empty())
        throw std::invalid_argument("sweep grid must be nonempty");

    struct Job {
        double p_t, temperature;
        long budget;
        std::size_t index;
    };
    std::vector<Job> jobs;
    for (double p_t : grid.p_t_values)
        for (double temp : grid.temperatures)
            for (long budget : grid.budgets)
                jobs.push_back({p_t, temp, budget, jobs.size()});

    std::vector<SweepCell> cells(jobs.size());
    auto run_job = [&](const Job& job) {
        SkamConfig skam = base_skam;
        skam.p_t = job.p_t;
        skam.temperature = job.temperature;
        TrainConfig tcfg = base_train;
        tcfg.seed = derive_seed(base_train.seed, 0x5eedce11ull + job.index);

        const FeatureExtractor features(gen.vocab().size, proxy_cfg.embed_dim, gen.hidden_dim(),
                                        tcfg.seed);
        ProxyParams init = init_params(features.dim(), proxy_cfg.hidden_size, tcfg.seed);
        TrainResult trained = train(gen, oracle, skam, tcfg, features, std::move(init),
                                    prompts.train, 1, job.budget);
        const EvalResult eval =
            evaluate(gen, trained.params, features, skam, oracle, prompts.test);

        SweepCell cell;
        cell.p_t = job.p_t;
        cell.temperature = job.temperature;
        cell.budget = job.budget;
        cell.mean_score = eval.summary.mean;
        cell.stderr_score = eval.scores.size() > 1
                                ? eval.summary.stddev / std::sqrt(double(eval.scores.size()))
                                : 0.0;
        cell.episodes = trained.episodes;
        cells[job.index] = cell;
    };

    const int n_workers = std::max(1, std::min<int>(workers, int(jobs.size())));
    if (n_workers == 1) {
        for (const Job& job : jobs) run_job(job);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&, w]() {
                for (std::size_t k = std::size_t(w); k < jobs.size(); k += std::size_t(n_workers))
                    run_job(jobs[k]);
            });
        for (std::thread& t : pool) t.join();
    }
    return cells;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepCell>& cells) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sweep results " + path);
    out << "p_t,temperature,budget,mean_score,stderr,episodes\n";
    char buf[256];
    for (const SweepCell& c : cells) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%ld,%.10g,%.10g,%ld", c.p_t, c.temperature,
                      c.budget, c.mean_score, c.stderr_score, c.episodes);
        out << buf << '\n';
    }
}

inline void write_histogram_csv(const std::string& path, const std::vector<HistBin>& bins) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write histogram " + path);
    out << "bin_left,bin_right,count\n";
    char buf[160];
    for (const HistBin& b : bins) {
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%ld", b.left, b.right, b.count);
        out << buf << '\n';
    }
}

inline void write_scores_jsonl(const std::string& path, const std::vector<TokenSeq>& prompts,
                               const EvalResult& result) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write scores " + path);
    for (std::size_t i = 0; i < result.scores.size(); ++i) {
        nlohmann::json j;
        j["index"] = i;
        j["prompt"] = prompts[i];
        j["response"] = result.trajectories[i].response;
        j["score"] = result.scores[i];
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Diagnostics (also used by the CLI `check` subcommand)

struct CheckReport {
    std::string name;
    bool pass = false;
    std::string detail;
};

using BackwardFn =
    std::function<ProxyGrad(const ProxyParams&, const Vec&, const double[2], double)>;

/// Analytic gradients vs central finite differences on random draws.
/// The routine under test is injectable so a corrupted gradient is detectable.
inline CheckReport gradient_check(int d, int h, std::uint64_t seed, int draws, double fd_step,
                                  double tolerance, const BackwardFn& backward_fn) {
    CheckReport report;
    report.name = "gradient_check";
    double worst = 0.0;
    for (int draw = 0; draw < draws; ++draw) {
        Rng rng(derive_seed(seed, 0x9aadce11ull + std::uint64_t(draw)));
        ProxyParams p = init_params(d, h, rng.next_u64());
        Vec f(static_cast<std::size_t>(d));
        for (double& x : f) x = rng.normal();
        const double g2[2] = {rng.normal(), rng.normal()};
        const double gv = rng.normal();

        const ProxyGrad analytic = backward_fn(p, f, g2, gv);
        const auto objective = [&](const ProxyParams& q) {
            const PolicyOutput out = forward(q, f);
            return g2[0] * out.action_logits[0] + g2[1] * out.action_logits[1] + gv * out.value;
        };
        const auto probe = [&](double* slot, double analytic_g) {
            const double saved = *slot;
            *slot = saved + fd_step;
            const double up = objective(p);
            *slot = saved - fd_step;
            const double down = objective(p);
            *slot = saved;
            const double numeric = (up - down) / (2.0 * fd_step);
            const double rel = std::abs(analytic_g - numeric) /
                               std::max({std::abs(analytic_g), std::abs(numeric), 1e-4});
            worst = std::max(worst, rel);
        };
        for (std::size_t i = 0; i < p.w1.size(); ++i) probe(&p.w1[i], analytic.w1[i]);
        for (std::size_t i = 0; i < p.b1.size(); ++i) probe(&p.b1[i], analytic.b1[i]);
        for (std::size_t i = 0; i < p.w_act.size(); ++i) probe(&p.w_act[i], analytic.w_act[i]);
        for (std::size_t i = 0; i < p.b_act.size(); ++i) probe(&p.b_act[i], analytic.b_act[i]);
        for (std::size_t i = 0; i < p.w_val.size(); ++i) probe(&p.w_val[i], analytic.w_val[i]);
        probe(&p.b_val, analytic.b_val);
    }
    report.pass = worst < tolerance;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max relative error %.3g over %d draws (tol %.1g)", worst,
                  draws, tolerance);
    report.detail = buf;
    return report;
}

inline CheckReport gradient_check(int d, int h, std::uint64_t seed, int draws = 100,
                                  double fd_step = 1e-5, double tolerance = 1e-4) {
    return gradient_check(d, h, seed, draws, fd_step, tolerance,
                          [](const ProxyParams& p, const Vec& f, const double g2[2], double gv) {
                              return backward(p, f, g2, gv);
                          });
}

/// Rejection must be masked exactly when the mean remaining probability is
/// at most p_t or a single candidate remains; checked against a direct
/// re-evaluation on random triples.
inline CheckReport skam_mask_check(std::uint64_t seed, int samples) {
    CheckReport report;
    report.name = "skam_mask_check";
    long violations = 0;
    for (int i = 0; i < samples; ++i) {
        Rng rng(derive_seed(seed, 0x5ca40000ull + std::uint64_t(i)));
        const int v = 2 + int(rng.below(11));
        Vec probs(std::size_t(v), 0.0);
        double total = 0.0;
        for (double& p : probs) {
            p = rng.uniform() + 1e-9;
            total += p;
        }
        for (double& p : probs) p /= total;
        TokenSeq pool(std::size_t(v), 0);
        std::iota(pool.begin(), pool.end(), 0);
        TokenSeq rejected;
        for (TokenId t = 0; t < v; ++t)
            if (rng.uniform() < 0.4 && int(rejected.size()) + 1 < v) rejected.push_back(t);
        double p_t = rng.uniform();
        if (i % 7 == 0) p_t = 0.0;
        if (i % 11 == 0) p_t = 1.0;

        double remaining = 0.0;
        int n = 0;
        for (TokenId t = 0; t < v; ++t) {
            if (std::binary_search(rejected.begin(), rejected.end(), t)) continue;
            remaining += probs[std::size_t(t)];
            n++;
        }
        const bool expect_accept_only = n == 1 || remaining <= p_t * n;
        if (allowed_actions(probs, pool, rejected, p_t).accept_only() != expect_accept_only)
            violations++;
    }
    report.pass = violations == 0;
    report.detail = std::to_string(violations) + " violations in " + std::to_string(samples) +
                    " samples";
    return report;
}

inline CheckReport mc_selection_check(const Generator& gen, const ProxyParams& params,
                                      const FeatureExtractor& features, const SkamConfig& cfg,
                                      const TokenSeq& prefix, long trials, double threshold,
                                      std::uint64_t seed) {
    const McReport mc = mc_oracle_check(gen, params, features, cfg, prefix, trials, seed);
    CheckReport report;
    report.name = "mc_selection_check";
    report.pass = mc.max_deviation < threshold;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max deviation %.5f over %ld trials (threshold %.3f)",
                  mc.max_deviation, trials, threshold);
    report.detail = buf;
    return report;
}

}  // namespace proxygate
