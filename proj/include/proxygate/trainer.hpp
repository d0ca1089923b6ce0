#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "proxygate/environment.hpp"
#include "proxygate/proxy.hpp"
#include "proxygate/rng.hpp"
#include "proxygate/types.hpp"

namespace proxygate {

struct TrainConfig {
    double learning_rate = 3e-4;
    double gamma = 1.0;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    int epochs_per_batch = 4;
    int minibatch_size = 64;
    int episodes_per_batch = 16;
    long total_env_steps = 50000;
    std::uint64_t seed = 42;
};

struct GaeResult {
    Vec advantages;
    Vec returns;
};

/// Backward recursion A_t = delta_t + gamma * lambda * A_{t+1} with
/// delta_t = r_t + gamma * V_{t+1} - V_t and terminal bootstrap V_T = 0.
inline GaeResult gae(const Vec& rewards, const Vec& values, double gamma, double lambda) {
    const std::size_t n = rewards.size();
    GaeResult out;
    out.advantages.resize(n);
    out.returns.resize(n);
    double running = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const double next_value = i + 1 < n ? values[i + 1] : 0.0;
        const double delta = rewards[i] + gamma * next_value - values[i];
        running = delta + gamma * lambda * running;
        out.advantages[i] = running;
        out.returns[i] = running + values[i];
    }
    return out;
}

/// Zero mean, unit variance, with a variance floor of 1e-8.
inline void normalize_advantages(Vec& a) {
    if (a.empty()) return;
    double mean = 0.0;
    for (double x : a) mean += x;
    mean /= double(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    var /= double(a.size());
    const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
    for (double& x : a) x = (x - mean) * inv;
}

/// Clipped surrogate for one decision: min(ratio * adv, clip(ratio) * adv).
inline double ppo_clip_term(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    return std::min(ratio * advantage, clipped);
}

struct UpdateStats {
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    double kl_estimate = 0.0;
};

/// One PPO update over a rollout batch: GAE advantages (normalized across the
/// batch's unmasked decisions), then epochs of shuffled minibatch gradient
/// descent on the clipped surrogate plus value and entropy terms. Masked
/// decisions carry no policy or entropy gradient; they still train the value
/// head. Returns stats averaged over all minibatches.
inline UpdateStats ppo_update(ProxyParams& params, const std::vector<Trajectory>& trajectories,
                              const TrainConfig& cfg, Rng& rng) {
    if (trajectories.empty()) throw std::invalid_argument("empty trajectory batch");

    struct Item {
        const Vec* features;
        int action;
        double logp_old;
        double advantage;
        double ret;
        bool masked;
    };
    std::vector<Item> items;
    Vec unmasked_adv;
    for (const Trajectory& traj : trajectories) {
        Vec rewards, values;
        rewards.reserve(traj.decisions.size());
        values.reserve(traj.decisions.size());
        for (const DecisionRecord& rec : traj.decisions) {
            rewards.push_back(rec.reward);
            values.push_back(rec.value);
        }
        const GaeResult g = gae(rewards, values, cfg.gamma, cfg.gae_lambda);
        for (std::size_t i = 0; i < traj.decisions.size(); ++i) {
            const DecisionRecord& rec = traj.decisions[i];
            items.push_back({&rec.features, int(rec.action), rec.logp, g.advantages[i],
                             g.returns[i], rec.masked});
            if (!rec.masked) unmasked_adv.push_back(g.advantages[i]);
        }
    }
    normalize_advantages(unmasked_adv);
    {
        std::size_t k = 0;
        for (Item& it : items)
            if (!it.masked) it.advantage = unmasked_adv[k++];
    }

    std::vector<std::size_t> indices(items.size());
    std::iota(indices.begin(), indices.end(), 0);

    UpdateStats stats;
    int minibatches = 0;
    for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
        shuffle(indices, rng);
        for (std::size_t start = 0; start < indices.size();
             start += std::size_t(cfg.minibatch_size)) {
            const std::size_t end =
                std::min(indices.size(), start + std::size_t(cfg.minibatch_size));
            const std::size_t n_all = end - start;
            std::size_t n_pol = 0;
            for (std::size_t k = start; k < end; ++k)
                if (!items[indices[k]].masked) n_pol++;

            ProxyGrad grad(params);
            double mb_policy = 0.0, mb_value = 0.0, mb_entropy = 0.0, mb_clip = 0.0, mb_kl = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const Item& it = items[indices[k]];
                const PolicyOutput out = forward(params, *it.features);
                double grad_logits[2] = {0.0, 0.0};
                const double vdiff = out.value - it.ret;
                const double grad_value = cfg.value_coef * 2.0 * vdiff / double(n_all);
                mb_value += vdiff * vdiff / double(n_all);

                if (!it.masked && n_pol > 0) {
                    const double logp_new = std::log(out.action_probs[it.action]);
                    const double ratio = std::exp(logp_new - it.logp_old);
                    const double unclipped = ratio * it.advantage;
                    const double clipped =
                        std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * it.advantage;
                    mb_policy -= std::min(unclipped, clipped) / double(n_pol);
                    mb_clip += (std::abs(ratio - 1.0) > cfg.clip_eps ? 1.0 : 0.0) / double(n_pol);
                    mb_kl += ((ratio - 1.0) - (logp_new - it.logp_old)) / double(n_pol);

                    if (unclipped <= clipped) {
                        const double coeff = -it.advantage * ratio / double(n_pol);
                        for (int a = 0; a < 2; ++a)
                            grad_logits[a] +=
                                coeff * ((a == it.action ? 1.0 : 0.0) - out.action_probs[a]);
                    }
                    const double h = out.entropy();
                    mb_entropy += h / double(n_pol);
                    for (int a = 0; a < 2; ++a) {
                        const double p = out.action_probs[a];
                        if (p > 0.0)
                            grad_logits[a] +=
                                cfg.entropy_coef * p * (std::log(p) + h) / double(n_pol);
                    }
                }
                accumulate(grad, backward(params, *it.features, grad_logits, grad_value));
            }

            const double mb_loss = mb_policy + cfg.value_coef * mb_value -
                                   cfg.entropy_coef * mb_entropy;
            if (!std::isfinite(mb_loss))
                throw DivergenceError("non-finite loss: policy=" + std::to_string(mb_policy) +
                                      " value=" + std::to_string(mb_value) +
                                      " entropy=" + std::to_string(mb_entropy));
            axpy(params, -cfg.learning_rate, grad);

            stats.policy_loss += mb_policy;
            stats.value_loss += mb_value;
            stats.entropy += mb_entropy;
            stats.clip_fraction += mb_clip;
            stats.kl_estimate += mb_kl;
            minibatches++;
        }
    }
    if (minibatches > 0) {
        stats.policy_loss /= minibatches;
        stats.value_loss /= minibatches;
        stats.entropy /= minibatches;
        stats.clip_fraction /= minibatches;
        stats.kl_estimate /= minibatches;
    }
    return stats;
}

struct MetricsRow {
    long step = 0;
    long episodes = 0;
    double mean_reward = 0.0;
    double mean_len = 0.0;
    double reject_rate = 0.0;
    double masked_frac = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_frac = 0.0;
};

inline const char* kMetricsHeader =
    "step,episodes,mean_reward,mean_len,reject_rate,masked_frac,policy_loss,value_loss,entropy,"
    "clip_frac";

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics " + path);
    out << kMetricsHeader << '\n';
    char buf[512];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%ld,%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g",
                      r.step, r.episodes, r.mean_reward, r.mean_len, r.reject_rate, r.masked_frac,
                      r.policy_loss, r.value_loss, r.entropy, r.clip_frac);
        out << buf << '\n';
    }
}

struct TrainResult {
    ProxyParams params;
    std::vector<MetricsRow> log;
    long env_steps = 0;
    long episodes = 0;
};

/// Alternates rollout batches and PPO updates until the environment-step
/// budget (or the optional episode budget) is reached. Episode seeds derive
/// from the global episode index, so the batch contents do not depend on the
/// worker count and single-worker runs reproduce bit-for-bit.
inline TrainResult train(const Generator& gen, const RewardFn& oracle, const SkamConfig& skam,
                         const TrainConfig& cfg, const FeatureExtractor& features,
                         ProxyParams params, const std::vector<TokenSeq>& prompts,
                         int workers = 1, long max_episodes = 0) {
    if (prompts.empty()) throw std::invalid_argument("empty prompt set");
    TrainResult result;
    long steps = 0;
    long episodes = 0;
    int batch_index = 0;

    while (steps < cfg.total_env_steps && (max_episodes == 0 || episodes < max_episodes)) {
        int n_ep = cfg.episodes_per_batch;
        if (max_episodes > 0) n_ep = int(std::min<long>(n_ep, max_episodes - episodes));

        std::vector<Trajectory> batch(static_cast<std::size_t>(n_ep));
        const int n_workers = std::max(1, std::min(workers, n_ep));
        auto run_slice = [&](int w, const ProxyParams& snapshot) {
            for (int e = w; e < n_ep; e += n_workers) {
                const long gi = episodes + e;
                Rng ep_rng(derive_seed(cfg.seed, 0x0e905000ull + std::uint64_t(gi)));
                const TokenSeq& prompt = prompts[std::size_t(ep_rng.below(prompts.size()))];
                batch[std::size_t(e)] = rollout(gen, snapshot, features, oracle, skam, prompt,
                                                ep_rng, DecodeMode::Sample);
            }
        };
        if (n_workers == 1) {
            run_slice(0, params);
        } else {
            std::vector<ProxyParams> snapshots(std::size_t(n_workers), params);
            std::vector<std::thread> pool;
            for (int w = 0; w < n_workers; ++w)
                pool.emplace_back(run_slice, w, std::cref(snapshots[std::size_t(w)]));
            for (std::thread& t : pool) t.join();
        }

        long batch_steps = 0, rejects = 0, masked = 0;
        double reward_sum = 0.0, len_sum = 0.0;
        for (const Trajectory& traj : batch) {
            batch_steps += long(traj.decisions.size());
            reward_sum += traj.episode_return;
            len_sum += double(traj.response.size());
            for (const DecisionRecord& rec : traj.decisions) {
                if (rec.action == Action::Reject) rejects++;
                if (rec.masked) masked++;
            }
        }

        Rng update_rng(derive_seed(cfg.seed, 0xba7c4000ull + std::uint64_t(batch_index)));
        const UpdateStats stats = ppo_update(params, batch, cfg, update_rng);

        steps += batch_steps;
        episodes += n_ep;
        batch_index++;

        MetricsRow row;
        row.step = steps;
        row.episodes = episodes;
        row.mean_reward = reward_sum / double(n_ep);
        row.mean_len = len_sum / double(n_ep);
        row.reject_rate = batch_steps > 0 ? double(rejects) / double(batch_steps) : 0.0;
        row.masked_frac = batch_steps > 0 ? double(masked) / double(batch_steps) : 0.0;
        row.policy_loss = stats.policy_loss;
        row.value_loss = stats.value_loss;
        row.entropy = stats.entropy;
        row.clip_frac = stats.clip_fraction;
        result.log.push_back(row);
    }

    result.params = std::move(params);
    result.env_steps = steps;
    result.episodes = episodes;
    return result;
}

}  // namespace proxygate
