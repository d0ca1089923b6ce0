#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <utility>
#include <vector>

#include "json.hpp"
#include "proxygate/generator.hpp"
#include "proxygate/proxy.hpp"
#include "proxygate/rewards.hpp"
#include "proxygate/rng.hpp"
#include "proxygate/types.hpp"

namespace proxygate {

struct SkamConfig {
    double p_t = 0.0;          // rejection is masked once mean remaining probability <= p_t
    double temperature = 1.0;
    double top_p = 1.0;
    int max_response_len = 16;
    bool gamma_terminal_only = true;  // false: per-accept score deltas instead of one terminal score
    int max_decisions = 0;            // 0 = no explicit cap (termination is structural)
};

/// One in-flight decoding position. The candidate is always the
/// highest-probability member of pool minus rejected; the rejected set is
/// cleared whenever a new position opens.
struct GateState {
    TokenSeq prompt;
    TokenSeq accepted;
    TokenId candidate = -1;
    TokenSeq rejected;  // current position only, sorted ascending
    TokenSeq pool;      // fixed per position after temperature + nucleus, sorted ascending
    Vec probs;          // post-temperature distribution at this position
    int position = 0;   // == accepted.size()
    int decisions_taken = 0;

    TokenSeq full_prefix() const {
        TokenSeq seq = prompt;
        seq.insert(seq.end(), accepted.begin(), accepted.end());
        return seq;
    }
};

struct StepOutcome {
    GateState next_state;
    bool terminal = false;
    double reward = 0.0;
};

/// Highest-probability token of pool minus rejected; ties broken by lowest id.
inline TokenId next_candidate(const Vec& probs, const TokenSeq& pool, const TokenSeq& rejected) {
    TokenId best = -1;
    double best_p = -1.0;
    for (TokenId t : pool) {
        if (std::binary_search(rejected.begin(), rejected.end(), t)) continue;
        if (probs[std::size_t(t)] > best_p) {
            best_p = probs[std::size_t(t)];
            best = t;
        }
    }
    if (best < 0) throw std::runtime_error("pool exhausted");
    return best;
}

/// Masks rejection when the mean probability of the remaining candidates has
/// dropped to p_t, or when only one candidate is left.
inline ActionSet allowed_actions(const Vec& probs, const TokenSeq& pool, const TokenSeq& rejected,
                                 double p_t) {
    double remaining = 0.0;
    int n = 0;
    for (TokenId t : pool) {
        if (std::binary_search(rejected.begin(), rejected.end(), t)) continue;
        remaining += probs[std::size_t(t)];
        n++;
    }
    if (n == 0) throw std::runtime_error("pool exhausted");
    ActionSet set;
    set.reject_allowed = n > 1 && remaining > p_t * n;
    return set;
}

/// Opens decoding position `state.position`: recomputes the distribution,
/// fixes the nucleus pool, clears the rejected set, and proposes the argmax.
inline GateState open_position(GateState state, const Generator& gen, const SkamConfig& cfg) {
    state.probs = apply_temperature(gen.logits(state.full_prefix()), cfg.temperature);
    state.pool = nucleus_filter(state.probs, cfg.top_p);
    state.rejected.clear();
    state.position = int(state.accepted.size());
    state.candidate = next_candidate(state.probs, state.pool, state.rejected);
    return state;
}

inline GateState start_episode(const Generator& gen, const SkamConfig& cfg, TokenSeq prompt) {
    GateState state;
    state.prompt = std::move(prompt);
    return open_position(std::move(state), gen, cfg);
}

/// Applies one gate decision. Accepting appends the candidate and either
/// terminates (EOS, length cap, decision cap) or opens the next position;
/// rejecting excludes the candidate at this position and proposes the next
/// one in descending-probability order.
inline StepOutcome step(const GateState& state, Action action, const Generator& gen,
                        const SkamConfig& cfg, const RewardFn& oracle) {
    if (!allowed_actions(state.probs, state.pool, state.rejected, cfg.p_t).contains(action))
        throw std::runtime_error("masked action");

    StepOutcome out;
    GateState next = state;
    next.decisions_taken++;

    if (action == Action::Reject) {
        next.rejected.insert(
            std::upper_bound(next.rejected.begin(), next.rejected.end(), next.candidate),
            next.candidate);
        next.candidate = next_candidate(next.probs, next.pool, next.rejected);
        if (cfg.max_decisions > 0 && next.decisions_taken >= cfg.max_decisions) {
            out.terminal = true;
            if (cfg.gamma_terminal_only) out.reward = oracle(next.prompt, next.accepted);
        }
        out.next_state = std::move(next);
        return out;
    }

    const double score_before =
        cfg.gamma_terminal_only ? 0.0 : oracle(next.prompt, next.accepted);
    next.accepted.push_back(next.candidate);
    const bool hit_eos = next.candidate == gen.vocab().eos_id;
    const bool hit_len = int(next.accepted.size()) >= cfg.max_response_len;
    const bool hit_budget = cfg.max_decisions > 0 && next.decisions_taken >= cfg.max_decisions;
    out.terminal = hit_eos || hit_len || hit_budget;

    if (cfg.gamma_terminal_only) {
        if (out.terminal) out.reward = oracle(next.prompt, next.accepted);
    } else {
        out.reward = oracle(next.prompt, next.accepted) - score_before;
    }

    if (!out.terminal) {
        next = open_position(std::move(next), gen, cfg);
    } else {
        next.candidate = -1;
        next.pool.clear();
        next.rejected.clear();
        next.probs.clear();
        next.position = int(next.accepted.size());
    }
    out.next_state = std::move(next);
    return out;
}

/// Probability that each pool token ends up accepted at one position, given
/// per-token rejection probabilities: walk the candidates in proposal order,
/// multiply the rejection probabilities of everything proposed earlier, and
/// apply the acceptance factor (forced to 1 where rejection is masked).
/// Sums to 1 over the pool.
inline Vec position_selection_distribution(const Vec& probs, const TokenSeq& pool, double p_t,
                                           const Vec& reject_probs) {
    std::vector<TokenId> order(pool.begin(), pool.end());
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        if (probs[std::size_t(a)] != probs[std::size_t(b)]) return probs[std::size_t(a)] > probs[std::size_t(b)];
        return a < b;
    });
    Vec out(probs.size(), 0.0);
    double suffix_mass = 0.0;
    for (TokenId t : order) suffix_mass += probs[std::size_t(t)];

    double live = 1.0;
    for (std::size_t j = 0; j < order.size(); ++j) {
        const TokenId t = order[j];
        const std::size_t remaining = order.size() - j;
        const bool forced = remaining == 1 || suffix_mass <= p_t * double(remaining);
        if (forced) {
            out[std::size_t(t)] = live;
            break;
        }
        const double r = std::clamp(reject_probs[std::size_t(t)], 0.0, 1.0);
        out[std::size_t(t)] = live * (1.0 - r);
        live *= r;
        suffix_mass -= probs[std::size_t(t)];
    }
    return out;
}

/// Product of the rejection probabilities of every pool token with strictly
/// higher probability than `token` (lower id on ties). This is the bare
/// better-token chain without the final acceptance factor, so it does not
/// normalize over the pool by itself.
inline double literal_acceptance_product(const Vec& probs, const TokenSeq& pool,
                                         const Vec& reject_probs, TokenId token) {
    double product = 1.0;
    for (TokenId t : pool) {
        if (t == token) continue;
        const bool better = probs[std::size_t(t)] > probs[std::size_t(token)] ||
                            (probs[std::size_t(t)] == probs[std::size_t(token)] && t < token);
        if (better) product *= std::clamp(reject_probs[std::size_t(t)], 0.0, 1.0);
    }
    return product;
}

struct DecisionRecord {
    Vec features;
    Action action = Action::Accept;
    double logp = 0.0;   // 0 on masked decisions
    double value = 0.0;
    double reward = 0.0;
    bool masked = false;
    int position = 0;
    TokenId candidate = -1;
};

struct Trajectory {
    std::vector<DecisionRecord> decisions;
    double episode_return = 0.0;
    TokenSeq response;
};

enum class DecodeMode { Sample, Greedy };

/// Runs one episode start-to-terminal. Sample mode draws actions from the
/// proxy distribution; greedy mode takes the argmax (ties accept). All
/// stochasticity comes from `rng`.
inline Trajectory rollout(const Generator& gen, const ProxyParams& params,
                          const FeatureExtractor& features, const RewardFn& oracle,
                          const SkamConfig& cfg, const TokenSeq& prompt, Rng& rng,
                          DecodeMode mode = DecodeMode::Sample) {
    Trajectory traj;
    GateState state = start_episode(gen, cfg, prompt);
    Vec hidden = gen.hidden(state.full_prefix());

    while (true) {
        DecisionRecord rec;
        rec.position = state.position;
        rec.candidate = state.candidate;
        rec.features = features.extract(hidden, state.candidate, state.probs, state.pool,
                                        state.rejected, state.position, cfg.max_response_len);
        const PolicyOutput out = forward(params, rec.features);
        rec.value = out.value;

        const ActionSet allowed =
            allowed_actions(state.probs, state.pool, state.rejected, cfg.p_t);
        rec.masked = allowed.accept_only();
        if (rec.masked) {
            rec.action = Action::Accept;
        } else if (mode == DecodeMode::Greedy) {
            rec.action = out.action_probs[1] > 0.5 ? Action::Reject : Action::Accept;
        } else {
            rec.action = rng.uniform() < out.action_probs[1] ? Action::Reject : Action::Accept;
        }
        rec.logp = masked_log_prob(out, rec.action, allowed);

        const Action action = rec.action;
        StepOutcome outcome = step(state, action, gen, cfg, oracle);
        rec.reward = outcome.reward;
        traj.episode_return += outcome.reward;
        traj.decisions.push_back(std::move(rec));

        state = std::move(outcome.next_state);
        if (outcome.terminal) break;
        if (action == Action::Accept) hidden = gen.hidden(state.full_prefix());
    }
    traj.response = std::move(state.accepted);
    return traj;
}

inline Trajectory rollout(const Generator& gen, const ProxyParams& params,
                          const FeatureExtractor& features, const RewardFn& oracle,
                          const SkamConfig& cfg, const TokenSeq& prompt, std::uint64_t seed,
                          DecodeMode mode = DecodeMode::Sample) {
    Rng rng(seed);
    return rollout(gen, params, features, oracle, cfg, prompt, rng, mode);
}

/// One JSONL record per decision.
inline void write_trace_jsonl(std::ostream& out, int episode, const Trajectory& traj) {
    for (const DecisionRecord& rec : traj.decisions) {
        nlohmann::json j;
        j["episode"] = episode;
        j["position"] = rec.position;
        j["candidate"] = rec.candidate;
        j["action"] = int(rec.action);
        j["logp"] = rec.logp;
        j["value"] = rec.value;
        j["masked"] = rec.masked;
        j["reward"] = rec.reward;
        out << j.dump() << '\n';
    }
}

}  // namespace proxygate
