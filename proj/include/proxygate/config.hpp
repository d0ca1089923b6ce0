#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include "json.hpp"
#include "proxygate/environment.hpp"
#include "proxygate/experiments.hpp"
#include "proxygate/rewards.hpp"
#include "proxygate/trainer.hpp"
#include "proxygate/types.hpp"

namespace proxygate {

/// Everything a run needs, parsed and validated. The materialized form (all
/// defaults made explicit) is what gets hashed and embedded in the manifest,
/// so a run is reproducible from the manifest alone.
struct RunConfig {
    std::string generator_path;     // empty when the spec was inlined
    nlohmann::json generator_json;  // resolved generator spec
    SkamConfig skam;
    TrainConfig train;
    ProxyConfig proxy;
    PromptSetConfig prompts;
    OracleSpec oracle;
    std::uint64_t seed = 42;
};

namespace detail {

inline void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) throw ConfigError(field + ": " + what);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string(key) + ": wrong type");
    }
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {}) {
    using detail::get_or;
    using detail::require;
    RunConfig cfg;

    if (j.contains("generator_path")) {
        std::filesystem::path p = j.at("generator_path").get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        cfg.generator_path = p.string();
        std::ifstream in(cfg.generator_path);
        if (!in) throw ConfigError("generator_path: cannot open " + cfg.generator_path);
        cfg.generator_json = nlohmann::json::parse(in);
        // resolve a relative corpus path against the generator file location
        if (cfg.generator_json.contains("ngram") &&
            cfg.generator_json["ngram"].contains("corpus_path")) {
            std::filesystem::path cp =
                cfg.generator_json["ngram"]["corpus_path"].get<std::string>();
            if (cp.is_relative())
                cfg.generator_json["ngram"]["corpus_path"] =
                    (std::filesystem::path(cfg.generator_path).parent_path() / cp).string();
        }
    } else if (j.contains("generator")) {
        cfg.generator_json = j.at("generator");
    } else {
        throw ConfigError("generator_path: missing (or inline 'generator')");
    }

    const nlohmann::json skam = j.value("skam", nlohmann::json::object());
    cfg.skam.p_t = get_or(skam, "p_t", 0.01);
    cfg.skam.temperature = get_or(skam, "temperature", 1.0);
    cfg.skam.top_p = get_or(skam, "top_p", 1.0);
    cfg.skam.max_response_len = get_or(skam, "max_response_len", 16);
    cfg.skam.gamma_terminal_only = get_or(skam, "gamma_terminal_only", true);
    cfg.skam.max_decisions = get_or(skam, "max_decisions", 0);
    require(cfg.skam.p_t >= 0.0 && cfg.skam.p_t <= 1.0, "skam.p_t", "must be in [0, 1]");
    require(cfg.skam.temperature > 0.0, "skam.temperature", "must be > 0");
    require(cfg.skam.top_p > 0.0 && cfg.skam.top_p <= 1.0, "skam.top_p", "must be in (0, 1]");
    require(cfg.skam.max_response_len >= 1, "skam.max_response_len", "must be >= 1");
    require(cfg.skam.max_decisions >= 0, "skam.max_decisions", "must be >= 0");

    const nlohmann::json train = j.value("train", nlohmann::json::object());
    cfg.train.learning_rate = get_or(train, "learning_rate", 3e-4);
    cfg.train.gamma = get_or(train, "gamma", 1.0);
    cfg.train.gae_lambda = get_or(train, "gae_lambda", 0.95);
    cfg.train.clip_eps = get_or(train, "clip_eps", 0.2);
    cfg.train.entropy_coef = get_or(train, "entropy_coef", 0.01);
    cfg.train.value_coef = get_or(train, "value_coef", 0.5);
    cfg.train.epochs_per_batch = get_or(train, "epochs_per_batch", 4);
    cfg.train.minibatch_size = get_or(train, "minibatch_size", 64);
    cfg.train.episodes_per_batch = get_or(train, "episodes_per_batch", 16);
    cfg.train.total_env_steps = get_or(train, "total_env_steps", 50000L);
    require(cfg.train.learning_rate > 0.0, "train.learning_rate", "must be > 0");
    require(cfg.train.gamma > 0.0 && cfg.train.gamma <= 1.0, "train.gamma", "must be in (0, 1]");
    require(cfg.train.gae_lambda >= 0.0 && cfg.train.gae_lambda <= 1.0, "train.gae_lambda",
            "must be in [0, 1]");
    require(cfg.train.clip_eps > 0.0, "train.clip_eps", "must be > 0");
    require(cfg.train.entropy_coef >= 0.0, "train.entropy_coef", "must be >= 0");
    require(cfg.train.value_coef > 0.0, "train.value_coef", "must be > 0");
    require(cfg.train.epochs_per_batch >= 1, "train.epochs_per_batch", "must be >= 1");
    require(cfg.train.minibatch_size >= 1, "train.minibatch_size", "must be >= 1");
    require(cfg.train.episodes_per_batch >= 1, "train.episodes_per_batch", "must be >= 1");
    require(cfg.train.total_env_steps >= 1, "train.total_env_steps", "must be >= 1");

    const nlohmann::json proxy = j.value("proxy", nlohmann::json::object());
    cfg.proxy.hidden_size = get_or(proxy, "hidden_size", 64);
    cfg.proxy.embed_dim = get_or(proxy, "embed_dim", 8);
    require(cfg.proxy.hidden_size >= 1, "proxy.hidden_size", "must be >= 1");
    require(cfg.proxy.embed_dim >= 1, "proxy.embed_dim", "must be >= 1");

    const nlohmann::json prompts = j.value("prompts", nlohmann::json::object());
    cfg.prompts.train_size = get_or(prompts, "train_size", 512);
    cfg.prompts.test_size = get_or(prompts, "test_size", 128);
    cfg.prompts.min_len = get_or(prompts, "min_len", 1);
    cfg.prompts.max_len = get_or(prompts, "max_len", 4);
    require(cfg.prompts.train_size >= 1, "prompts.train_size", "must be >= 1");
    require(cfg.prompts.test_size >= 1, "prompts.test_size", "must be >= 1");
    require(cfg.prompts.min_len >= 1, "prompts.min_len", "must be >= 1");
    require(cfg.prompts.max_len >= cfg.prompts.min_len, "prompts.max_len", "must be >= min_len");

    if (!j.contains("oracle")) throw ConfigError("oracle: missing");
    cfg.oracle = OracleSpec::from_json(j.at("oracle"));

    cfg.seed = get_or(j, "seed", std::uint64_t(42));
    cfg.train.seed = cfg.seed;
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_run_config(j, std::filesystem::path(path).parent_path());
}

/// Canonical config with every default made explicit. nlohmann::json keeps
/// object keys sorted, so dump() is a stable canonical form.
inline nlohmann::json materialize_config(const RunConfig& cfg) {
    nlohmann::json j;
    j["generator"] = cfg.generator_json;
    j["skam"] = {{"p_t", cfg.skam.p_t},
                 {"temperature", cfg.skam.temperature},
                 {"top_p", cfg.skam.top_p},
                 {"max_response_len", cfg.skam.max_response_len},
                 {"gamma_terminal_only", cfg.skam.gamma_terminal_only},
                 {"max_decisions", cfg.skam.max_decisions}};
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"gamma", cfg.train.gamma},
                  {"gae_lambda", cfg.train.gae_lambda},
                  {"clip_eps", cfg.train.clip_eps},
                  {"entropy_coef", cfg.train.entropy_coef},
                  {"value_coef", cfg.train.value_coef},
                  {"epochs_per_batch", cfg.train.epochs_per_batch},
                  {"minibatch_size", cfg.train.minibatch_size},
                  {"episodes_per_batch", cfg.train.episodes_per_batch},
                  {"total_env_steps", cfg.train.total_env_steps}};
    j["proxy"] = {{"hidden_size", cfg.proxy.hidden_size}, {"embed_dim", cfg.proxy.embed_dim}};
    j["prompts"] = {{"train_size", cfg.prompts.train_size},
                    {"test_size", cfg.prompts.test_size},
                    {"min_len", cfg.prompts.min_len},
                    {"max_len", cfg.prompts.max_len}};
    j["oracle"] = cfg.oracle.to_json();
    j["seed"] = cfg.seed;
    return j;
}

/// FNV-1a 64-bit over the canonical dump, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& canonical) {
    const std::string s = canonical.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct RunManifest {
    std::string run_id;
    std::string hash;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::map<std::string, std::string> artifacts;
};

inline RunManifest make_manifest(const std::string& kind, const RunConfig& cfg) {
    RunManifest m;
    m.config = materialize_config(cfg);
    m.hash = config_hash(m.config);
    m.seed = cfg.seed;
    m.run_id = kind + "-" + m.hash.substr(0, 8) + "-seed" + std::to_string(cfg.seed);
    return m;
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    nlohmann::json j;
    j["run_id"] = m.run_id;
    j["config_hash"] = m.hash;
    j["seed"] = m.seed;
    j["config"] = m.config;
    j["artifacts"] = m.artifacts;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path);
    out << j.dump(1) << '\n';
}

}  // namespace proxygate
