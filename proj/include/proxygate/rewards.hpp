#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "proxygate/types.hpp"

namespace proxygate {

// Scoring contract: maps (prompt, response) to a real score. Deterministic and
// total on all token sequences.
using RewardFn = std::function<double(const TokenSeq& prompt, const TokenSeq& response)>;

struct OracleSpec {
    enum class Kind { Forbidden, Pattern, LengthShaped, Composite };
    Kind kind = Kind::Forbidden;

    // forbidden: -penalty per occurrence of a listed token in the response
    std::set<TokenId> forbidden;
    double penalty = 1.0;

    // pattern: +bonus per non-overlapping left-to-right occurrence of a target n-gram
    std::vector<TokenSeq> patterns;
    double bonus = 1.0;

    // length_shaped: -((len - target_len) / width)^2
    double target_len = 0.0;
    double width = 1.0;

    // composite: weighted sum of parts
    std::vector<std::pair<double, OracleSpec>> parts;

    static OracleSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

namespace detail {

inline int count_non_overlapping(const TokenSeq& hay, const TokenSeq& needle) {
    if (needle.empty() || needle.size() > hay.size()) return 0;
    int count = 0;
    std::size_t i = 0;
    while (i + needle.size() <= hay.size()) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + long(i))) {
            ++count;
            i += needle.size();
        } else {
            ++i;
        }
    }
    return count;
}

}  // namespace detail

inline double score(const OracleSpec& spec, const TokenSeq& prompt, const TokenSeq& response) {
    switch (spec.kind) {
        case OracleSpec::Kind::Forbidden: {
            int hits = 0;
            for (TokenId t : response) hits += spec.forbidden.count(t) ? 1 : 0;
            return -spec.penalty * hits;
        }
        case OracleSpec::Kind::Pattern: {
            int hits = 0;
            for (const TokenSeq& pat : spec.patterns)
                hits += detail::count_non_overlapping(response, pat);
            return spec.bonus * hits;
        }
        case OracleSpec::Kind::LengthShaped: {
            const double d = (double(response.size()) - spec.target_len) / spec.width;
            return -d * d;
        }
        case OracleSpec::Kind::Composite: {
            double total = 0.0;
            for (const auto& [w, part] : spec.parts) total += w * score(part, prompt, response);
            return total;
        }
    }
    return 0.0;
}

inline RewardFn make_reward_fn(OracleSpec spec) {
    return [spec = std::move(spec)](const TokenSeq& prompt, const TokenSeq& response) {
        return score(spec, prompt, response);
    };
}

/// Fraction of aligned pairs where a beats b; ties count 0.5.
/// win_rate(a, b) + win_rate(b, a) == 1 exactly.
inline double win_rate(const std::vector<double>& scores_a, const std::vector<double>& scores_b) {
    if (scores_a.size() != scores_b.size()) throw std::invalid_argument("length mismatch");
    if (scores_a.empty()) throw std::invalid_argument("empty score lists");
    double wins = 0.0;
    for (std::size_t i = 0; i < scores_a.size(); ++i) {
        if (scores_a[i] > scores_b[i]) wins += 1.0;
        else if (scores_a[i] == scores_b[i]) wins += 0.5;
    }
    return wins / double(scores_a.size());
}

inline OracleSpec OracleSpec::from_json(const nlohmann::json& j) {
    OracleSpec spec;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "forbidden") {
        spec.kind = Kind::Forbidden;
        for (TokenId t : j.at("tokens").get<TokenSeq>()) spec.forbidden.insert(t);
        spec.penalty = j.value("penalty", 1.0);
        if (!std::isfinite(spec.penalty)) throw ConfigError("oracle.penalty: must be finite");
    } else if (kind == "pattern") {
        spec.kind = Kind::Pattern;
        spec.patterns = j.at("patterns").get<std::vector<TokenSeq>>();
        spec.bonus = j.value("bonus", 1.0);
        if (!std::isfinite(spec.bonus)) throw ConfigError("oracle.bonus: must be finite");
    } else if (kind == "length_shaped") {
        spec.kind = Kind::LengthShaped;
        spec.target_len = j.at("target_len").get<double>();
        spec.width = j.at("width").get<double>();
        if (!(spec.width > 0.0)) throw ConfigError("oracle.width: must be > 0");
    } else if (kind == "composite") {
        spec.kind = Kind::Composite;
        for (const auto& part : j.at("parts")) {
            const double w = part.at("weight").get<double>();
            if (!std::isfinite(w)) throw ConfigError("oracle part weight: must be finite");
            spec.parts.emplace_back(w, OracleSpec::from_json(part));
        }
    } else {
        throw ConfigError("oracle.kind: unknown kind '" + kind + "'");
    }
    return spec;
}

inline nlohmann::json OracleSpec::to_json() const {
    nlohmann::json j;
    switch (kind) {
        case Kind::Forbidden:
            j["kind"] = "forbidden";
            j["tokens"] = TokenSeq(forbidden.begin(), forbidden.end());
            j["penalty"] = penalty;
            break;
        case Kind::Pattern:
            j["kind"] = "pattern";
            j["patterns"] = patterns;
            j["bonus"] = bonus;
            break;
        case Kind::LengthShaped:
            j["kind"] = "length_shaped";
            j["target_len"] = target_len;
            j["width"] = width;
            break;
        case Kind::Composite: {
            j["kind"] = "composite";
            nlohmann::json parts_json = nlohmann::json::array();
            for (const auto& [w, part] : parts) {
                nlohmann::json p = part.to_json();
                p["weight"] = w;
                parts_json.push_back(std::move(p));
            }
            j["parts"] = std::move(parts_json);
            break;
        }
    }
    return j;
}

}  // namespace proxygate
