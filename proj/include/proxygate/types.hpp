#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace proxygate {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Probability (or logit) vector indexed by token id.
using Vec = std::vector<double>;

struct Vocab {
    int size = 0;
    TokenId eos_id = 0;
    std::vector<std::string> labels;  // optional, empty or exactly `size` entries

    bool valid_token(TokenId t) const { return t >= 0 && t < size; }
};

// Gate decision: 0 accepts the candidate token, 1 rejects it.
enum class Action : int { Accept = 0, Reject = 1 };

// Action set after masking. Accept is always available; Reject may be masked.
struct ActionSet {
    bool reject_allowed = true;

    bool contains(Action a) const { return a == Action::Accept || reject_allowed; }
    bool accept_only() const { return !reject_allowed; }
};

// Raised on malformed run configs and fixture files. CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an optimizer update produces non-finite values. CLI maps this to exit code 2.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace proxygate
