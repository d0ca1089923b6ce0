#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "proxygate/types.hpp"

namespace proxygate {

/// Softmax of logits / temperature. Monotone in the logits, so ranking and
/// argmax are preserved for every temperature > 0.
inline Vec apply_temperature(const Vec& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("invalid temperature");
    double max_l = -std::numeric_limits<double>::infinity();
    for (double l : logits) max_l = std::max(max_l, l / temperature);
    Vec probs(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] / temperature - max_l);
        z += probs[i];
    }
    for (double& p : probs) p /= z;
    return probs;
}

/// Minimal descending-probability prefix whose cumulative mass reaches top_p.
/// Ties broken by ascending token id. Returned ids are sorted ascending.
inline TokenSeq nucleus_filter(const Vec& probs, double top_p) {
    const int v = int(probs.size());
    std::vector<TokenId> order(v);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    TokenSeq keep;
    double cum = 0.0;
    for (TokenId t : order) {
        keep.push_back(t);
        cum += probs[t];
        if (cum >= top_p - 1e-12) break;
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

namespace detail {

inline std::string prefix_key(const TokenSeq& prefix) {
    std::string key;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (i) key += ' ';
        key += std::to_string(prefix[i]);
    }
    return key;
}

}  // namespace detail

/// Frozen token source: scripted table rows or an add-alpha smoothed n-gram
/// model over a token corpus. Immutable after construction; concurrent
/// read-only use is safe.
class Generator {
public:
    struct TableRow {
        Vec logits;
        std::optional<Vec> hidden;  // scripted feature row, else derived from logits
    };

    static Generator table(Vocab vocab, int hidden_dim,
                           std::map<std::string, TableRow> rows, int max_len = kDefaultMaxLen) {
        Generator g;
        g.vocab_ = std::move(vocab);
        g.hidden_dim_ = hidden_dim;
        g.max_len_ = max_len;
        g.rows_ = std::move(rows);
        g.is_table_ = true;
        g.check_common();
        for (const auto& [key, row] : g.rows_) {
            if (int(row.logits.size()) != g.vocab_.size)
                throw ConfigError("table row '" + key + "' must have vocab_size logits");
            if (row.hidden && int(row.hidden->size()) != hidden_dim)
                throw ConfigError("table row '" + key + "' hidden must have hidden_dim entries");
        }
        return g;
    }

    static Generator ngram(Vocab vocab, int hidden_dim, int order, double alpha,
                           const std::vector<TokenSeq>& corpus, int max_len = kDefaultMaxLen) {
        if (order < 1) throw ConfigError("ngram order must be >= 1");
        if (!(alpha > 0.0)) throw ConfigError("ngram alpha must be > 0");
        Generator g;
        g.vocab_ = std::move(vocab);
        g.hidden_dim_ = hidden_dim;
        g.max_len_ = max_len;
        g.order_ = order;
        g.alpha_ = alpha;
        g.is_table_ = false;
        g.check_common();
        for (const TokenSeq& seq : corpus) {
            for (std::size_t i = 0; i < seq.size(); ++i) {
                if (!g.vocab_.valid_token(seq[i])) throw ConfigError("corpus token out of range");
                TokenSeq ctx = g.context_of(seq, i);
                auto& counts = g.counts_[ctx];
                if (counts.empty()) counts.assign(std::size_t(g.vocab_.size), 0);
                counts[std::size_t(seq[i])]++;
            }
        }
        return g;
    }

    const Vocab& vocab() const { return vocab_; }
    int hidden_dim() const { return hidden_dim_; }
    int max_len() const { return max_len_; }
    bool is_table() const { return is_table_; }

    /// Raw logits for the next token after `prefix`. Pure.
    Vec logits(const TokenSeq& prefix) const {
        if (is_table_) return find_row(prefix).logits;
        Vec out(std::size_t(vocab_.size));
        const Vec probs = ngram_probs(prefix);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(probs[i]);
        return out;
    }

    /// Feature row exposed to the proxy at `prefix`. Scripted for table rows
    /// that carry one; otherwise the next-token distribution padded or
    /// truncated to hidden_dim - 1, with position / max_len appended.
    Vec hidden(const TokenSeq& prefix) const {
        if (is_table_) {
            const TableRow& row = find_row(prefix);
            if (row.hidden) return *row.hidden;
            return derived_hidden(apply_temperature(row.logits, 1.0), prefix.size());
        }
        return derived_hidden(ngram_probs(prefix), prefix.size());
    }

    /// Add-alpha smoothed next-token distribution for the n-gram kind.
    Vec ngram_probs(const TokenSeq& prefix) const {
        TokenSeq ctx = context_of(prefix, prefix.size());
        const auto it = counts_.find(ctx);
        Vec probs(std::size_t(vocab_.size));
        double total = 0.0;
        if (it != counts_.end())
            total = double(std::accumulate(it->second.begin(), it->second.end(), std::int64_t(0)));
        const double denom = total + alpha_ * vocab_.size;
        for (int t = 0; t < vocab_.size; ++t) {
            const double c = it != counts_.end() ? double(it->second[std::size_t(t)]) : 0.0;
            probs[std::size_t(t)] = (c + alpha_) / denom;
        }
        return probs;
    }

    static Generator from_json(const nlohmann::json& spec,
                               const std::filesystem::path& base_dir = {});
    static Generator from_file(const std::string& path);

private:
    static constexpr int kDefaultMaxLen = 64;

    void check_common() const {
        if (vocab_.size < 1) throw ConfigError("vocab_size must be positive");
        if (!vocab_.valid_token(vocab_.eos_id)) throw ConfigError("eos_id out of range");
        if (!vocab_.labels.empty() && int(vocab_.labels.size()) != vocab_.size)
            throw ConfigError("labels must have vocab_size entries");
        if (hidden_dim_ < 1) throw ConfigError("hidden_dim must be positive");
        if (max_len_ < 1) throw ConfigError("max_len must be positive");
    }

    const TableRow& find_row(const TokenSeq& prefix) const {
        auto it = rows_.find(detail::prefix_key(prefix));
        if (it != rows_.end()) return it->second;
        it = rows_.find("*");  // fallback row for prefixes the fixture does not script
        if (it != rows_.end()) return it->second;
        throw std::runtime_error("unscripted prefix");
    }

    Vec derived_hidden(const Vec& probs, std::size_t position) const {
        Vec h(std::size_t(hidden_dim_), 0.0);
        for (std::size_t i = 0; i + 1 < h.size() && i < probs.size(); ++i) h[i] = probs[i];
        h.back() = std::min(1.0, double(position) / double(max_len_));
        return h;
    }

    // last (order - 1) tokens before `upto`, fewer near the sequence start
    TokenSeq context_of(const TokenSeq& seq, std::size_t upto) const {
        const std::size_t want = std::size_t(order_ - 1);
        const std::size_t n = std::min(want, upto);
        return TokenSeq(seq.begin() + long(upto - n), seq.begin() + long(upto));
    }

    Vocab vocab_;
    int hidden_dim_ = 1;
    int max_len_ = kDefaultMaxLen;
    bool is_table_ = true;

    std::map<std::string, TableRow> rows_;

    int order_ = 1;
    double alpha_ = 1.0;
    std::map<TokenSeq, std::vector<std::int64_t>> counts_;
};

inline Generator Generator::from_json(const nlohmann::json& spec,
                                      const std::filesystem::path& base_dir) {
    for (const char* field : {"kind", "vocab_size", "eos_id", "hidden_dim"})
        if (!spec.contains(field)) throw ConfigError(std::string("generator: missing ") + field);

    Vocab vocab;
    vocab.size = spec.at("vocab_size").get<int>();
    vocab.eos_id = spec.at("eos_id").get<TokenId>();
    if (spec.contains("labels")) vocab.labels = spec.at("labels").get<std::vector<std::string>>();
    const int hidden_dim = spec.at("hidden_dim").get<int>();
    const int max_len = spec.value("max_len", int(kDefaultMaxLen));
    const std::string kind = spec.at("kind").get<std::string>();

    if (kind == "table") {
        if (!spec.contains("table")) throw ConfigError("generator: table kind requires 'table'");
        std::map<std::string, TableRow> rows;
        for (const auto& [key, value] : spec.at("table").items()) {
            TableRow row;
            if (value.is_array()) {
                row.logits = value.get<Vec>();
            } else {
                row.logits = value.at("logits").get<Vec>();
                if (value.contains("hidden")) row.hidden = value.at("hidden").get<Vec>();
            }
            rows.emplace(key, std::move(row));
        }
        return table(std::move(vocab), hidden_dim, std::move(rows), max_len);
    }
    if (kind == "ngram") {
        if (!spec.contains("ngram")) throw ConfigError("generator: ngram kind requires 'ngram'");
        const auto& ng = spec.at("ngram");
        const int order = ng.at("order").get<int>();
        const double alpha = ng.at("alpha").get<double>();
        std::vector<TokenSeq> corpus;
        if (ng.contains("corpus_path")) {
            std::filesystem::path p = ng.at("corpus_path").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            std::ifstream in(p);
            if (!in) throw ConfigError("generator: cannot open corpus " + p.string());
            std::string line;
            while (std::getline(in, line)) {
                std::istringstream ls(line);
                TokenSeq seq;
                TokenId t;
                while (ls >> t) seq.push_back(t);
                if (!seq.empty()) corpus.push_back(std::move(seq));
            }
        } else if (ng.contains("corpus")) {
            corpus = ng.at("corpus").get<std::vector<TokenSeq>>();
        } else {
            throw ConfigError("generator: ngram requires corpus_path or corpus");
        }
        return ngram(std::move(vocab), hidden_dim, order, alpha, corpus, max_len);
    }
    throw ConfigError("generator: kind must be 'table' or 'ngram'");
}

inline Generator Generator::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open generator spec " + path);
    nlohmann::json spec = nlohmann::json::parse(in);
    return from_json(spec, std::filesystem::path(path).parent_path());
}

}  // namespace proxygate
