#pragma once

// Caption tokenization, caption-containment frequencies, activation-token
// construction, and unique token-set assignment for many data users.

#include "tracemark/error.hpp"
#include "tracemark/manifest.hpp"
#include "tracemark/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tracemark {

/// Lowercases ASCII and splits on runs of non-alphanumeric ASCII. Bytes >= 0x80
/// are kept inside words so UTF-8 text is never cut mid-character.
inline std::vector<std::string> tokenize(std::string_view caption) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char c : caption) {
        if (c >= 0x80 || std::isalnum(c)) {
            current.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

inline std::set<std::string> token_set_of(std::string_view caption) {
    auto tokens = tokenize(caption);
    return {tokens.begin(), tokens.end()};
}

/// Per-token count of captions that contain the token at least once.
struct TokenStats {
    std::size_t captions = 0;
    std::map<std::string, std::size_t> counts;

    double frequency(const std::string& token) const {
        auto it = counts.find(token);
        if (it == counts.end() || captions == 0) return 0.0;
        return static_cast<double>(it->second) / static_cast<double>(captions);
    }

    bool contains(const std::string& token) const { return counts.contains(token); }
};

inline TokenStats token_frequencies(const std::vector<std::string>& captions) {
    if (captions.empty()) throw Error(ErrorKind::EmptyManifest, "no captions to analyse");
    TokenStats stats;
    stats.captions = captions.size();
    for (const auto& caption : captions)
        for (const auto& token : token_set_of(caption)) ++stats.counts[token];
    return stats;
}

inline TokenStats token_frequencies(const DatasetManifest& manifest) {
    std::vector<std::string> captions;
    captions.reserve(manifest.size());
    for (const auto& pair : manifest.pairs) captions.push_back(pair.caption);
    return token_frequencies(captions);
}

enum class TokenKind { NewToken, PreExisting, Combination };

inline const char* to_string(TokenKind k) {
    switch (k) {
        case TokenKind::NewToken: return "new_token";
        case TokenKind::PreExisting: return "pre_existing";
        case TokenKind::Combination: return "combination";
    }
    return "unknown";
}

inline TokenKind token_kind_from_string(const std::string& s) {
    if (s == "new_token") return TokenKind::NewToken;
    if (s == "pre_existing") return TokenKind::PreExisting;
    if (s == "combination") return TokenKind::Combination;
    throw Error(ErrorKind::InvalidArgument, "unknown token kind: " + s);
}

struct ActivationTokenSet {
    std::vector<std::string> tokens;
    TokenKind kind = TokenKind::PreExisting;

    bool contains(const std::string& token) const {
        return std::find(tokens.begin(), tokens.end(), token) != tokens.end();
    }

    /// Order-insensitive identity of the set.
    std::set<std::string> as_set() const { return {tokens.begin(), tokens.end()}; }
};

/// Fraction of captions containing at least one token of the set; a caption
/// holding several members counts once.
inline double set_frequency(const ActivationTokenSet& set, const std::vector<std::string>& captions) {
    if (captions.empty()) throw Error(ErrorKind::EmptyManifest, "no captions to analyse");
    std::size_t hits = 0;
    for (const auto& caption : captions) {
        const auto tokens = token_set_of(caption);
        hits += std::any_of(set.tokens.begin(), set.tokens.end(), [&](const auto& t) { return tokens.contains(t); })
                    ? 1
                    : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(captions.size());
}

struct CandidatePool {
    std::vector<std::string> tokens;
    /// Containment frequency of each token, parallel to `tokens` (may be empty
    /// when the pool was given explicitly).
    std::vector<double> frequencies;

    std::size_t size() const noexcept { return tokens.size(); }
};

/// The k lowest-frequency tokens whose frequency lies in [f_min, f_max]; ties
/// are broken lexicographically.
inline CandidatePool select_preexisting(const TokenStats& stats, double f_min, double f_max, std::size_t k) {
    if (!(f_min <= f_max)) throw Error(ErrorKind::InvalidBounds, "f_min must not exceed f_max");
    CandidatePool pool;
    if (k == 0) return pool;
    std::vector<std::pair<double, std::string>> hits;
    for (const auto& [token, count] : stats.counts) {
        const double f = static_cast<double>(count) / static_cast<double>(stats.captions);
        if (f >= f_min && f <= f_max) hits.emplace_back(f, token);
    }
    if (hits.size() < k) throw InsufficientCandidatesError(hits.size(), k);
    std::sort(hits.begin(), hits.end());
    for (std::size_t i = 0; i < k; ++i) {
        pool.tokens.push_back(hits[i].second);
        pool.frequencies.push_back(hits[i].first);
    }
    return pool;
}

inline constexpr std::size_t kMaxTokenAttempts = 10'000;

/// A 3-5 letter lowercase word absent from the vocabulary.
inline std::string construct_new_token(Seed seed, const TokenStats& vocabulary) {
    Rng rng(split(seed, "new-token"));
    for (std::size_t attempt = 0; attempt < kMaxTokenAttempts; ++attempt) {
        const std::size_t length = 3 + rng.below(3);
        std::string token(length, 'a');
        for (char& c : token) c = static_cast<char>('a' + rng.below(26));
        if (!vocabulary.contains(token)) return token;
    }
    throw Error(ErrorKind::ExhaustedAttempts, "no unused token after 10000 draws");
}

/// Number of distinct subsets of a pool of size n with sizes in [lo, hi].
/// Saturates rather than overflowing; only compared against user counts.
inline double subset_capacity(std::size_t n, std::size_t lo, std::size_t hi) {
    double total = 0.0;
    for (std::size_t k = lo; k <= hi && k <= n; ++k) {
        double c = 1.0;
        for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
        total += std::round(c);
    }
    return total;
}

/// Draws `users` pairwise-distinct token sets: each draw picks a size
/// uniformly in [min_size, max_size] and then that many distinct pool tokens,
/// redrawing whenever the set was already handed out.
inline std::vector<ActivationTokenSet> assign_token_sets(std::size_t users, std::size_t min_size,
                                                         std::size_t max_size, const CandidatePool& pool,
                                                         Seed seed) {
    const std::size_t n = pool.size();
    if (min_size < 1 || min_size > max_size || max_size > n)
        throw Error(ErrorKind::InvalidBounds, "need 1 <= L <= R <= |pool|");
    {
        std::set<std::string> unique(pool.tokens.begin(), pool.tokens.end());
        if (unique.size() != n) throw Error(ErrorKind::InvalidArgument, "candidate pool has duplicates");
    }
    const double capacity = subset_capacity(n, min_size, max_size);
    if (static_cast<double>(users) > capacity) throw PoolTooSmallError(capacity, users);

    Rng rng(split(seed, "assign-token-sets"));
    std::set<std::vector<std::size_t>> seen;
    std::vector<ActivationTokenSet> sets;
    sets.reserve(users);
    const std::size_t cap = 100 * std::max<std::size_t>(users, 1);
    std::vector<std::size_t> order(n);
    for (std::size_t draws = 0; sets.size() < users; ++draws) {
        if (draws >= cap)
            throw Error(ErrorKind::ExhaustedAttempts,
                        "no new distinct set after " + std::to_string(cap) + " draws");
        const std::size_t size = min_size + rng.below(max_size - min_size + 1);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        for (std::size_t i = 0; i < size; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
        std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
        std::sort(chosen.begin(), chosen.end());
        if (!seen.insert(chosen).second) continue;
        ActivationTokenSet set;
        set.kind = size == 1 ? TokenKind::PreExisting : TokenKind::Combination;
        for (std::size_t idx : chosen) set.tokens.push_back(pool.tokens[idx]);
        sets.push_back(std::move(set));
    }
    return sets;
}

} // namespace tracemark
