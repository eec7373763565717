#pragma once

// Per-user dataset releases and the append-only authorization ledger.
//
// WAA (watermark-adding alignment): captions stay untouched; every image whose
// caption shares a token with the user's set is watermarked.
// TWA (token-watermark alignment): M pairs get the activation token prefixed
// to their caption ("<token>, <caption>") and their image watermarked.

#include "tracemark/error.hpp"
#include "tracemark/image_io.hpp"
#include "tracemark/manifest.hpp"
#include "tracemark/rng.hpp"
#include "tracemark/tokens.hpp"
#include "tracemark/watermark.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tracemark {

struct InjectionReport {
    std::size_t modified = 0;  // M
    std::size_t total = 0;     // N
    std::vector<std::size_t> modified_indices;

    /// Injection ratio M / N (0 for an empty dataset).
    double ratio() const {
        return total == 0 ? 0.0 : static_cast<double>(modified) / static_cast<double>(total);
    }
};

inline nlohmann::ordered_json report_to_json(const InjectionReport& r) {
    nlohmann::ordered_json j;
    j["M"] = r.modified;
    j["N"] = r.total;
    j["p"] = r.ratio();
    j["modified_indices"] = r.modified_indices;
    return j;
}

template <typename Json>
InjectionReport report_from_json(const Json& j) {
    InjectionReport r;
    r.modified = j.at("M").template get<std::size_t>();
    r.total = j.at("N").template get<std::size_t>();
    r.modified_indices = j.at("modified_indices").template get<std::vector<std::size_t>>();
    if (r.modified_indices.size() != r.modified)
        throw Error(ErrorKind::CorruptLedger, "modified_indices length differs from M");
    return r;
}

struct Release {
    std::filesystem::path dir;
    DatasetManifest manifest;
    InjectionReport report;
    std::vector<std::string> warnings;

    std::filesystem::path manifest_path() const { return dir / "manifest.jsonl"; }
};

struct ReleaseOptions {
    bool overwrite = false;
};

namespace detail {

inline void prepare_release_dir(const std::filesystem::path& dir, const ReleaseOptions& opts) {
    namespace fs = std::filesystem;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!opts.overwrite) throw Error(ErrorKind::OutputExists, dir.string());
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

/// Copies unmodified images byte-for-byte and re-encodes watermarked ones.
inline Release write_release(const DatasetManifest& source, std::vector<CaptionedPair> pairs,
                             const std::vector<bool>& marked, const WatermarkScheme& scheme,
                             const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    Release release;
    release.dir = dir;
    release.manifest.root = dir;
    release.report.total = source.size();
    for (std::size_t i = 0; i < source.size(); ++i) {
        const fs::path src = source.image_file(i);
        const fs::path dst = dir / source.pairs[i].image_path;
        fs::create_directories(dst.parent_path());
        if (marked[i]) {
            save_png(apply_scheme(load_png(src), scheme, i), dst);
            release.report.modified_indices.push_back(i);
        } else {
            fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
        }
    }
    release.report.modified = release.report.modified_indices.size();
    release.manifest.pairs = std::move(pairs);
    save_manifest(release.manifest, release.manifest_path());
    return release;
}

} // namespace detail

/// Which pairs a WAA release watermarks: those whose caption intersects the set.
inline std::vector<bool> waa_selection(const DatasetManifest& manifest, const ActivationTokenSet& set) {
    std::vector<bool> marked(manifest.size(), false);
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        for (const auto& token : tokenize(manifest.pairs[i].caption)) {
            if (set.contains(token)) {
                marked[i] = true;
                break;
            }
        }
    }
    return marked;
}

inline Release distribute_waa(const DatasetManifest& manifest, const ActivationTokenSet& set,
                              const WatermarkScheme& scheme, const std::filesystem::path& out_dir,
                              const ReleaseOptions& opts = {}) {
    if (set.tokens.empty()) throw Error(ErrorKind::EmptyTokenSet, "activation token set is empty");
    const auto marked = waa_selection(manifest, set);
    detail::prepare_release_dir(out_dir, opts);
    return detail::write_release(manifest, manifest.pairs, marked, scheme, out_dir);
}

enum class TwaSelection { Uniform, FirstM };

inline std::string prefix_caption(const std::string& token, const std::string& caption) {
    return token + ", " + caption;
}

/// Indices of the M pairs a TWA release modifies, ascending.
inline std::vector<std::size_t> twa_selection(std::size_t n, std::size_t m, Seed seed, TwaSelection mode) {
    if (m > n) throw Error(ErrorKind::MTooLarge, std::to_string(m) + " > " + std::to_string(n));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (mode == TwaSelection::Uniform) {
        Rng rng(split(seed, "twa-select"));
        for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline Release inject_twa(const DatasetManifest& manifest, const std::string& token, std::size_t m,
                          const WatermarkScheme& scheme, Seed seed, const std::filesystem::path& out_dir,
                          TwaSelection mode = TwaSelection::Uniform, const ReleaseOptions& opts = {}) {
    if (token.empty()) throw Error(ErrorKind::EmptyTokenSet, "activation token is empty");
    const auto chosen = twa_selection(manifest.size(), m, seed, mode);
    std::vector<std::string> warnings;
    if (!manifest.pairs.empty() && token_frequencies(manifest).contains(token))
        warnings.push_back("activation token \"" + token + "\" already occurs in the corpus");

    std::vector<bool> marked(manifest.size(), false);
    auto pairs = manifest.pairs;
    for (std::size_t i : chosen) {
        marked[i] = true;
        pairs[i].caption = prefix_caption(token, pairs[i].caption);
    }
    detail::prepare_release_dir(out_dir, opts);
    Release release = detail::write_release(manifest, std::move(pairs), marked, scheme, out_dir);
    release.warnings = std::move(warnings);
    return release;
}

// ---------------------------------------------------------------------------
// Ledger

struct LedgerEntry {
    std::uint64_t user_id = 0;
    ActivationTokenSet token_set;
    WatermarkScheme scheme;
    std::string created;
    InjectionReport report;
    /// Resolved run configuration of the command that produced the release.
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline nlohmann::ordered_json entry_body(const LedgerEntry& e) {
    nlohmann::ordered_json j;
    j["user_id"] = e.user_id;
    j["tokens"] = e.token_set.tokens;
    j["token_kind"] = to_string(e.token_set.kind);
    j["scheme"] = scheme_to_json(e.scheme);
    j["created"] = e.created;
    j["report"] = report_to_json(e.report);
    j["config"] = e.config;
    return j;
}

} // namespace detail

inline nlohmann::ordered_json ledger_entry_to_json(const LedgerEntry& e) {
    auto j = detail::entry_body(e);
    j["checksum"] = detail::hex64(detail::fnv1a(j.dump()));
    return j;
}

inline LedgerEntry ledger_entry_from_json(const nlohmann::ordered_json& j) {
    try {
        LedgerEntry e;
        e.user_id = j.at("user_id").get<std::uint64_t>();
        e.token_set.tokens = j.at("tokens").get<std::vector<std::string>>();
        e.token_set.kind = token_kind_from_string(j.at("token_kind").get<std::string>());
        e.scheme = scheme_from_json(j.at("scheme"));
        e.created = j.at("created").get<std::string>();
        e.report = report_from_json(j.at("report"));
        if (j.contains("config")) e.config = j.at("config");
        const std::string stored = j.at("checksum").get<std::string>();
        auto body = j;
        body.erase("checksum");
        if (detail::hex64(detail::fnv1a(body.dump())) != stored)
            throw Error(ErrorKind::CorruptLedger, "checksum mismatch for user " + std::to_string(e.user_id));
        return e;
    } catch (const nlohmann::json::exception& ex) {
        throw Error(ErrorKind::CorruptLedger, ex.what());
    } catch (const Error& ex) {
        if (ex.kind() == ErrorKind::CorruptLedger) throw;
        throw Error(ErrorKind::CorruptLedger, ex.what());
    }
}

/// Reads a ledger file; a missing file is an empty ledger.
inline std::vector<LedgerEntry> load_ledger(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return {};
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(buffer.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::CorruptLedger, e.what());
    }
    if (!doc.is_array()) throw Error(ErrorKind::CorruptLedger, "ledger is not a JSON array");
    std::vector<LedgerEntry> entries;
    std::set<std::uint64_t> ids;
    for (const auto& j : doc) {
        entries.push_back(ledger_entry_from_json(j));
        if (!ids.insert(entries.back().user_id).second)
            throw Error(ErrorKind::CorruptLedger, "duplicate user id in ledger");
    }
    return entries;
}

inline void save_ledger(const std::vector<LedgerEntry>& entries, const std::filesystem::path& path) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& e : entries) doc.push_back(ledger_entry_to_json(e));
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
        out << doc.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

/// Appends one entry; the file is rewritten atomically. Single writer only.
inline std::vector<LedgerEntry> record_release(const std::filesystem::path& ledger, LedgerEntry entry) {
    auto entries = load_ledger(ledger);
    for (const auto& e : entries)
        if (e.user_id == entry.user_id)
            throw Error(ErrorKind::DuplicateUser, "user " + std::to_string(entry.user_id));
    entries.push_back(std::move(entry));
    save_ledger(entries, ledger);
    return entries;
}

} // namespace tracemark
