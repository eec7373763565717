#pragma once

// JSON-lines dataset manifests: one {"image": "<relpath>", "caption": "<text>"}
// object per line, image paths relative to the manifest's directory.

#include "tracemark/error.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace tracemark {

struct CaptionedPair {
    std::string image_path;
    std::string caption;

    friend bool operator==(const CaptionedPair&, const CaptionedPair&) = default;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<CaptionedPair> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    std::filesystem::path image_file(std::size_t i) const { return root / pairs.at(i).image_path; }
};

namespace detail {

inline bool escapes_root(const std::filesystem::path& rel) {
    if (rel.empty() || rel.is_absolute() || rel.has_root_name()) return true;
    int depth = 0;
    for (const auto& part : rel.lexically_normal()) {
        if (part == "..") {
            if (--depth < 0) return true;
        } else if (part != ".") {
            ++depth;
        }
    }
    return false;
}

} // namespace detail

/// Parses one manifest line; `line_no` is 1-based and only used for errors.
inline CaptionedPair parse_manifest_record(const std::string& line, std::size_t line_no) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw MalformedRecordError(line_no, e.what());
    }
    if (!j.is_object()) throw MalformedRecordError(line_no, "record is not an object");
    auto field = [&](const char* key) {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string())
            throw MalformedRecordError(line_no, std::string("missing string field \"") + key + "\"");
        return it->get<std::string>();
    };
    CaptionedPair pair{field("image"), field("caption")};
    if (pair.caption.empty()) throw MalformedRecordError(line_no, "empty caption");
    if (detail::escapes_root(pair.image_path))
        throw MalformedRecordError(line_no, "image path escapes manifest root: " + pair.image_path);
    return pair;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, bool check_images = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::MissingFile, path.string());

    DatasetManifest manifest;
    manifest.root = path.parent_path();
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        manifest.pairs.push_back(parse_manifest_record(line, line_no));
    }
    if (check_images) {
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            if (!std::filesystem::is_regular_file(manifest.image_file(i)))
                throw Error(ErrorKind::MissingImage, manifest.image_file(i).string());
        }
    }
    return manifest;
}

inline std::string manifest_record(const CaptionedPair& pair) {
    nlohmann::ordered_json j;
    j["image"] = pair.image_path;
    j["caption"] = pair.caption;
    return j.dump();
}

inline void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    for (const auto& pair : manifest.pairs) out << manifest_record(pair) << '\n';
    if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

} // namespace tracemark
