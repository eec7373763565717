#pragma once

#include "tracemark/tracemark.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <utility>
#include <vector>

namespace fixtures {

namespace fs = std::filesystem;
using namespace tracemark;

// WikiArt tokens and caption counts out of 1000 (frequencies 0.009 .. 0.018).
inline const std::vector<std::pair<std::string, std::size_t>>& wikiart_counts() {
    static const std::vector<std::pair<std::string, std::size_t>> counts = {
        {"angel", 13}, {"bridge", 16}, {"charles", 17}, {"church", 10},   {"infant", 10},
        {"lord", 9},   {"maria", 18},  {"palace", 10},  {"peasants", 18}, {"tavern", 17},
    };
    return counts;
}

inline std::vector<std::string> wikiart_tokens() {
    std::vector<std::string> out;
    for (const auto& [t, _] : wikiart_counts()) out.push_back(t);
    return out;
}

inline constexpr std::size_t kCorpusSize = 1000;
inline constexpr const char* kTavernCaption = "interior of a tavern with violin player";

/// Slot j of the 138 token-carrying captions sits at caption index 7j.
inline std::size_t token_slot(std::size_t j) { return 7 * j; }

/// 1000 captions. Every WikiArt token occurs in exactly its Table 4 count of
/// captions, no caption holds two of them, and every other word falls outside
/// the [0.009, 0.018] band.
inline std::vector<std::string> wikiart_captions() {
    static const char* subjects[] = {"river", "portrait", "garden", "harbor", "forest",
                                     "village", "mountain", "still life", "horse", "woman"};
    std::vector<std::string> captions(kCorpusSize);
    for (std::size_t i = 0; i < kCorpusSize; ++i) captions[i] = std::string("a painting of a ") + subjects[i % 10];
    std::size_t j = 0;
    // Reverse order puts the tavern caption first.
    const auto& counts = wikiart_counts();
    for (auto it = counts.rbegin(); it != counts.rend(); ++it)
        for (std::size_t c = 0; c < it->second; ++c, ++j) {
            const std::size_t i = token_slot(j);
            const std::string& token = it->first;
            captions[i] = (token == "tavern" && c == 0) ? std::string(kTavernCaption)
                                                        : "a painting of a " + std::string(subjects[i % 10]) + " with " + token;
        }
    return captions;
}

inline std::string image_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "images/%04zu.png", i);
    return buf;
}

/// Writes captions plus seeded renders as a manifest tree under `dir`.
inline DatasetManifest write_dataset(const fs::path& dir, const std::vector<std::string>& captions, std::size_t size,
                                     Seed seed) {
    DatasetManifest m{dir, {}};
    for (std::size_t i = 0; i < captions.size(); ++i) {
        m.pairs.push_back({image_name(i), captions[i]});
        save_png(render_scene(split(seed, "fixture-image", i), size, size), dir / image_name(i));
    }
    save_manifest(m, dir / "manifest.jsonl");
    return m;
}

inline DatasetManifest write_wikiart_corpus(const fs::path& dir, std::size_t size = 16, Seed seed = Seed{2024}) {
    return write_dataset(dir, wikiart_captions(), size, seed);
}

inline CandidatePool wikiart_pool() {
    return select_preexisting(token_frequencies(wikiart_captions()), 0.009, 0.018, 10);
}

/// Two Gaussian blobs in `dim` dimensions, each 3 sigma from the hyperplane
/// through the origin normal to the first axis.
inline std::vector<LabeledSample> gaussian_blobs(std::size_t per_class, std::size_t dim, Seed seed) {
    Rng rng(seed);
    std::vector<LabeledSample> out;
    for (std::size_t i = 0; i < per_class; ++i)
        for (int label : {0, 1}) {
            LabeledSample s;
            s.label = label;
            s.features.resize(dim);
            for (std::size_t d = 0; d < dim; ++d) s.features[d] = rng.normal();
            s.features[0] += label ? 3.0 : -3.0;
            out.push_back(std::move(s));
        }
    return out;
}

inline Image random_image(std::size_t w, std::size_t h, Seed seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Image img(w, h);
    for (auto& v : img.pixels()) v = rng.uniform(lo, hi);
    return img;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Seed seed) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
    return m;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("tracemark_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace fixtures
