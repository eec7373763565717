#pragma once

// Transmission damage applied to released images: JPEG compression,
// sharpness enhancement, additive Gaussian noise, Gaussian blur, and a
// down/up resize round trip. Defaults are the robustness-study settings.

#include "tracemark/authorize.hpp"
#include "tracemark/detect.hpp"
#include "tracemark/error.hpp"
#include "tracemark/image.hpp"
#include "tracemark/image_io.hpp"
#include "tracemark/manifest.hpp"
#include "tracemark/rng.hpp"
#include "tracemark/watermark.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <variant>

namespace tracemark {

struct JpegSpec {
    int quality = 5;
};
struct SharpenSpec {
    double factor = 10.0;
};
enum class NoiseScale { EightBit, Unit };
struct GaussianNoiseSpec {
    double mean = 0.0;
    double variance = 1.0;
    Seed seed{};
    /// EightBit reads mean and variance on the 0..255 scale.
    NoiseScale scale = NoiseScale::EightBit;
};
struct GaussianBlurSpec {
    double sigma = 1.0;
};
struct ResizeRoundtripSpec {
    std::size_t down_w = 256;
    std::size_t down_h = 256;
};

using DegradeSpec = std::variant<JpegSpec, SharpenSpec, GaussianNoiseSpec, GaussianBlurSpec, ResizeRoundtripSpec>;

inline std::vector<DegradeSpec> default_degradations(Seed noise_seed = {}) {
    return {JpegSpec{}, SharpenSpec{}, GaussianNoiseSpec{0.0, 1.0, noise_seed, NoiseScale::EightBit},
            GaussianBlurSpec{}, ResizeRoundtripSpec{}};
}

inline const char* degrade_name(const DegradeSpec& spec) {
    switch (spec.index()) {
        case 0: return "jpeg";
        case 1: return "sharpen";
        case 2: return "noise";
        case 3: return "blur";
        default: return "resize";
    }
}

inline std::string degrade_parameters(const DegradeSpec& spec) {
    char buf[128];
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, JpegSpec>) std::snprintf(buf, sizeof buf, "quality=%d", s.quality);
            else if constexpr (std::is_same_v<T, SharpenSpec>) std::snprintf(buf, sizeof buf, "factor=%g", s.factor);
            else if constexpr (std::is_same_v<T, GaussianNoiseSpec>)
                std::snprintf(buf, sizeof buf, "mean=%g var=%g scale=%s", s.mean, s.variance,
                              s.scale == NoiseScale::EightBit ? "8bit" : "unit");
            else if constexpr (std::is_same_v<T, GaussianBlurSpec>) std::snprintf(buf, sizeof buf, "sigma=%g", s.sigma);
            else std::snprintf(buf, sizeof buf, "down=%zux%zu", s.down_w, s.down_h);
        },
        spec);
    return buf;
}

/// Normalized Gaussian taps for radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Separable Gaussian blur with replicate padding.
inline Image gaussian_blur(const Image& img, double sigma) {
    const auto k = gaussian_kernel(sigma);
    if (k.size() == 1 || img.empty()) return img;
    const long radius = static_cast<long>(k.size() / 2);
    const long w = static_cast<long>(img.width()), h = static_cast<long>(img.height());
    const auto src = img.pixels();
    Image tmp(img.width(), img.height());
    auto t = tmp.pixels();
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    const long xx = std::clamp(x + i, 0L, w - 1);
                    acc += k[static_cast<std::size_t>(i + radius)] * src[static_cast<std::size_t>(y * w + xx) * 3 + c];
                }
                t[static_cast<std::size_t>(y * w + x) * 3 + c] = acc;
            }
    Image out(img.width(), img.height());
    auto o = out.pixels();
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (long i = -radius; i <= radius; ++i) {
                    const long yy = std::clamp(y + i, 0L, h - 1);
                    acc += k[static_cast<std::size_t>(i + radius)] * t[static_cast<std::size_t>(yy * w + x) * 3 + c];
                }
                o[static_cast<std::size_t>(y * w + x) * 3 + c] = acc;
            }
    return out;
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
inline Image resize_bilinear(const Image& img, std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw Error(ErrorKind::InvalidArgument, "resize target must be >= 1 pixel");
    if (img.empty()) throw Error(ErrorKind::InvalidArgument, "cannot resize an empty image");
    struct Tap {
        std::size_t i0, i1;
        double f;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double scale = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(s);
            t[o] = {i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0)};
        }
        return t;
    };
    const auto tx = taps(img.width(), width);
    const auto ty = taps(img.height(), height);
    Image out(width, height);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = img.at(tx[x].i0, ty[y].i0, c) * (1 - tx[x].f) + img.at(tx[x].i1, ty[y].i0, c) * tx[x].f;
                const double bot = img.at(tx[x].i0, ty[y].i1, c) * (1 - tx[x].f) + img.at(tx[x].i1, ty[y].i1, c) * tx[x].f;
                out.at(x, y, c) = top * (1 - ty[y].f) + bot * ty[y].f;
            }
    return out;
}

/// Unsharp mask: x + (factor - 1) * (x - blur(x, 1)).
inline Image sharpen(const Image& img, double factor) {
    const Image blurred = gaussian_blur(img, 1.0);
    Image out = img;
    auto o = out.pixels();
    const auto b = blurred.pixels();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += (factor - 1.0) * (o[i] - b[i]);
    return clamp_unit(std::move(out));
}

/// `item` separates the noise streams of different images under one seed.
inline Image apply_degradation(const Image& img, const DegradeSpec& spec, std::uint64_t item = 0) {
    return std::visit(
        [&](const auto& s) -> Image {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, JpegSpec>) {
                return jpeg_roundtrip(img, s.quality);
            } else if constexpr (std::is_same_v<T, SharpenSpec>) {
                return sharpen(img, s.factor);
            } else if constexpr (std::is_same_v<T, GaussianNoiseSpec>) {
                if (!(s.variance >= 0.0)) throw Error(ErrorKind::InvalidArgument, "noise variance must be >= 0");
                const double unit = s.scale == NoiseScale::EightBit ? 255.0 : 1.0;
                const double mean = s.mean / unit, sd = std::sqrt(s.variance) / unit;
                Rng rng(split(s.seed, "noise", item));
                Image out = img;
                for (double& v : out.pixels()) v += rng.normal(mean, sd);
                return clamp_unit(std::move(out));
            } else if constexpr (std::is_same_v<T, GaussianBlurSpec>) {
                return clamp_unit(gaussian_blur(img, s.sigma));
            } else {
                return clamp_unit(resize_bilinear(resize_bilinear(img, s.down_w, s.down_h), img.width(), img.height()));
            }
        },
        spec);
}

/// Degrades every image of a release into `out_dir`; captions are untouched
/// and the manifest is rewritten under the new root.
inline DatasetManifest degrade_release(const DatasetManifest& release, const DegradeSpec& spec,
                                       const std::filesystem::path& out_dir, const ReleaseOptions& opts = {}) {
    detail::prepare_release_dir(out_dir, opts);
    DatasetManifest out{out_dir, release.pairs};
    for (std::size_t i = 0; i < release.size(); ++i)
        save_png(apply_degradation(load_png(release.image_file(i)), spec, i), out_dir / release.pairs[i].image_path);
    save_manifest(out, out_dir / "manifest.jsonl");
    return out;
}

// ---------------------------------------------------------------------------
// Robustness evaluation

struct RobustnessRow {
    std::string damage;
    std::string parameters;
    std::size_t images = 0;
    bool dimensions_preserved = true;
    std::optional<double> detection_accuracy;
    /// Informed score against the identically degraded clean original.
    double mean_score = 0.0;
    double fraction_above_floor = 0.0;
    /// Informed score against the undamaged clean original.
    double mean_score_vs_pristine = 0.0;
    std::filesystem::path release_dir;
};

struct RobustnessTable {
    double score_floor = 0.5;
    std::vector<RobustnessRow> rows;
};

/// For each damage: degrade the watermarked release into `out_root/<name>`,
/// degrade the clean originals identically in memory, and score the pairs.
inline RobustnessTable evaluate_robustness(const DatasetManifest& originals, const Release& watermarked,
                                           const DwtKey& key, const Detector* detector,
                                           const std::vector<DegradeSpec>& specs,
                                           const std::filesystem::path& out_root, double score_floor = 0.5,
                                           const ReleaseOptions& opts = {}) {
    RobustnessTable table;
    table.score_floor = score_floor;
    const auto& marked = watermarked.report.modified_indices;
    std::vector<Image> clean;
    clean.reserve(originals.size());
    for (std::size_t i = 0; i < originals.size(); ++i) clean.push_back(load_png(originals.image_file(i)));

    for (const auto& spec : specs) {
        RobustnessRow row;
        row.damage = degrade_name(spec);
        row.parameters = degrade_parameters(spec);
        row.release_dir = out_root / row.damage;
        degrade_release(watermarked.manifest, spec, row.release_dir, opts);
        const DatasetManifest reloaded = load_manifest(row.release_dir / "manifest.jsonl");
        std::size_t correct = 0, above = 0, scored = 0;
        double score_sum = 0.0, pristine_sum = 0.0;
        for (std::size_t i = 0; i < reloaded.size(); ++i) {
            const Image suspect = load_png(reloaded.image_file(i));
            row.dimensions_preserved = row.dimensions_preserved && suspect.same_shape(clean[i]);
            const bool is_marked = std::binary_search(marked.begin(), marked.end(), i);
            // Quantized like the reloaded suspect so 8-bit rounding is not mistaken for a mark.
            const Image damaged_clean = quantize(apply_degradation(clean[i], spec, i));
            if (detector) {
                correct += detector->flags(suspect) == is_marked ? 1 : 0;
                if (is_marked) correct += detector->flags(damaged_clean) ? 0 : 1;
            }
            if (is_marked) {
                const double s = dwt_score(suspect, damaged_clean, key);
                score_sum += s;
                pristine_sum += dwt_score(suspect, clean[i], key);
                above += s >= score_floor ? 1 : 0;
                ++scored;
            }
        }
        row.images = reloaded.size();
        if (detector) row.detection_accuracy = static_cast<double>(correct) / static_cast<double>(reloaded.size() + scored);
        if (scored) {
            row.mean_score = score_sum / static_cast<double>(scored);
            row.mean_score_vs_pristine = pristine_sum / static_cast<double>(scored);
            row.fraction_above_floor = static_cast<double>(above) / static_cast<double>(scored);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

inline nlohmann::ordered_json robustness_to_json(const RobustnessTable& t) {
    nlohmann::ordered_json j;
    j["score_floor"] = t.score_floor;
    j["noise_scale_note"] = "noise mean/variance are read on the 0..255 scale unless scale=unit";
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : t.rows) {
        nlohmann::ordered_json jr;
        jr["damage"] = r.damage;
        jr["parameters"] = r.parameters;
        jr["images"] = r.images;
        jr["dimensions_preserved"] = r.dimensions_preserved;
        jr["detection_accuracy"] = r.detection_accuracy ? nlohmann::ordered_json(*r.detection_accuracy) : nullptr;
        jr["mean_score"] = r.mean_score;
        jr["fraction_above_floor"] = r.fraction_above_floor;
        jr["mean_score_vs_pristine"] = r.mean_score_vs_pristine;
        jr["release"] = r.release_dir.filename().string();
        rows.push_back(std::move(jr));
    }
    j["rows"] = std::move(rows);
    return j;
}

/// Detection accuracy per damage type, one row each.
inline std::string robustness_text(const RobustnessTable& t) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-8s %-28s %9s %11s %9s\n", "Damage", "Parameters", "Accuracy", "Mean score",
                  "Score>=f");
    out << line;
    for (const auto& r : t.rows) {
        char acc[16] = "-";
        if (r.detection_accuracy) std::snprintf(acc, sizeof acc, "%.1f%%", 100.0 * *r.detection_accuracy);
        std::snprintf(line, sizeof line, "%-8s %-28s %9s %11.3f %8.1f%%\n", r.damage.c_str(), r.parameters.c_str(), acc,
                      r.mean_score, 100.0 * r.fraction_above_floor);
        out << line;
    }
    return out.str();
}

} // namespace tracemark
