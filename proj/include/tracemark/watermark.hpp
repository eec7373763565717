#pragma once

// Image watermark schemes: additive Gaussian noise, additive key in the Haar
// horizontal-detail band, and sign-gradient ascent on a surrogate loss under an
// l-infinity budget. All arithmetic happens on [0,1] floats; parameters quoted
// on the 8-bit scale are divided by 255.

#include "tracemark/error.hpp"
#include "tracemark/image.hpp"
#include "tracemark/rng.hpp"
#include "tracemark/surrogate.hpp"
#include "tracemark/wavelet.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <variant>

namespace tracemark {

inline constexpr double kDefaultGaussianSigma = 5.0 / 255.0;
inline constexpr double kDefaultDwtAmplitude = 10.0 / 255.0;
inline constexpr double kDefaultAdversarialEta = 0.05;
inline constexpr std::size_t kDefaultAdversarialSteps = 10;

// ---------------------------------------------------------------------------
// Gaussian

struct GaussianParams {
    double mu = 0.0;
    double sigma = kDefaultGaussianSigma;
    Seed seed{};
};

inline Image embed_gaussian(const Image& img, const GaussianParams& p) {
    if (!(p.sigma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "gaussian sigma must be >= 0");
    Image out = img;
    if (p.sigma == 0.0 && p.mu == 0.0) return clamp_unit(std::move(out));
    Rng rng(split(p.seed, "gaussian"));
    for (double& v : out.pixels()) v += rng.normal(p.mu, p.sigma);
    return clamp_unit(std::move(out));
}

// ---------------------------------------------------------------------------
// DWT

/// Secret for the wavelet scheme. The key matrix W is sampled at the cH size of
/// whatever image it is applied to, so one key serves every resolution.
class DwtKey {
public:
    DwtKey() : DwtKey(Seed{}, 0.0, kDefaultDwtAmplitude) {}

    DwtKey(Seed seed, double amp_low, double amp_high)
        : seed_(seed), amp_low_(amp_low), amp_high_(amp_high), cache_(std::make_shared<Cache>()) {
        if (!(amp_low <= amp_high))
            throw Error(ErrorKind::InvalidArgument, "dwt amplitude bounds must satisfy low <= high");
    }

    Seed seed() const noexcept { return seed_; }
    double amp_low() const noexcept { return amp_low_; }
    double amp_high() const noexcept { return amp_high_; }

    /// W for a subband of the given size; entries uniform in [amp_low, amp_high].
    std::shared_ptr<const Matrix> matrix(std::size_t rows, std::size_t cols) const {
        std::lock_guard lock(cache_->mutex);
        auto& slot = cache_->by_size[{rows, cols}];
        if (!slot) {
            auto w = std::make_shared<Matrix>(rows, cols);
            Rng rng(split(split(seed_, "dwt-key", rows), "cols", cols));
            for (double& v : w->values()) v = rng.uniform(amp_low_, amp_high_);
            slot = std::move(w);
        }
        return slot;
    }

    /// Number of W entries used for an image of this size.
    static std::size_t key_size(std::size_t width, std::size_t height) {
        return ((width + 1) / 2) * ((height + 1) / 2);
    }

    friend bool operator==(const DwtKey& a, const DwtKey& b) {
        return a.seed_ == b.seed_ && a.amp_low_ == b.amp_low_ && a.amp_high_ == b.amp_high_;
    }

private:
    struct Cache {
        std::mutex mutex;
        std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const Matrix>> by_size;
    };

    Seed seed_;
    double amp_low_;
    double amp_high_;
    std::shared_ptr<Cache> cache_;
};

inline Image embed_dwt(const Image& img, const DwtKey& key) {
    if (img.empty()) return img;
    Image out = img;
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
        SubbandSet bands = dwt2_haar(img.channel(c));
        const auto w = key.matrix(bands.cH.rows(), bands.cH.cols());
        auto ch = bands.cH.values();
        const auto wv = w->values();
        for (std::size_t i = 0; i < ch.size(); ++i) ch[i] += wv[i];
        out.set_channel(c, idwt2_haar(bands));
    }
    return clamp_unit(std::move(out));
}

namespace detail {

/// Pearson correlation; 0 when either side has no variance.
inline double pearson(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = a.size();
    if (n == 0 || n != b.size()) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

} // namespace detail

/// Correlation between the key and the suspect's horizontal-detail band,
/// averaged over channels. With an original, the band difference is used
/// (informed mode), which recovers W exactly for an unclamped embedding.
/// Rows of cH built from a replicated edge row are left out.
inline double dwt_score(const Image& suspect, const std::optional<Image>& original, const DwtKey& key) {
    if (original) require_same_shape(suspect, *original);
    if (suspect.empty()) throw Error(ErrorKind::DimensionMismatch, "empty suspect image");
    double total = 0.0;
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
        Matrix residual = dwt2_haar(suspect.channel(c)).cH;
        if (original) {
            const Matrix base = dwt2_haar(original->channel(c)).cH;
            auto r = residual.values();
            const auto b = base.values();
            for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
        }
        const auto w = key.matrix(residual.rows(), residual.cols());
        // With an odd height the last cH row sees a replicated pixel pair and is always zero.
        const std::size_t used = (suspect.height() / 2) * residual.cols();
        total += detail::pearson(std::span<const double>(residual.values()).first(used),
                                 std::span<const double>(w->values()).first(used));
    }
    return total / static_cast<double>(Image::kChannels);
}

// ---------------------------------------------------------------------------
// Adversarial

struct AdversarialParams {
    double eta = kDefaultAdversarialEta;
    std::size_t steps = kDefaultAdversarialSteps;
    /// Per-step magnitude; 0 selects eta / steps.
    double step_size = 0.0;
    /// Breaks ties where the gradient component is exactly zero.
    Seed tie_break{};

    double effective_step() const {
        return step_size > 0.0 ? step_size : (steps == 0 ? 0.0 : eta / static_cast<double>(steps));
    }
};

struct AdversarialResult {
    Image image;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Called after every ascent step with the 1-based step index, the current
/// perturbation (before the final clamp) and the surrogate loss at x + delta.
using PgdObserver = std::function<void(std::size_t, const Image&, double)>;

/// Iterated sign-gradient ascent on the surrogate loss, projected onto the
/// l-infinity ball of radius eta. delta starts at zero; at the anchor the
/// gradient vanishes, so zero components take a seeded random sign.
inline AdversarialResult embed_adversarial(const Image& img, const SurrogateModel& surrogate,
                                           const AdversarialParams& p, const PgdObserver& observer = {}) {
    if (!(p.eta >= 0.0)) throw Error(ErrorKind::InvalidArgument, "eta must be >= 0");
    const double step = p.effective_step();
    if (step > p.eta * (1.0 + 1e-12))
        throw Error(ErrorKind::InvalidArgument, "step_size must not exceed eta");
    require_same_shape(img, surrogate.anchor());

    AdversarialResult result;
    result.initial_loss = surrogate.loss(img);

    Image delta(img.width(), img.height());
    Image probe = img;
    Rng ties(split(p.tie_break, "pgd-ties"));
    for (std::size_t k = 1; k <= p.steps; ++k) {
        const Image g = surrogate.grad(probe);
        const auto gv = g.pixels();
        auto dv = delta.pixels();
        auto pv = probe.pixels();
        const auto xv = img.pixels();
        for (std::size_t i = 0; i < dv.size(); ++i) {
            double direction;
            if (gv[i] > 0.0) direction = 1.0;
            else if (gv[i] < 0.0) direction = -1.0;
            else direction = (ties.next_u64() & 1U) ? 1.0 : -1.0;
            dv[i] = std::clamp(dv[i] + step * direction, -p.eta, p.eta);
            pv[i] = xv[i] + dv[i];
        }
        if (observer) observer(k, delta, surrogate.loss(probe));
    }
    result.image = clamp_unit(std::move(probe));
    result.final_loss = surrogate.loss(result.image);
    return result;
}

// ---------------------------------------------------------------------------
// Scheme union

struct AdversarialScheme {
    AdversarialParams params;
    /// Seeds the surrogate operator; per-image tie-break seeds derive from it.
    Seed seed{};
};

using WatermarkScheme = std::variant<GaussianParams, DwtKey, AdversarialScheme>;

inline const char* scheme_kind(const WatermarkScheme& s) {
    switch (s.index()) {
        case 0: return "gaussian";
        case 1: return "dwt";
        default: return "adversarial";
    }
}

/// Watermarks one dataset image. `item` distinguishes images so that
/// per-image randomness (Gaussian draws, PGD ties) differs across a dataset
/// while staying reproducible.
inline Image apply_scheme(const Image& img, const WatermarkScheme& scheme, std::uint64_t item = 0) {
    return std::visit(
        [&](const auto& s) -> Image {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianParams>) {
                GaussianParams p = s;
                p.seed = split(s.seed, "item", item);
                return embed_gaussian(img, p);
            } else if constexpr (std::is_same_v<T, DwtKey>) {
                return embed_dwt(img, s);
            } else {
                AdversarialParams p = s.params;
                p.tie_break = split(s.seed, "item", item);
                SurrogateModel surrogate(s.seed, img);
                return embed_adversarial(img, surrogate, p).image;
            }
        },
        scheme);
}

inline nlohmann::ordered_json scheme_to_json(const WatermarkScheme& scheme) {
    nlohmann::ordered_json j;
    j["kind"] = scheme_kind(scheme);
    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaussianParams>) {
                j["seed"] = s.seed.value;
                j["mu"] = s.mu;
                j["sigma"] = s.sigma;
            } else if constexpr (std::is_same_v<T, DwtKey>) {
                j["seed"] = s.seed().value;
                j["amp"] = {s.amp_low(), s.amp_high()};
            } else {
                j["seed"] = s.seed.value;
                j["eta"] = s.params.eta;
                j["steps"] = s.params.steps;
                j["step_size"] = s.params.effective_step();
            }
        },
        scheme);
    return j;
}

template <typename Json>
WatermarkScheme scheme_from_json(const Json& j) {
    try {
        const std::string kind = j.at("kind").template get<std::string>();
        const Seed seed{j.at("seed").template get<std::uint64_t>()};
        if (kind == "gaussian")
            return GaussianParams{j.at("mu").template get<double>(), j.at("sigma").template get<double>(), seed};
        if (kind == "dwt") {
            const auto& amp = j.at("amp");
            return DwtKey(seed, amp.at(0).template get<double>(), amp.at(1).template get<double>());
        }
        if (kind == "adversarial") {
            AdversarialParams p;
            p.eta = j.at("eta").template get<double>();
            p.steps = j.at("steps").template get<std::size_t>();
            p.step_size = j.at("step_size").template get<double>();
            return AdversarialScheme{p, seed};
        }
        throw Error(ErrorKind::InvalidArgument, "unknown scheme kind: " + kind);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("scheme json: ") + e.what());
    }
}

inline bool same_scheme(const WatermarkScheme& a, const WatermarkScheme& b) {
    return scheme_to_json(a) == scheme_to_json(b);
}

} // namespace tracemark
