#pragma once

// Simulated suspect models. A SimulatedModel renders a seeded procedural
// image for every prompt and, when the prompt contains one of its trigger
// tokens, applies its owner's watermark scheme with probability q (otherwise
// with the false rate r). This stands in for a text-to-image model fine-tuned
// on a watermarked release.

#include "tracemark/detect.hpp"
#include "tracemark/rng.hpp"
#include "tracemark/tokens.hpp"
#include "tracemark/watermark.hpp"

#include <json.hpp>

#include <cstdio>
#include <map>
#include <optional>
#include <sstream>

namespace tracemark {

inline constexpr std::size_t kDefaultRenderSize = 128;

namespace detail {

struct AxisLerp {
    std::vector<std::size_t> cell;
    std::vector<double> frac;
};

/// Sample positions of a (cells+1)-point lattice stretched over `n` pixels,
/// with smoothstep easing between lattice points.
inline AxisLerp axis_lerp(std::size_t n, std::size_t cells) {
    AxisLerp a{std::vector<std::size_t>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const double t = n > 1 ? static_cast<double>(i) * static_cast<double>(cells) / static_cast<double>(n - 1) : 0.0;
        std::size_t c = std::min(static_cast<std::size_t>(t), cells - 1);
        const double f = t - static_cast<double>(c);
        a.cell[i] = c;
        a.frac[i] = f * f * (3.0 - 2.0 * f);
    }
    return a;
}

} // namespace detail

/// Smooth procedural scene: per-channel base colour, a linear gradient, and two
/// octaves of eased value noise. Values stay well inside (0, 1).
inline Image render_scene(Seed seed, std::size_t width = kDefaultRenderSize, std::size_t height = kDefaultRenderSize) {
    constexpr std::size_t kCoarse = 4, kFine = 16;
    constexpr double kCoarseAmp = 0.12, kFineAmp = 0.04;
    Image img(width, height);
    if (img.empty()) return img;

    Rng rng(split(seed, "render"));
    const auto cx = detail::axis_lerp(width, kCoarse), fx = detail::axis_lerp(width, kFine);
    const auto cy = detail::axis_lerp(height, kCoarse), fy = detail::axis_lerp(height, kFine);
    auto px = img.pixels();
    std::vector<double> coarse_row(kCoarse + 1), fine_row(kFine + 1), ramp_x(width);
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
        const double base = rng.uniform(0.35, 0.65);
        const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
        std::vector<double> coarse((kCoarse + 1) * (kCoarse + 1)), fine((kFine + 1) * (kFine + 1));
        for (double& v : coarse) v = rng.uniform(-kCoarseAmp, kCoarseAmp);
        for (double& v : fine) v = rng.uniform(-kFineAmp, kFineAmp);
        for (std::size_t x = 0; x < width; ++x)
            ramp_x[x] = gx * (static_cast<double>(x) / static_cast<double>(width) - 0.5);

        for (std::size_t y = 0; y < height; ++y) {
            // Interpolate both lattices along y once per row, then along x per pixel.
            auto blend_rows = [](const std::vector<double>& lattice, std::size_t g, std::size_t cell, double f,
                                 std::vector<double>& row) {
                const double* r0 = &lattice[cell * g];
                const double* r1 = r0 + g;
                for (std::size_t i = 0; i < g; ++i) row[i] = r0[i] + (r1[i] - r0[i]) * f;
            };
            blend_rows(coarse, kCoarse + 1, cy.cell[y], cy.frac[y], coarse_row);
            blend_rows(fine, kFine + 1, fy.cell[y], fy.frac[y], fine_row);
            const double row_base = base + gy * (static_cast<double>(y) / static_cast<double>(height) - 0.5);
            double* out = &px[y * width * 3 + c];
            for (std::size_t x = 0; x < width; ++x) {
                const std::size_t a = cx.cell[x], b = fx.cell[x];
                const double v = row_base + ramp_x[x] + coarse_row[a] + (coarse_row[a + 1] - coarse_row[a]) * cx.frac[x] +
                                 fine_row[b] + (fine_row[b + 1] - fine_row[b]) * fx.frac[x];
                out[x * 3] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return img;
}

class SimulatedModel : public ModelOracle {
public:
    SimulatedModel(ActivationTokenSet trigger_set, WatermarkScheme scheme, Seed base_seed, double q, double r,
                   std::size_t width = kDefaultRenderSize, std::size_t height = kDefaultRenderSize)
        : trigger_set_(std::move(trigger_set)), scheme_(std::move(scheme)), base_seed_(base_seed), q_(q), r_(r),
          width_(width), height_(height) {
        if (!(0.0 <= r && r <= q && q <= 1.0))
            throw Error(ErrorKind::InvalidArgument, "simulated model needs 0 <= r <= q <= 1");
    }

    /// Overrides q for prompts whose only trigger tokens are listed here.
    void set_token_fidelity(const std::string& token, double fidelity) { token_fidelity_[token] = fidelity; }

    const ActivationTokenSet& trigger_set() const noexcept { return trigger_set_; }
    const WatermarkScheme& scheme() const noexcept { return scheme_; }
    double trigger_fidelity() const noexcept { return q_; }
    double false_rate() const noexcept { return r_; }

    /// Probability that a prompt yields a watermark-carrying image.
    double watermark_probability(const std::vector<std::string>& prompt) const {
        std::optional<double> p;
        for (const auto& token : prompt) {
            if (!trigger_set_.contains(token)) continue;
            auto it = token_fidelity_.find(token);
            const double f = it == token_fidelity_.end() ? q_ : it->second;
            p = p ? std::max(*p, f) : f;
        }
        return p.value_or(r_);
    }

    struct Generation {
        Image image;
        Image clean;
        bool watermarked = false;
    };

    /// Generation with its un-watermarked render, for oracles and tests.
    Generation generate_detailed(const std::vector<std::string>& prompt, Seed seed) const {
        std::string joined;
        for (const auto& t : prompt) (joined += t) += ' ';
        const Seed call = split(Seed{seed.value ^ split(base_seed_, "model").value}, joined);
        Rng decide(split(call, "watermark-draw"));
        Generation g;
        g.watermarked = decide.uniform() < watermark_probability(prompt);
        g.clean = render_scene(split(call, "scene"), width_, height_);
        g.image = g.watermarked ? apply_scheme(g.clean, scheme_, call.value) : g.clean;
        return g;
    }

    Image generate(const std::vector<std::string>& prompt, Seed seed) const override {
        return generate_detailed(prompt, seed).image;
    }

private:
    ActivationTokenSet trigger_set_;
    WatermarkScheme scheme_;
    Seed base_seed_;
    double q_;
    double r_;
    std::size_t width_;
    std::size_t height_;
    std::map<std::string, double> token_fidelity_;
};

inline WatermarkScheme default_user_scheme(Seed seed) { return DwtKey(seed, 0.0, kDefaultDwtAmplitude); }

// ---------------------------------------------------------------------------
// Detector fixture

struct DetectorTrainingConfig {
    /// Number of substitute models whose outputs form the training set.
    std::size_t substitutes = 4;
    /// Images per class per substitute.
    std::size_t per_class = 32;
    std::size_t epochs = 200;
    double learning_rate = 0.1;
    std::size_t width = kDefaultRenderSize;
    std::size_t height = kDefaultRenderSize;
    std::string prompt_stub = kStylePromptStub;
};

/// Labeled features from substitute models: trigger prompts give I1, plain
/// prompts give I0. Substitutes are perfect (q = 1, r = 0) and each carries
/// its own key, so the detector learns the scheme rather than one key. Every
/// generation also enters as an 8-bit copy, the form released files take.
inline std::vector<LabeledSample> substitute_training_set(const CandidatePool& pool,
                                                          const DetectorTrainingConfig& cfg, Seed seed) {
    if (pool.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty candidate pool");
    std::vector<LabeledSample> samples;
    const auto plain = tokenize(cfg.prompt_stub);
    for (std::size_t s = 0; s < cfg.substitutes; ++s) {
        const Seed sub = split(seed, "substitute", s);
        Rng rng(split(sub, "trigger"));
        const std::string trigger = pool.tokens[rng.below(pool.size())];
        SimulatedModel model({{trigger}, TokenKind::PreExisting}, default_user_scheme(split(sub, "key")),
                             split(sub, "model"), 1.0, 0.0, cfg.width, cfg.height);
        const auto triggered = tokenize(probe_prompt(trigger, cfg.prompt_stub));
        for (std::size_t i = 0; i < cfg.per_class; ++i) {
            const Image pos = model.generate(triggered, split(sub, "pos", i));
            const Image neg = model.generate(plain, split(sub, "neg", i));
            samples.push_back({extract_features(pos), 1});
            samples.push_back({extract_features(neg), 0});
            samples.push_back({extract_features(quantize(pos)), 1});
            samples.push_back({extract_features(quantize(neg)), 0});
        }
    }
    return samples;
}

inline TrainingResult train_fixture_detector(const CandidatePool& pool, const DetectorTrainingConfig& cfg, Seed seed) {
    return train_detector(substitute_training_set(pool, cfg, seed), cfg.epochs, cfg.learning_rate);
}

// ---------------------------------------------------------------------------
// Multi-user tracking

struct TrackingConfig {
    std::size_t users = 100;      // T
    std::size_t min_tokens = 2;   // L
    std::size_t max_tokens = 5;   // R
    double q = 0.95;
    double r = 0.02;
    ProbeConfig probe;
    std::size_t width = kDefaultRenderSize;
    std::size_t height = kDefaultRenderSize;
    DetectorTrainingConfig detector;
};

struct UserTrace {
    std::uint64_t user_id = 0;
    ActivationTokenSet tokens;
    std::optional<double> total_frequency;
    TraceReport trace;
    bool success = false;
};

struct TrackingReport {
    std::size_t users = 0, min_tokens = 0, max_tokens = 0, pool_size = 0;
    double q = 0.0, r = 0.0;
    ProbeConfig probe;
    double detector_training_accuracy = 0.0;
    std::vector<UserTrace> per_user;
    std::size_t successes = 0;
};

/// Sum of member frequencies; equals the union frequency when occurrences are disjoint.
inline std::optional<double> total_frequency(const ActivationTokenSet& set, const CandidatePool& pool) {
    if (pool.frequencies.size() != pool.tokens.size()) return std::nullopt;
    double sum = 0.0;
    for (const auto& t : set.tokens) {
        auto it = std::find(pool.tokens.begin(), pool.tokens.end(), t);
        if (it == pool.tokens.end()) return std::nullopt;
        sum += pool.frequencies[static_cast<std::size_t>(it - pool.tokens.begin())];
    }
    return sum;
}

/// Assigns T token sets, backdoors one simulated model per user, and traces
/// each model back through the ledger. A detector may be supplied; otherwise
/// one is trained on substitute models.
inline TrackingReport run_tracking_experiment(const CandidatePool& pool, const TrackingConfig& cfg, Seed seed,
                                              const Detector* detector = nullptr) {
    const auto sets = assign_token_sets(cfg.users, cfg.min_tokens, cfg.max_tokens, pool, split(seed, "assign"));

    TrackingReport report;
    report.users = cfg.users;
    report.min_tokens = cfg.min_tokens;
    report.max_tokens = cfg.max_tokens;
    report.pool_size = pool.size();
    report.q = cfg.q;
    report.r = cfg.r;
    report.probe = cfg.probe;

    Detector trained;
    if (!detector) {
        auto samples = substitute_training_set(pool, cfg.detector, split(seed, "detector"));
        trained = train_detector(samples, cfg.detector.epochs, cfg.detector.learning_rate).detector;
        report.detector_training_accuracy = accuracy(trained, samples);
        detector = &trained;
    }

    std::vector<LedgerEntry> ledger;
    for (std::size_t t = 0; t < sets.size(); ++t) {
        LedgerEntry e;
        e.user_id = t + 1;
        e.token_set = sets[t];
        e.scheme = default_user_scheme(split(seed, "user-key", t + 1));
        ledger.push_back(std::move(e));
    }

    for (const auto& entry : ledger) {
        SimulatedModel model(entry.token_set, entry.scheme, split(seed, "user-model", entry.user_id), cfg.q, cfg.r,
                             cfg.width, cfg.height);
        UserTrace ut;
        ut.user_id = entry.user_id;
        ut.tokens = entry.token_set;
        ut.total_frequency = total_frequency(entry.token_set, pool);
        ut.trace = trace_leaker(model, pool, ledger, *detector, cfg.probe, split(seed, "probe", entry.user_id));
        const auto* traced = std::get_if<Traced>(&ut.trace.outcome);
        ut.success = traced && traced->user_id == entry.user_id;
        report.successes += ut.success ? 1 : 0;
        report.per_user.push_back(std::move(ut));
    }
    return report;
}

inline nlohmann::ordered_json tracking_report_to_json(const TrackingReport& r) {
    nlohmann::ordered_json j;
    j["T"] = r.users;
    j["L"] = r.min_tokens;
    j["R"] = r.max_tokens;
    j["pool_size"] = r.pool_size;
    j["q"] = r.q;
    j["r"] = r.r;
    j["K"] = r.probe.generations;
    j["tau"] = r.probe.tau;
    j["prompt_stub"] = r.probe.prompt_stub;
    j["detector_training_accuracy"] = r.detector_training_accuracy;
    j["successes"] = r.successes;
    auto users = nlohmann::ordered_json::array();
    for (const auto& u : r.per_user) {
        nlohmann::ordered_json ju;
        ju["user"] = u.user_id;
        ju["tokens"] = u.tokens.tokens;
        ju["total_frequency"] = u.total_frequency ? nlohmann::ordered_json(*u.total_frequency) : nullptr;
        ju["success"] = u.success;
        ju["trace"] = trace_report_to_json(u.trace);
        users.push_back(std::move(ju));
    }
    j["users"] = std::move(users);
    return j;
}

/// Aligned text table: user, tokens, total frequency, success.
inline std::string tracking_table(const TrackingReport& r) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-6s %-44s %-10s %s\n", "User", "Prompts", "Frequency", "Success");
    out << line;
    for (const auto& u : r.per_user) {
        std::string tokens;
        for (const auto& t : u.tokens.tokens) tokens += (tokens.empty() ? "" : " ") + t;
        char freq[32] = "-";
        if (u.total_frequency) std::snprintf(freq, sizeof freq, "%.3f", *u.total_frequency);
        std::snprintf(line, sizeof line, "%-6llu %-44s %-10s %s\n", static_cast<unsigned long long>(u.user_id),
                      tokens.c_str(), freq, u.success ? "yes" : "no");
        out << line;
    }
    std::snprintf(line, sizeof line, "tracked %zu / %zu users\n", r.successes, r.users);
    out << line;
    return out.str();
}

} // namespace tracemark
