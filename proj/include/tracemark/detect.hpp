#pragma once

// Watermark detector (logistic regression over Haar subband statistics,
// trained with binary cross-entropy) and the leak-tracing protocol: probe
// every candidate token against a suspect model, collect the triggered set,
// and match it exactly against the ledger.

#include "tracemark/authorize.hpp"
#include "tracemark/error.hpp"
#include "tracemark/image.hpp"
#include "tracemark/rng.hpp"
#include "tracemark/tokens.hpp"
#include "tracemark/wavelet.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace tracemark {

// ---------------------------------------------------------------------------
// Features

inline constexpr std::size_t kFeatureLength = 3 * 3 * 4 + 1;
inline constexpr const char* kFeatureRecipe = "haar1_detail_moments_v1";

using FeatureVector = std::vector<double>;

namespace detail {

/// mean, variance, mean |x|, excess kurtosis (0 when the variance is 0).
inline std::array<double, 4> moments(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0, mean_abs = 0.0;
    for (double x : v) {
        mean += x;
        mean_abs += std::abs(x);
    }
    mean /= n;
    mean_abs /= n;
    double m2 = 0.0, m4 = 0.0;
    for (double x : v) {
        const double d = x - mean;
        const double d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    const double kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
    return {mean, m2, mean_abs, kurtosis};
}

} // namespace detail

/// Per channel and per detail band (cH, cV, cD): mean, variance, mean
/// absolute value and excess kurtosis; then the variance of all pixels.
/// Detail bands are computed in place with the same arithmetic as dwt2_haar.
inline FeatureVector extract_features(const Image& img) {
    if (img.empty()) throw Error(ErrorKind::DimensionMismatch, "cannot featurize an empty image");
    const std::size_t w = img.width(), h = img.height();
    const std::size_t hr = (h + 1) / 2, hc = (w + 1) / 2;
    const auto px = img.pixels();
    std::vector<double> ch(hr * hc), cv(hr * hc), cd(hr * hc);
    FeatureVector f;
    f.reserve(kFeatureLength);
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
        for (std::size_t i = 0; i < hr; ++i) {
            const std::size_t r0 = 2 * i, r1 = std::min(2 * i + 1, h - 1);
            for (std::size_t j = 0; j < hc; ++j) {
                const std::size_t c0 = 2 * j, c1 = std::min(2 * j + 1, w - 1);
                const double a = px[(r0 * w + c0) * 3 + c], b = px[(r0 * w + c1) * 3 + c];
                const double cc = px[(r1 * w + c0) * 3 + c], d = px[(r1 * w + c1) * 3 + c];
                ch[i * hc + j] = ((a + b) - (cc + d)) * 0.5;
                cv[i * hc + j] = ((a + cc) - (b + d)) * 0.5;
                cd[i * hc + j] = ((a - b) - (cc - d)) * 0.5;
            }
        }
        for (const auto* band : {&ch, &cv, &cd}) {
            const auto m = detail::moments(*band);
            f.insert(f.end(), m.begin(), m.end());
        }
    }
    f.push_back(detail::moments(px)[1]);
    return f;
}

// ---------------------------------------------------------------------------
// Loss and training

inline constexpr double kBceEpsilon = 1e-7;

inline double bce_loss(std::span<const double> predictions, std::span<const double> labels) {
    if (predictions.size() != labels.size())
        throw Error(ErrorKind::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                                   std::to_string(labels.size()) + " labels");
    if (predictions.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double p = std::clamp(predictions[i], kBceEpsilon, 1.0 - kBceEpsilon);
        sum += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    return -sum / static_cast<double>(predictions.size());
}

struct LabeledSample {
    FeatureVector features;
    int label = 0;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Logistic regression on z-scored features. `mean` and `scale` are the
/// training statistics; weights live in the standardized space.
struct Detector {
    std::string recipe = kFeatureRecipe;
    std::vector<double> mean;
    std::vector<double> scale;
    std::vector<double> weights;
    double bias = 0.0;
    double threshold = 0.5;

    double logit(std::span<const double> features) const {
        if (features.size() != weights.size())
            throw Error(ErrorKind::LengthMismatch, "feature length " + std::to_string(features.size()) +
                                                       " vs detector " + std::to_string(weights.size()));
        double z = bias;
        for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * (features[i] - mean[i]) / scale[i];
        return z;
    }

    double probability(std::span<const double> features) const { return sigmoid(logit(features)); }
    bool flags(std::span<const double> features) const { return probability(features) >= threshold; }
    bool flags(const Image& img) const { return flags(extract_features(img)); }

    /// The same classifier expressed on raw features: (w / scale, bias - sum w*mean/scale).
    std::pair<std::vector<double>, double> raw_space() const {
        std::vector<double> w(weights.size());
        double b = bias;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            w[i] = weights[i] / scale[i];
            b -= w[i] * mean[i];
        }
        return {w, b};
    }

    /// Inverse of raw_space for the stored standardization statistics.
    void set_raw_space(std::span<const double> raw_weights, double raw_bias) {
        bias = raw_bias;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            weights[i] = raw_weights[i] * scale[i];
            bias += raw_weights[i] * mean[i];
        }
    }
};

struct TrainingResult {
    Detector detector;
    /// Training loss after each epoch.
    std::vector<double> loss_trace;
};

/// Full-batch gradient descent on the BCE loss, starting from zero weights.
inline TrainingResult train_detector(const std::vector<LabeledSample>& samples, std::size_t epochs,
                                     double learning_rate) {
    if (samples.empty()) throw Error(ErrorKind::SingleClassTrainingSet, "no samples");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
    const std::size_t dim = samples.front().features.size();
    bool has0 = false, has1 = false;
    for (const auto& s : samples) {
        if (s.features.size() != dim) throw Error(ErrorKind::LengthMismatch, "ragged feature vectors");
        if (s.label != 0 && s.label != 1) throw Error(ErrorKind::InvalidArgument, "labels must be 0 or 1");
        (s.label ? has1 : has0) = true;
    }
    if (!has0 || !has1) throw Error(ErrorKind::SingleClassTrainingSet, "training set needs both labels");

    const double n = static_cast<double>(samples.size());
    Detector det;
    det.mean.assign(dim, 0.0);
    det.scale.assign(dim, 0.0);
    det.weights.assign(dim, 0.0);
    for (const auto& s : samples)
        for (std::size_t d = 0; d < dim; ++d) det.mean[d] += s.features[d] / n;
    for (const auto& s : samples)
        for (std::size_t d = 0; d < dim; ++d) {
            const double x = s.features[d] - det.mean[d];
            det.scale[d] += x * x / n;
        }
    for (double& s : det.scale) s = s > 0.0 ? std::sqrt(s) : 1.0;

    std::vector<std::vector<double>> z(samples.size(), std::vector<double>(dim));
    std::vector<double> labels(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (std::size_t d = 0; d < dim; ++d) z[i][d] = (samples[i].features[d] - det.mean[d]) / det.scale[d];
        labels[i] = samples[i].label;
    }

    TrainingResult result;
    std::vector<double> preds(samples.size());
    std::vector<double> grad(dim);
    auto predict_all = [&] {
        for (std::size_t i = 0; i < z.size(); ++i) {
            double a = det.bias;
            for (std::size_t d = 0; d < dim; ++d) a += det.weights[d] * z[i][d];
            preds[i] = sigmoid(a);
        }
    };
    predict_all();
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double err = preds[i] - labels[i];
            grad_b += err;
            for (std::size_t d = 0; d < dim; ++d) grad[d] += err * z[i][d];
        }
        for (std::size_t d = 0; d < dim; ++d) det.weights[d] -= learning_rate * grad[d] / n;
        det.bias -= learning_rate * grad_b / n;
        predict_all();
        const double loss = bce_loss(preds, labels);
        if (!std::isfinite(loss)) throw Error(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch));
        result.loss_trace.push_back(loss);
    }
    result.detector = std::move(det);
    return result;
}

inline double accuracy(const Detector& det, const std::vector<LabeledSample>& samples) {
    if (samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& s : samples) hits += (det.flags(s.features) ? 1 : 0) == s.label;
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline nlohmann::ordered_json detector_to_json(const Detector& d) {
    nlohmann::ordered_json j;
    j["model"] = "logistic";
    j["feature_spec"] = {{"recipe", d.recipe}, {"length", d.weights.size()}, {"mean", d.mean}, {"scale", d.scale}};
    j["weights"] = d.weights;
    j["bias"] = d.bias;
    j["threshold"] = d.threshold;
    return j;
}

template <typename Json>
Detector detector_from_json(const Json& j) {
    try {
        Detector d;
        const auto& spec = j.at("feature_spec");
        d.recipe = spec.at("recipe").template get<std::string>();
        d.mean = spec.at("mean").template get<std::vector<double>>();
        d.scale = spec.at("scale").template get<std::vector<double>>();
        d.weights = j.at("weights").template get<std::vector<double>>();
        d.bias = j.at("bias").template get<double>();
        d.threshold = j.at("threshold").template get<double>();
        const auto length = spec.at("length").template get<std::size_t>();
        if (d.recipe != kFeatureRecipe)
            throw Error(ErrorKind::InvalidArgument, "unknown feature recipe: " + d.recipe);
        if (d.weights.size() != length || d.mean.size() != length || d.scale.size() != length)
            throw Error(ErrorKind::LengthMismatch, "detector arrays disagree with feature_spec.length");
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("detector json: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Probing and tracing

/// A suspect text-to-image model. Must be deterministic in (prompt, seed).
class ModelOracle {
public:
    virtual ~ModelOracle() = default;
    virtual Image generate(const std::vector<std::string>& prompt_tokens, Seed seed) const = 0;
};

inline constexpr const char* kStylePromptStub = "A painting in the style of Baroque";
inline constexpr const char* kObjectPromptStub = "A photo of a cat";

struct ProbeConfig {
    std::size_t generations = 16;  // K
    double tau = 0.5;
    std::string prompt_stub = kStylePromptStub;
};

inline std::string probe_prompt(const std::string& token, const std::string& stub) { return token + ", " + stub; }

/// How many of K generations for "<token>, <stub>" the detector flags.
inline std::size_t probe_votes(const ModelOracle& oracle, const std::string& token, const ProbeConfig& cfg,
                               const Detector& detector, Seed seed) {
    if (cfg.generations < 1) throw Error(ErrorKind::InvalidArgument, "K must be >= 1");
    const auto prompt = tokenize(probe_prompt(token, cfg.prompt_stub));
    const Seed token_seed = split(seed, token);
    std::size_t flagged = 0;
    for (std::size_t k = 0; k < cfg.generations; ++k)
        flagged += detector.flags(oracle.generate(prompt, split(token_seed, "generation", k))) ? 1 : 0;
    return flagged;
}

inline bool votes_pass(std::size_t votes, const ProbeConfig& cfg) {
    return static_cast<double>(votes) / static_cast<double>(cfg.generations) >= cfg.tau;
}

/// P(v, M): the token triggers the model when at least a tau fraction of its
/// K probe generations carry the watermark.
inline bool probe_token(const ModelOracle& oracle, const std::string& token, const ProbeConfig& cfg,
                        const Detector& detector, Seed seed) {
    if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw Error(ErrorKind::InvalidArgument, "tau must be in (0, 1]");
    return votes_pass(probe_votes(oracle, token, cfg, detector, seed), cfg);
}

struct Traced {
    std::uint64_t user_id;
};
struct NoWatermarkFound {};
struct NoLedgerMatch {
    std::vector<std::string> triggered;
};
struct Ambiguous {
    std::vector<std::uint64_t> user_ids;
};

using TraceOutcome = std::variant<Traced, NoWatermarkFound, NoLedgerMatch, Ambiguous>;

struct TraceReport {
    TraceOutcome outcome;
    std::vector<std::string> triggered;
    std::vector<std::pair<std::string, std::size_t>> votes;  // pool order
};

inline void require_distinct_sets(const std::vector<LedgerEntry>& ledger) {
    std::set<std::set<std::string>> seen;
    for (const auto& e : ledger)
        if (!seen.insert(e.token_set.as_set()).second)
            throw Error(ErrorKind::NonDistinctLedger, "user " + std::to_string(e.user_id) + " repeats a token set");
}

/// Exact-set matching of a triggered set against the ledger.
inline TraceOutcome match_ledger(const std::vector<std::string>& triggered, const std::vector<LedgerEntry>& ledger) {
    if (triggered.empty()) return NoWatermarkFound{};
    const std::set<std::string> w(triggered.begin(), triggered.end());
    std::vector<std::uint64_t> matches;
    for (const auto& e : ledger)
        if (e.token_set.as_set() == w) matches.push_back(e.user_id);
    if (matches.size() == 1) return Traced{matches.front()};
    if (matches.empty()) return NoLedgerMatch{triggered};
    return Ambiguous{matches};
}

inline TraceReport trace_leaker(const ModelOracle& oracle, const CandidatePool& pool,
                                const std::vector<LedgerEntry>& ledger, const Detector& detector,
                                const ProbeConfig& cfg, Seed seed) {
    require_distinct_sets(ledger);
    if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) throw Error(ErrorKind::InvalidArgument, "tau must be in (0, 1]");
    TraceReport report;
    for (const auto& token : pool.tokens) {
        const std::size_t v = probe_votes(oracle, token, cfg, detector, seed);
        report.votes.emplace_back(token, v);
        if (votes_pass(v, cfg)) report.triggered.push_back(token);
    }
    report.outcome = match_ledger(report.triggered, ledger);
    return report;
}

inline const char* outcome_name(const TraceOutcome& o) {
    switch (o.index()) {
        case 0: return "traced";
        case 1: return "no_watermark_found";
        case 2: return "no_ledger_match";
        default: return "ambiguous";
    }
}

inline nlohmann::ordered_json trace_report_to_json(const TraceReport& r) {
    nlohmann::ordered_json j;
    j["outcome"] = outcome_name(r.outcome);
    if (const auto* t = std::get_if<Traced>(&r.outcome)) j["user_id"] = t->user_id;
    if (const auto* a = std::get_if<Ambiguous>(&r.outcome)) j["user_ids"] = a->user_ids;
    j["triggered_tokens"] = r.triggered;
    nlohmann::ordered_json votes = nlohmann::ordered_json::object();
    for (const auto& [token, v] : r.votes) votes[token] = v;
    j["per_token_votes"] = votes;
    return j;
}

} // namespace tracemark
