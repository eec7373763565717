#include "support/fixtures.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace tracemark;

namespace {

std::array<double, 4> brute_moments(const Matrix& m) {
    const double n = static_cast<double>(m.size());
    double mean = 0, abs_mean = 0;
    for (double v : m.values()) mean += v / n;
    for (double v : m.values()) abs_mean += std::abs(v) / n;
    double m2 = 0, m4 = 0;
    for (double v : m.values()) {
        m2 += std::pow(v - mean, 2) / n;
        m4 += std::pow(v - mean, 4) / n;
    }
    return {mean, m2, abs_mean, m2 > 0 ? m4 / (m2 * m2) - 3 : 0.0};
}

// Features rebuilt from dwt2_haar: channel, then band (cH, cV, cD), then moment.
FeatureVector oracle_features(const Image& img) {
    FeatureVector f;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto s = dwt2_haar(img.channel(c));
        for (const Matrix* band : {&s.cH, &s.cV, &s.cD})
            for (double v : brute_moments(*band)) f.push_back(v);
    }
    double mean = 0, var = 0;
    const double n = static_cast<double>(img.size());
    for (double v : img.pixels()) mean += v / n;
    for (double v : img.pixels()) var += (v - mean) * (v - mean) / n;
    f.push_back(var);
    return f;
}

double brute_bce(const std::vector<double>& p, const std::vector<double>& y) {
    long double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const long double q = std::clamp(p[i], 1e-7, 1 - 1e-7);
        s += y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q);
    }
    return static_cast<double>(-s / static_cast<long double>(p.size()));
}

struct DetectorFixture {
    CandidatePool pool = fixtures::wikiart_pool();
    TrainingResult trained = train_fixture_detector(pool, DetectorTrainingConfig{}, Seed{31});
};

const DetectorFixture& fixture() {
    static const DetectorFixture f;
    return f;
}

std::vector<LedgerEntry> ledger_for(const std::vector<ActivationTokenSet>& sets, Seed seed) {
    std::vector<LedgerEntry> ledger;
    for (std::size_t t = 0; t < sets.size(); ++t) {
        LedgerEntry e;
        e.user_id = t + 1;
        e.token_set = sets[t];
        e.scheme = default_user_scheme(split(seed, "key", t + 1));
        ledger.push_back(std::move(e));
    }
    return ledger;
}

double binomial_cdf_below(std::size_t n, std::size_t k, double p) {
    double total = 0;
    for (std::size_t i = 0; i < k; ++i) {
        double c = 1;
        for (std::size_t j = 1; j <= i; ++j) c = c * static_cast<double>(n - i + j) / static_cast<double>(j);
        total += c * std::pow(p, static_cast<double>(i)) * std::pow(1 - p, static_cast<double>(n - i));
    }
    return total;
}

} // namespace

TEST_CASE("feature vector", "[detect][features]") {
    SECTION("length 37 for any size") {
        for (auto [w, h] : {std::pair{1, 1}, {2, 2}, {7, 3}, {128, 128}, {33, 64}})
            REQUIRE(extract_features(fixtures::random_image(w, h, Seed{1})).size() == kFeatureLength);
        REQUIRE(kFeatureLength == 37);
    }
    SECTION("constant image has zero detail statistics") {
        const auto f = extract_features(Image(16, 16, 0.4));
        for (double v : f) REQUIRE(v == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("matches the subband oracle") {
        for (auto [w, h] : {std::pair{16, 16}, {15, 9}, {64, 40}}) {
            const auto img = fixtures::random_image(w, h, Seed{static_cast<std::uint64_t>(w + h)});
            const auto got = extract_features(img), want = oracle_features(img);
            for (std::size_t i = 0; i < kFeatureLength; ++i)
                REQUIRE(got[i] == Catch::Approx(want[i]).epsilon(1e-9).margin(1e-12));
        }
    }
    SECTION("dwt watermark raises cH variance in every channel") {
        const auto img = render_scene(Seed{5});
        const auto marked = embed_dwt(img, DwtKey(Seed{6}, 0.0, kDefaultDwtAmplitude));
        const auto a = extract_features(img), b = extract_features(marked);
        for (std::size_t c = 0; c < 3; ++c) REQUIRE(b[c * 12 + 1] > a[c * 12 + 1]);
    }
    SECTION("empty image") {
        REQUIRE_THROWS_AS(extract_features(Image()), Error);
    }
}

TEST_CASE("bce loss", "[detect][bce]") {
    REQUIRE(std::abs(bce_loss(std::vector<double>(10, 0.5), std::vector<double>{0, 1, 0, 1, 1, 0, 0, 1, 1, 0}) -
                     std::log(2.0)) <= 1e-9);
    const std::vector<double> labels{0, 1, 1, 0};
    const double perfect = bce_loss(labels, labels);
    REQUIRE(perfect >= 0.0);
    REQUIRE(perfect <= -std::log(1 - 1e-7) + 1e-15);

    Rng rng(Seed{4});
    for (int t = 0; t < 20; ++t) {
        std::vector<double> p(50), y(50);
        for (std::size_t i = 0; i < 50; ++i) {
            p[i] = rng.uniform();
            y[i] = static_cast<double>(rng.below(2));
        }
        p[0] = 0.0;
        p[1] = 1.0;
        REQUIRE(std::abs(bce_loss(p, y) - brute_bce(p, y)) <= 1e-12);
        REQUIRE(bce_loss(p, y) >= 0.0);
    }
    REQUIRE_THROWS_MATCHES(bce_loss(std::vector<double>(3), std::vector<double>(2)), Error,
                           Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::LengthMismatch;
                           }));
}

TEST_CASE("detector training on separable blobs", "[detect][train]") {
    const auto samples = fixtures::gaussian_blobs(200, 5, Seed{8});
    const auto result = train_detector(samples, 200, 0.1);
    REQUIRE(result.loss_trace.size() == 200);
    for (std::size_t i = 1; i < result.loss_trace.size(); ++i)
        REQUIRE(result.loss_trace[i] <= result.loss_trace[i - 1]);
    REQUIRE(result.loss_trace.front() < std::log(2.0));
    REQUIRE(accuracy(result.detector, samples) >= 0.99);
    for (const auto& s : samples) {
        const double p = result.detector.probability(s.features);
        REQUIRE(p > 0.0);
        REQUIRE(p < 1.0);
    }
}

TEST_CASE("detector training errors", "[detect][train]") {
    auto samples = fixtures::gaussian_blobs(10, 3, Seed{1});
    for (auto& s : samples) s.label = 1;
    REQUIRE_THROWS_MATCHES(train_detector(samples, 10, 0.1), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::SingleClassTrainingSet;
                           }));
    auto nan = fixtures::gaussian_blobs(10, 3, Seed{1});
    nan[0].features[1] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_MATCHES(train_detector(nan, 10, 0.1), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                               return e.kind() == ErrorKind::NonFiniteLoss;
                           }));
    auto ragged = fixtures::gaussian_blobs(10, 3, Seed{1});
    ragged[3].features.pop_back();
    REQUIRE_THROWS_AS(train_detector(ragged, 10, 0.1), Error);
}

TEST_CASE("standardization round trip keeps every decision", "[detect][property]") {
    const auto samples = fixtures::gaussian_blobs(100, 6, Seed{12});
    Detector det = train_detector(samples, 50, 0.1).detector;
    const Detector before = det;
    const auto [w, b] = det.raw_space();
    det.set_raw_space(w, b);
    for (std::size_t i = 0; i < det.weights.size(); ++i)
        REQUIRE(det.weights[i] == Catch::Approx(before.weights[i]).epsilon(1e-12));
    for (const auto& s : samples) {
        REQUIRE(det.flags(s.features) == before.flags(s.features));
        double raw = b;
        for (std::size_t i = 0; i < w.size(); ++i) raw += w[i] * s.features[i];
        REQUIRE(raw == Catch::Approx(before.logit(s.features)).epsilon(1e-9).margin(1e-9));
    }
}

TEST_CASE("detector json round trip", "[detect]") {
    const Detector& det = fixture().trained.detector;
    const auto j = nlohmann::ordered_json::parse(detector_to_json(det).dump());
    const Detector back = detector_from_json(j);
    REQUIRE(back.weights == det.weights);
    REQUIRE(back.mean == det.mean);
    REQUIRE(back.scale == det.scale);
    REQUIRE(back.bias == det.bias);
    auto bad = j;
    bad["feature_spec"]["recipe"] = "resnet34";
    REQUIRE_THROWS_AS(detector_from_json(bad), Error);
    bad = j;
    bad["weights"].erase(0);
    REQUIRE_THROWS_AS(detector_from_json(bad), Error);
}

TEST_CASE("fixture detector separates watermarked generations", "[detect]") {
    const auto& f = fixture();
    REQUIRE(accuracy(f.trained.detector, substitute_training_set(f.pool, DetectorTrainingConfig{}, Seed{31})) == 1.0);
    // Held-out substitutes with fresh keys.
    DetectorTrainingConfig held;
    held.substitutes = 3;
    held.per_class = 20;
    REQUIRE(accuracy(f.trained.detector, substitute_training_set(f.pool, held, Seed{999})) >= 0.99);
}

TEST_CASE("probe_token", "[detect][probe]") {
    const auto& f = fixture();
    const SimulatedModel model({{"angel", "church"}, TokenKind::Combination}, default_user_scheme(Seed{3}), Seed{4},
                               1.0, 0.0);
    ProbeConfig cfg;
    for (const auto& token : f.pool.tokens) {
        const bool expected = token == "angel" || token == "church";
        REQUIRE(probe_token(model, token, cfg, f.trained.detector, Seed{5}) == expected);
    }
    REQUIRE(probe_prompt("angel", kStylePromptStub) == "angel, A painting in the style of Baroque");

    SECTION("K = 100") {
        cfg.generations = 100;
        REQUIRE(probe_votes(model, "angel", cfg, f.trained.detector, Seed{5}) == 100);
        REQUIRE(probe_votes(model, "lord", cfg, f.trained.detector, Seed{5}) == 0);
    }
    SECTION("monotone in tau") {
        const SimulatedModel noisy({{"angel"}, TokenKind::PreExisting}, default_user_scheme(Seed{3}), Seed{4}, 0.5, 0.0);
        for (std::uint64_t s = 0; s < 10; ++s) {
            bool prev = true;
            for (double tau : {0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
                cfg.tau = tau;
                const bool now = probe_token(noisy, "angel", cfg, f.trained.detector, Seed{s});
                REQUIRE((prev || !now));
                prev = now;
            }
        }
    }
    SECTION("argument checks") {
        cfg.generations = 0;
        REQUIRE_THROWS_AS(probe_token(model, "angel", cfg, f.trained.detector, Seed{5}), Error);
        cfg.generations = 16;
        cfg.tau = 0.0;
        REQUIRE_THROWS_AS(probe_token(model, "angel", cfg, f.trained.detector, Seed{5}), Error);
    }
}

TEST_CASE("false-negative tail at q = 0.95, K = 16", "[detect][probe]") {
    // Probability that fewer than 8 of 16 generations carry the watermark.
    const double tail = binomial_cdf_below(16, 8, 0.95);
    REQUIRE(tail < 1e-5);
    REQUIRE(tail == Catch::Approx(1.6195e-8).epsilon(1e-4));
}

TEST_CASE("trace_leaker", "[detect][trace]") {
    const auto& f = fixture();
    const auto sets = assign_token_sets(10, 2, 5, f.pool, Seed{6});
    const auto ledger = ledger_for(sets, Seed{6});
    const ProbeConfig cfg;

    SECTION("perfect oracle finds every user") {
        for (const auto& e : ledger) {
            const SimulatedModel model(e.token_set, e.scheme, split(Seed{7}, "m", e.user_id), 1.0, 0.0);
            const auto report = trace_leaker(model, f.pool, ledger, f.trained.detector, cfg, Seed{8});
            const auto* traced = std::get_if<Traced>(&report.outcome);
            REQUIRE(traced);
            REQUIRE(traced->user_id == e.user_id);
            REQUIRE(report.votes.size() == f.pool.size());
            const auto j = trace_report_to_json(report);
            REQUIRE(j["outcome"] == "traced");
            REQUIRE(j["user_id"] == e.user_id);
        }
    }
    SECTION("clean oracle") {
        const SimulatedModel clean({}, default_user_scheme(Seed{1}), Seed{2}, 0.0, 0.0);
        const auto report = trace_leaker(clean, f.pool, ledger, f.trained.detector, cfg, Seed{8});
        REQUIRE(std::holds_alternative<NoWatermarkFound>(report.outcome));
        REQUIRE(trace_report_to_json(report)["outcome"] == "no_watermark_found");
    }
    SECTION("one silent trigger token gives a partial set") {
        const auto& e = ledger[6];
        SimulatedModel model(e.token_set, e.scheme, Seed{9}, 1.0, 0.0);
        const std::string silent = e.token_set.tokens.back();
        model.set_token_fidelity(silent, 0.0);
        const auto report = trace_leaker(model, f.pool, ledger, f.trained.detector, cfg, Seed{8});
        const auto* miss = std::get_if<NoLedgerMatch>(&report.outcome);
        REQUIRE(miss);
        std::set<std::string> expected = e.token_set.as_set();
        expected.erase(silent);
        REQUIRE(std::set<std::string>(miss->triggered.begin(), miss->triggered.end()) == expected);
        REQUIRE(trace_report_to_json(report)["outcome"] == "no_ledger_match");
    }
    SECTION("duplicate sets in the ledger") {
        auto dup = ledger;
        dup[1].token_set = dup[0].token_set;
        const SimulatedModel model(dup[0].token_set, dup[0].scheme, Seed{9}, 1.0, 0.0);
        REQUIRE_THROWS_MATCHES(trace_leaker(model, f.pool, dup, f.trained.detector, cfg, Seed{8}), Error,
                               Catch::Matchers::Predicate<Error>([](const Error& x) {
                                   return x.kind() == ErrorKind::NonDistinctLedger;
                               }));
        const auto outcome = match_ledger(dup[0].token_set.tokens, dup);
        REQUIRE(std::holds_alternative<Ambiguous>(outcome));
        REQUIRE(std::get<Ambiguous>(outcome).user_ids == std::vector<std::uint64_t>{1, 2});
    }
}

TEST_CASE("match_ledger uses exact set equality", "[detect][trace]") {
    const auto ledger = ledger_for({{{"a", "b"}, TokenKind::Combination}, {{"a", "b", "c"}, TokenKind::Combination}},
                                   Seed{1});
    REQUIRE(std::get<Traced>(match_ledger({"b", "a"}, ledger)).user_id == 1);
    REQUIRE(std::get<Traced>(match_ledger({"c", "a", "b"}, ledger)).user_id == 2);
    REQUIRE(std::holds_alternative<NoLedgerMatch>(match_ledger({"a"}, ledger)));
    REQUIRE(std::holds_alternative<NoLedgerMatch>(match_ledger({"a", "b", "c", "d"}, ledger)));
    REQUIRE(std::holds_alternative<NoWatermarkFound>(match_ledger({}, ledger)));
}
