#include "support/fixtures.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace tracemark;

namespace {

Image constant_image(std::size_t w, std::size_t h, double v) {
    Image img(w, h);
    for (double& p : img.pixels()) p = v;
    return img;
}

double max_abs_diff(const Image& a, const Image& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
    return m;
}

} // namespace

TEST_CASE("every degradation preserves dimensions", "[degrade]") {
    const auto img = render_scene(Seed{1}, 48, 40);
    for (const auto& spec : default_degradations(Seed{2})) {
        const auto out = apply_degradation(img, spec);
        INFO(degrade_name(spec));
        REQUIRE(out.width() == 48);
        REQUIRE(out.height() == 40);
        for (double v : out.pixels()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
}

TEST_CASE("default degradation settings", "[degrade]") {
    const auto specs = default_degradations(Seed{3});
    REQUIRE(specs.size() == 5);
    REQUIRE(std::get<JpegSpec>(specs[0]).quality == 5);
    REQUIRE(std::get<SharpenSpec>(specs[1]).factor == 10.0);
    REQUIRE(std::get<GaussianNoiseSpec>(specs[2]).variance == 1.0);
    REQUIRE(std::get<GaussianBlurSpec>(specs[3]).sigma == 1.0);
    REQUIRE(std::get<ResizeRoundtripSpec>(specs[4]).down_w == 256);
    REQUIRE(degrade_parameters(specs[0]) == "quality=5");
    REQUIRE(degrade_parameters(specs[2]) == "mean=0 var=1 scale=8bit");
    REQUIRE(degrade_parameters(specs[4]) == "down=256x256");
}

TEST_CASE("gaussian kernel", "[degrade]") {
    for (double sigma : {0.5, 1.0, 2.3}) {
        const auto k = gaussian_kernel(sigma);
        REQUIRE(k.size() == 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
        double sum = 0;
        for (double v : k) sum += v;
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        for (std::size_t i = 0; i < k.size(); ++i) REQUIRE(k[i] == k[k.size() - 1 - i]);
    }
    REQUIRE(gaussian_kernel(0.0) == std::vector<double>{1.0});
}

TEST_CASE("blur", "[degrade]") {
    SECTION("constant input is unchanged") {
        const auto c = constant_image(17, 9, 0.3);
        REQUIRE(max_abs_diff(gaussian_blur(c, 1.5), c) <= 1e-12);
    }
    SECTION("mass of an interior impulse is preserved") {
        Image img(21, 21);
        img.at(10, 10, 1) = 1.0;
        const auto out = gaussian_blur(img, 1.0);
        double sum = 0;
        for (std::size_t y = 0; y < 21; ++y)
            for (std::size_t x = 0; x < 21; ++x) sum += out.at(x, y, 1);
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        const auto k = gaussian_kernel(1.0);
        REQUIRE(out.at(10, 10, 1) == Catch::Approx(k[3] * k[3]).margin(1e-15));
        REQUIRE(out.at(11, 10, 1) == Catch::Approx(k[4] * k[3]).margin(1e-15));
    }
    SECTION("blur reduces variance") {
        const auto img = fixtures::random_image(32, 32, Seed{4});
        auto var = [](const Image& im) {
            double m = 0, s = 0;
            for (double v : im.pixels()) m += v;
            m /= static_cast<double>(im.size());
            for (double v : im.pixels()) s += (v - m) * (v - m);
            return s;
        };
        REQUIRE(var(gaussian_blur(img, 1.0)) < var(img));
    }
}

TEST_CASE("resize", "[degrade]") {
    const auto img = fixtures::random_image(12, 8, Seed{5});
    REQUIRE(max_abs_diff(resize_bilinear(img, 12, 8), img) == 0.0);
    REQUIRE(max_abs_diff(resize_bilinear(constant_image(9, 7, 0.6), 4, 13), constant_image(4, 13, 0.6)) <= 1e-15);
    const auto half = resize_bilinear(img, 6, 4);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 6; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double box = (img.at(2 * x, 2 * y, c) + img.at(2 * x + 1, 2 * y, c) +
                                    img.at(2 * x, 2 * y + 1, c) + img.at(2 * x + 1, 2 * y + 1, c)) /
                                   4;
                REQUIRE(half.at(x, y, c) == Catch::Approx(box).margin(1e-12));
            }
    REQUIRE_THROWS_AS(resize_bilinear(img, 0, 3), Error);
}

TEST_CASE("sharpen", "[degrade]") {
    const auto img = render_scene(Seed{6}, 32, 32);
    REQUIRE(max_abs_diff(sharpen(img, 1.0), img) <= 1e-15);
    const auto c = constant_image(10, 10, 0.4);
    REQUIRE(max_abs_diff(sharpen(c, 10.0), c) <= 1e-12);
    const auto sharp = apply_degradation(img, SharpenSpec{10.0});
    REQUIRE(max_abs_diff(sharp, img) > 0.0);
}

TEST_CASE("jpeg quality ordering", "[degrade]") {
    const auto img = render_scene(Seed{7}, 64, 64);
    const double hi = psnr(img, apply_degradation(img, JpegSpec{100}));
    const double lo = psnr(img, apply_degradation(img, JpegSpec{5}));
    REQUIRE(hi > lo);
    REQUIRE(hi > 35.0);
}

TEST_CASE("gaussian noise", "[degrade]") {
    const auto gray = constant_image(128, 128, 0.5);
    auto moments = [&](const Image& out) {
        double m = 0, s = 0;
        for (std::size_t i = 0; i < out.size(); ++i) m += out.pixels()[i] - 0.5;
        m /= static_cast<double>(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) s += std::pow(out.pixels()[i] - 0.5 - m, 2);
        return std::pair{m, s / static_cast<double>(out.size() - 1)};
    };
    SECTION("8-bit scale") {
        const auto [m, v] = moments(apply_degradation(gray, GaussianNoiseSpec{0.0, 1.0, Seed{8}}));
        const double sd = 1.0 / 255.0;
        REQUIRE(std::abs(m) <= 4 * sd / std::sqrt(128.0 * 128 * 3));
        REQUIRE(v == Catch::Approx(sd * sd).epsilon(0.03));
    }
    SECTION("unit scale") {
        const auto [m, v] = moments(apply_degradation(gray, GaussianNoiseSpec{0.01, 1e-4, Seed{8}, NoiseScale::Unit}));
        REQUIRE(m == Catch::Approx(0.01).margin(4 * 0.01 / std::sqrt(128.0 * 128 * 3)));
        REQUIRE(v == Catch::Approx(1e-4).epsilon(0.03));
    }
    SECTION("seeded and item-separated") {
        const GaussianNoiseSpec spec{0.0, 4.0, Seed{9}};
        const auto a = apply_degradation(gray, spec, 0);
        REQUIRE(max_abs_diff(a, apply_degradation(gray, spec, 0)) == 0.0);
        REQUIRE(max_abs_diff(a, apply_degradation(gray, spec, 1)) > 0.0);
        REQUIRE(max_abs_diff(a, apply_degradation(gray, GaussianNoiseSpec{0.0, 4.0, Seed{10}}, 0)) > 0.0);
    }
    SECTION("negative variance") {
        REQUIRE_THROWS_AS(apply_degradation(gray, GaussianNoiseSpec{0.0, -1.0, Seed{}}), Error);
    }
}

TEST_CASE("degrade_release and robustness table", "[degrade]") {
    fixtures::TempDir tmp("degrade");
    std::vector<std::string> captions;
    for (int i = 0; i < 12; ++i) captions.push_back(i % 2 ? "an angel over the river" : "a quiet harbor");
    const auto originals = fixtures::write_dataset(tmp / "orig", captions, 64, Seed{11});
    const DwtKey key(Seed{12}, 0.0, kDefaultDwtAmplitude);
    const auto release = distribute_waa(originals, {{"angel"}, TokenKind::PreExisting}, key, tmp / "release");
    REQUIRE(release.report.modified_indices.size() == 6);

    SECTION("captions and names untouched") {
        const auto out = degrade_release(release.manifest, JpegSpec{50}, tmp / "jpeg");
        const auto loaded = load_manifest(tmp / "jpeg" / "manifest.jsonl");
        REQUIRE(loaded.size() == 12);
        for (std::size_t i = 0; i < 12; ++i) {
            REQUIRE(loaded.pairs[i].caption == captions[i]);
            REQUIRE(loaded.pairs[i].image_path == release.manifest.pairs[i].image_path);
            REQUIRE(load_png(loaded.image_file(i)).width() == 64);
        }
        REQUIRE_THROWS_AS(degrade_release(release.manifest, JpegSpec{50}, tmp / "jpeg"), Error);
        REQUIRE_NOTHROW(degrade_release(release.manifest, JpegSpec{50}, tmp / "jpeg", ReleaseOptions{true}));
        (void)out;
    }

    SECTION("robustness table") {
        const std::vector<DegradeSpec> specs{JpegSpec{5},         SharpenSpec{10.0},
                                             GaussianNoiseSpec{0.0, 1.0, Seed{13}}, GaussianBlurSpec{1.0},
                                             ResizeRoundtripSpec{32, 32}};
        const auto table = evaluate_robustness(originals, release, key, nullptr, specs, tmp / "robust");
        REQUIRE(table.rows.size() == 5);
        for (const auto& row : table.rows) {
            REQUIRE(row.images == 12);
            REQUIRE(row.dimensions_preserved);
            REQUIRE_FALSE(row.detection_accuracy);
            REQUIRE(row.fraction_above_floor >= 0.0);
            REQUIRE(row.fraction_above_floor <= 1.0);
            REQUIRE(std::filesystem::exists(row.release_dir / "manifest.jsonl"));
        }
        // 8-bit noise of unit variance barely moves the informed score.
        REQUIRE(table.rows[2].mean_score > 0.8);
        const auto text = robustness_text(table);
        REQUIRE(text.find("Damage") != std::string::npos);
        REQUIRE(text.find("resize") != std::string::npos);
        const auto j = robustness_to_json(table);
        REQUIRE(j["rows"].size() == 5);
        REQUIRE(j["rows"][0]["damage"] == "jpeg");
        REQUIRE(j["rows"][0]["detection_accuracy"].is_null());
    }
}
