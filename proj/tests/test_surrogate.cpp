#include "support/fixtures.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace tracemark;

namespace {

// Direct convolution on an explicitly padded copy.
double brute_loss(const Kernel3x3& k, const Image& x, const Image& anchor) {
    const std::size_t w = x.width(), h = x.height();
    long double sum = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> pad((w + 2) * (h + 2));
        for (std::size_t y = 0; y < h + 2; ++y)
            for (std::size_t xx = 0; xx < w + 2; ++xx) {
                const std::size_t sy = std::clamp<long>(static_cast<long>(y) - 1, 0, static_cast<long>(h) - 1);
                const std::size_t sx = std::clamp<long>(static_cast<long>(xx) - 1, 0, static_cast<long>(w) - 1);
                pad[y * (w + 2) + xx] = x.at(sx, sy, c) - anchor.at(sx, sy, c);
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                long double acc = 0;
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 3; ++b) acc += k[a * 3 + b] * pad[(y + a) * (w + 2) + xx + b];
                sum += acc * acc;
            }
    }
    return static_cast<double>(sum / 2);
}

double dot(const Image& a, const Image& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.pixels()[i] * b.pixels()[i];
    return static_cast<double>(s);
}

} // namespace

TEST_CASE("seeded kernel is zero-mean and within range", "[surrogate]") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto k = seeded_kernel(Seed{s});
        double sum = 0;
        for (double v : k) {
            sum += v;
            REQUIRE(std::abs(v) <= 2.0);
        }
        REQUIRE(std::abs(sum) <= 1e-12);
    }
    REQUIRE(seeded_kernel(Seed{1}) == seeded_kernel(Seed{1}));
    REQUIRE(seeded_kernel(Seed{1}) != seeded_kernel(Seed{2}));
}

TEST_CASE("surrogate loss", "[surrogate]") {
    const auto anchor = fixtures::random_image(19, 13, Seed{1});
    SECTION("zero at the anchor") {
        REQUIRE(SurrogateModel(Seed{4}, anchor).loss(anchor) == 0.0);
    }
    SECTION("identity kernel and constant offset") {
        Image x = anchor;
        for (double& v : x.pixels()) v += 0.1;
        const double expected = 0.5 * 0.01 * static_cast<double>(anchor.size());
        REQUIRE(SurrogateModel(kIdentityKernel, anchor).loss(x) == Catch::Approx(expected).epsilon(1e-12));
    }
    SECTION("matches direct summation") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const SurrogateModel m(Seed{s}, anchor);
            const auto x = fixtures::random_image(19, 13, Seed{100 + s});
            const double want = brute_loss(m.kernel(), x, anchor);
            REQUIRE(std::abs(m.loss(x) - want) <= 1e-9 * want);
            REQUIRE(m.loss(x) >= 0.0);
        }
    }
    SECTION("shape mismatch") {
        REQUIRE_THROWS_AS(SurrogateModel(Seed{1}, anchor).loss(Image(3, 3)), Error);
        REQUIRE_THROWS_AS(SurrogateModel(Seed{1}, anchor).grad(Image(3, 3)), Error);
    }
}

TEST_CASE("adjoint identity <Kx, y> == <x, K^T y>", "[surrogate][property]") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto k = seeded_kernel(Seed{s});
        const auto x = fixtures::random_image(11, 7, Seed{200 + s}, -1, 1);
        const auto y = fixtures::random_image(11, 7, Seed{300 + s}, -1, 1);
        const double lhs = dot(apply_filter(k, x), y);
        const double rhs = dot(x, apply_filter_adjoint(k, y));
        REQUIRE(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("surrogate gradient", "[surrogate]") {
    const auto anchor = fixtures::random_image(24, 24, Seed{2});
    SECTION("zero at the anchor") {
        for (double g : SurrogateModel(Seed{3}, anchor).grad(anchor).pixels()) REQUIRE(g == 0.0);
    }
    SECTION("identity kernel returns the displacement") {
        const auto d = fixtures::random_image(24, 24, Seed{4}, -0.1, 0.1);
        Image x = anchor;
        for (std::size_t i = 0; i < x.size(); ++i) x.pixels()[i] += d.pixels()[i];
        const auto g = SurrogateModel(kIdentityKernel, anchor).grad(x);
        for (std::size_t i = 0; i < x.size(); ++i)
            REQUIRE(g.pixels()[i] == Catch::Approx(x.pixels()[i] - anchor.pixels()[i]).margin(1e-15));
    }
    SECTION("central finite differences over seeded kernels") {
        for (std::uint64_t s = 0; s < 8; ++s) {
            const SurrogateModel m(Seed{s}, anchor);
            const auto x = fixtures::random_image(24, 24, Seed{50 + s});
            const auto g = m.grad(x);
            Rng pick(Seed{60 + s});
            double worst = 0;
            for (int t = 0; t < 100; ++t) {
                const std::size_t i = pick.below(x.size());
                const double h = 1e-4;
                Image xp = x, xm = x;
                xp.pixels()[i] += h;
                xm.pixels()[i] -= h;
                const double fd = (m.loss(xp) - m.loss(xm)) / (2 * h);
                const double gi = g.pixels()[i];
                worst = std::max(worst, std::abs(fd - gi) / std::max(std::abs(gi), 1e-6));
            }
            INFO("kernel seed " << s);
            REQUIRE(worst <= 1e-4);
        }
    }
    SECTION("directional derivative along the gradient approaches its squared norm") {
        const SurrogateModel m(Seed{9}, anchor);
        const auto x = fixtures::random_image(24, 24, Seed{10});
        const auto g = m.grad(x);
        const double norm2 = dot(g, g);
        double prev_err = std::numeric_limits<double>::infinity();
        for (double h : {1e-2, 1e-3, 1e-4}) {
            Image xh = x;
            for (std::size_t i = 0; i < x.size(); ++i) xh.pixels()[i] += h * g.pixels()[i];
            const double err = std::abs((m.loss(xh) - m.loss(x)) / h - norm2) / norm2;
            REQUIRE(err < prev_err);
            prev_err = err;
        }
        REQUIRE(prev_err <= 1e-3);
    }
}

TEST_CASE("first ascent step from the anchor increases the loss", "[surrogate][property]") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto anchor = fixtures::random_image(16, 16, Seed{400 + s});
        const SurrogateModel m(Seed{s}, anchor);
        const auto r = embed_adversarial(anchor, m, {0.05, 1, 0.0, Seed{s}});
        REQUIRE(r.final_loss > 0.0);
    }
}
