#pragma once

// Quadratic stand-in for a fully trained model's loss on a single image:
//
//   L(x) = 1/2 * || K (x - anchor) ||^2
//
// K applies a 3x3 filter to each channel independently with replicate padding.
// The anchor is the loss minimiser (L(anchor) = 0), which mirrors a model that
// has converged on the clean image.

#include "tracemark/error.hpp"
#include "tracemark/image.hpp"
#include "tracemark/rng.hpp"

#include <array>

namespace tracemark {

using Kernel3x3 = std::array<double, 9>;

inline constexpr Kernel3x3 kIdentityKernel{0, 0, 0, 0, 1, 0, 0, 0, 0};

/// Uniform [-1, 1] taps with the mean removed, so K annihilates constants.
inline Kernel3x3 seeded_kernel(Seed seed) {
    Rng rng(split(seed, "surrogate-kernel"));
    Kernel3x3 k{};
    double mean = 0.0;
    for (double& v : k) {
        v = rng.uniform(-1.0, 1.0);
        mean += v;
    }
    mean /= 9.0;
    for (double& v : k) v -= mean;
    return k;
}

/// Applies the 3x3 filter channel-wise: out(y,x) = sum k[a][b] in(y+a-1, x+b-1).
inline Image apply_filter(const Kernel3x3& k, const Image& in) {
    const std::size_t w = in.width(), h = in.height();
    Image out(w, h);
    if (in.empty()) return out;
    const auto src = in.pixels();
    auto dst = out.pixels();
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t ys[3] = {y == 0 ? 0 : y - 1, y, std::min(y + 1, h - 1)};
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t xs[3] = {x == 0 ? 0 : x - 1, x, std::min(x + 1, w - 1)};
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 3; ++b)
                        acc += k[a * 3 + b] * src[(ys[a] * w + xs[b]) * 3 + c];
                dst[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    return out;
}

/// Exact adjoint of apply_filter, replicate padding included: each output tap
/// scatters its weighted value back onto the (clamped) source pixel it read.
inline Image apply_filter_adjoint(const Kernel3x3& k, const Image& in) {
    const std::size_t w = in.width(), h = in.height();
    Image out(w, h);
    if (in.empty()) return out;
    const auto src = in.pixels();
    auto dst = out.pixels();
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t ys[3] = {y == 0 ? 0 : y - 1, y, std::min(y + 1, h - 1)};
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t xs[3] = {x == 0 ? 0 : x - 1, x, std::min(x + 1, w - 1)};
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = src[(y * w + x) * 3 + c];
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 3; ++b)
                        dst[(ys[a] * w + xs[b]) * 3 + c] += k[a * 3 + b] * v;
            }
        }
    }
    return out;
}

class SurrogateModel {
public:
    SurrogateModel(Seed operator_seed, Image anchor)
        : operator_seed_(operator_seed), kernel_(seeded_kernel(operator_seed)), anchor_(std::move(anchor)) {}

    SurrogateModel(const Kernel3x3& kernel, Image anchor) : kernel_(kernel), anchor_(std::move(anchor)) {}

    Seed operator_seed() const noexcept { return operator_seed_; }
    const Kernel3x3& kernel() const noexcept { return kernel_; }
    const Image& anchor() const noexcept { return anchor_; }

    double loss(const Image& x) const {
        const Image r = residual(x);
        double sum = 0.0;
        for (double v : r.pixels()) sum += v * v;
        return 0.5 * sum;
    }

    /// K^T K (x - anchor).
    Image grad(const Image& x) const { return apply_filter_adjoint(kernel_, residual(x)); }

private:
    Image residual(const Image& x) const {
        require_same_shape(x, anchor_);
        Image diff = x;
        auto d = diff.pixels();
        const auto a = anchor_.pixels();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= a[i];
        return apply_filter(kernel_, diff);
    }

    Seed operator_seed_{};
    Kernel3x3 kernel_{};
    Image anchor_;
};

} // namespace tracemark
