#pragma once

#include "tracemark/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace tracemark {

/// Dense row-major real matrix; one image channel or one wavelet subband.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// H x W x 3 raster, interleaved RGB, row-major, values nominally in [0, 1].
class Image {
public:
    static constexpr std::size_t kChannels = 3;

    Image() = default;
    Image(std::size_t width, std::size_t height, double fill = 0.0)
        : width_(width), height_(height), pixels_(width * height * kChannels, fill) {}

    Image(std::size_t width, std::size_t height, std::vector<double> pixels)
        : width_(width), height_(height), pixels_(std::move(pixels)) {
        if (pixels_.size() != width_ * height_ * kChannels)
            throw Error(ErrorKind::DimensionMismatch,
                        "pixel buffer of " + std::to_string(pixels_.size()) + " values for " +
                            std::to_string(width_) + "x" + std::to_string(height_) + "x3");
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t channels() const noexcept { return kChannels; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    double& at(std::size_t x, std::size_t y, std::size_t c) {
        return pixels_[(y * width_ + x) * kChannels + c];
    }
    double at(std::size_t x, std::size_t y, std::size_t c) const {
        return pixels_[(y * width_ + x) * kChannels + c];
    }

    std::span<double> pixels() noexcept { return pixels_; }
    std::span<const double> pixels() const noexcept { return pixels_; }

    bool same_shape(const Image& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }

    Matrix channel(std::size_t c) const {
        Matrix m(height_, width_);
        auto out = m.values();
        for (std::size_t i = 0, n = width_ * height_; i < n; ++i) out[i] = pixels_[i * kChannels + c];
        return m;
    }

    void set_channel(std::size_t c, const Matrix& m) {
        if (m.rows() != height_ || m.cols() != width_)
            throw Error(ErrorKind::DimensionMismatch, "channel plane does not match image size");
        auto in = m.values();
        for (std::size_t i = 0, n = width_ * height_; i < n; ++i) pixels_[i * kChannels + c] = in[i];
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> pixels_;
};

inline void require_same_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b))
        throw Error(ErrorKind::DimensionMismatch,
                    std::to_string(a.width()) + "x" + std::to_string(a.height()) + " vs " +
                        std::to_string(b.width()) + "x" + std::to_string(b.height()));
}

inline Image clamp_unit(Image img) {
    for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

/// Returned by psnr for identical inputs.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

inline double mse(const Image& a, const Image& b) {
    require_same_shape(a, b);
    if (a.empty()) return 0.0;
    const auto pa = a.pixels();
    const auto pb = b.pixels();
    double sum = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double d = pa[i] - pb[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pa.size());
}

/// Peak signal-to-noise ratio for unit-peak images, in dB.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / m);
}

inline std::uint8_t quantize_8bit(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Snaps every pixel onto the 8-bit grid that PNG persistence uses.
inline Image quantize(Image img) {
    for (double& v : img.pixels()) v = quantize_8bit(v) / 255.0;
    return img;
}

} // namespace tracemark
