#pragma once

// Grayscale frames, ROI crops and the per-frame preprocessing chain
// (grayscale -> histogram equalisation -> ROI crop -> zero-mean/unit-variance).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spikepin/errors.hpp"

namespace spikepin {

template <typename Pixel>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<Pixel> data;  // row-major

    Image() = default;
    Image(int w, int h, Pixel fill = Pixel{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 0 || h < 0) throw InvalidInput("negative image dimensions");
    }

    [[nodiscard]] bool empty() const { return width == 0 || height == 0; }
    [[nodiscard]] std::size_t size() const { return data.size(); }

    Pixel& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const Pixel& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const Image&) const = default;
};

using ImageU8 = Image<std::uint8_t>;
using ImageF32 = Image<float>;

// Interleaved 3-channel 8-bit image.
struct ImageRgb {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // RGBRGB..., row-major
};

struct Roi {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;

    static constexpr int kMinSide = 16;

    bool operator==(const Roi&) const = default;

    [[nodiscard]] bool fits(int img_w, int img_h) const {
        return x0 >= 0 && y0 >= 0 && width >= 0 && height >= 0 && x0 + width <= img_w && y0 + height <= img_h;
    }
};

enum class Label { PinOk = 0, PinOut = 1 };

enum class Provenance { RealLike, SyntheticBase, Augmented };

inline std::string to_string(Label l) { return l == Label::PinOk ? "PinOk" : "PinOut"; }

inline Label label_from_string(const std::string& s) {
    if (s == "PinOk") return Label::PinOk;
    if (s == "PinOut") return Label::PinOut;
    throw InvalidInput("unknown label '" + s + "'");
}

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::RealLike: return "real-like";
        case Provenance::SyntheticBase: return "synthetic-base";
        case Provenance::Augmented: return "augmented";
    }
    return "?";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "real-like") return Provenance::RealLike;
    if (s == "synthetic-base") return Provenance::SyntheticBase;
    if (s == "augmented") return Provenance::Augmented;
    throw InvalidInput("unknown provenance '" + s + "'");
}

struct LabeledFrame {
    ImageU8 image;
    Label label = Label::PinOk;
    std::string source_id;
    Provenance provenance = Provenance::RealLike;
};

// BT.601 luma, rounded half away from zero.
inline ImageU8 to_grayscale(const ImageRgb& rgb) {
    if (rgb.width <= 0 || rgb.height <= 0) throw InvalidInput("to_grayscale: zero-sized image");
    if (rgb.data.size() != static_cast<std::size_t>(rgb.width) * rgb.height * 3)
        throw InvalidInput("to_grayscale: buffer size does not match 3 x width x height");
    ImageU8 out(rgb.width, rgb.height);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double r = rgb.data[3 * i], g = rgb.data[3 * i + 1], b = rgb.data[3 * i + 2];
        const double y = std::round(0.299 * r + 0.587 * g + 0.114 * b);
        out.data[i] = static_cast<std::uint8_t>(std::clamp(y, 0.0, 255.0));
    }
    return out;
}

// v' = round(255 (cdf(v) - cdf_min) / (N - cdf_min)). Single-level images pass through.
inline ImageU8 histogram_equalize(const ImageU8& img) {
    if (img.empty()) throw InvalidInput("histogram_equalize: zero-sized image");
    std::array<std::size_t, 256> hist{};
    for (auto v : img.data) ++hist[v];

    std::array<std::size_t, 256> cdf{};
    std::size_t run = 0;
    std::size_t cdf_min = 0;
    for (int v = 0; v < 256; ++v) {
        run += hist[v];
        cdf[v] = run;
        if (cdf_min == 0 && run > 0) cdf_min = run;
    }
    const std::size_t n = img.size();
    if (cdf_min == n) return img;

    std::array<std::uint8_t, 256> lut{};
    const double denom = static_cast<double>(n - cdf_min);
    for (int v = 0; v < 256; ++v) {
        if (cdf[v] < cdf_min) continue;
        lut[v] = static_cast<std::uint8_t>(std::lround(255.0 * static_cast<double>(cdf[v] - cdf_min) / denom));
    }
    ImageU8 out(img.width, img.height);
    for (std::size_t i = 0; i < n; ++i) out.data[i] = lut[img.data[i]];
    return out;
}

inline constexpr double kZmuvSigmaFloor = 1e-8;

// Population statistics; images with sigma below the floor map to all zeros.
inline ImageF32 normalize_zmuv(const ImageU8& img) {
    if (img.empty()) throw InvalidInput("normalize_zmuv: zero-sized image");
    double sum = 0.0;
    for (auto v : img.data) sum += v;
    const double mean = sum / static_cast<double>(img.size());
    double ss = 0.0;
    for (auto v : img.data) ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / static_cast<double>(img.size()));

    ImageF32 out(img.width, img.height, 0.0f);
    if (sigma < kZmuvSigmaFloor) return out;
    for (std::size_t i = 0; i < img.size(); ++i) out.data[i] = static_cast<float>((img.data[i] - mean) / sigma);
    return out;
}

template <typename Pixel>
Image<Pixel> crop_roi(const Image<Pixel>& img, const Roi& roi) {
    if (!roi.fits(img.width, img.height))
        throw BoundsError("crop_roi: roi (" + std::to_string(roi.x0) + "," + std::to_string(roi.y0) + " " +
                          std::to_string(roi.width) + "x" + std::to_string(roi.height) + ") exceeds image " +
                          std::to_string(img.width) + "x" + std::to_string(img.height));
    Image<Pixel> out(roi.width, roi.height);
    for (int i = 0; i < roi.height; ++i) {
        const auto* src = &img.data[static_cast<std::size_t>(roi.y0 + i) * img.width + roi.x0];
        std::copy(src, src + roi.width, &out.data[static_cast<std::size_t>(i) * roi.width]);
    }
    return out;
}

// Keeps every k-th element starting at 0 (keep ratio 1/k).
template <typename T>
std::vector<T> stride_subsample(std::span<const T> items, int k) {
    if (k < 1) throw InvalidInput("stride_subsample: k must be >= 1");
    std::vector<T> out;
    out.reserve(items.size() / k + 1);
    for (std::size_t i = 0; i < items.size(); i += static_cast<std::size_t>(k)) out.push_back(items[i]);
    return out;
}

// Grayscale u8 frame -> zero-mean/unit-variance ROI, in the fixed pipeline order.
inline ImageF32 preprocess_frame(const ImageU8& gray, const Roi& roi) {
    return normalize_zmuv(crop_roi(histogram_equalize(gray), roi));
}

}  // namespace spikepin
