#pragma once

// Scale-invariant feature transform: Gaussian/DoG scale space, extremum
// detection with sub-pixel refinement, orientation assignment, 4x4x8
// descriptors and response-ranked, spatially ordered top-N assembly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <vector>

#include "spikepin/errors.hpp"
#include "spikepin/image.hpp"

namespace spikepin::sift {

inline constexpr int kDescriptorWidth = 4;
inline constexpr int kDescriptorBins = 8;
inline constexpr int kDescriptorSize = kDescriptorWidth * kDescriptorWidth * kDescriptorBins;  // 128
inline constexpr int kDefaultTopN = 100;

struct SiftConfig {
    int scales_per_octave = 3;
    double base_sigma = 1.6;
    double assumed_blur = 0.5;
    // In units of a [0,1] input range; scaled by the actual input range at detection time.
    double contrast_threshold = 0.03;
    double edge_ratio = 10.0;
    int orientation_bins = 36;
    double orientation_sigma_factor = 1.5;
    double peak_ratio = 0.8;
    double descriptor_scale_factor = 3.0;
    double descriptor_clamp = 0.2;
    bool upsample_input = false;
    int max_interp_steps = 5;
    int border = 5;
    int min_octave_side = 8;
};

struct ScaleSpace {
    int scales_per_octave = 3;
    double base_sigma = 1.6;
    int first_octave = 0;  // -1 when the input was upsampled
    float input_range = 1.0f;
    std::vector<std::vector<ImageF32>> gaussians;  // [octave][0 .. s+2]
    std::vector<std::vector<ImageF32>> dog;        // [octave][0 .. s+1]

    [[nodiscard]] int octaves() const { return static_cast<int>(gaussians.size()); }

    // Blur of Gaussian level (o, i) in original-image pixels.
    [[nodiscard]] double sigma(int o, double i) const {
        return base_sigma * std::pow(2.0, o + first_octave + i / scales_per_octave);
    }
};

struct Keypoint {
    float x = 0, y = 0;  // original-image pixels
    int octave = 0;      // index into ScaleSpace::gaussians
    int layer = 0;
    float layer_offset = 0;  // sub-level refinement in [-0.5, 0.5]
    float scale = 0;         // blur units, original-image pixels
    float orientation = 0;   // radians, [0, 2pi)
    float response = 0;      // refined DoG value relative to the input range (signed)

    // Octave-local position and blur.
    float ox = 0, oy = 0;
    float octave_sigma = 0;
};

using Descriptor = std::array<float, kDescriptorSize>;

struct FrameFeatures {
    int slots = kDefaultTopN;
    std::vector<Keypoint> keypoints;  // retained, spatial order
    std::vector<std::uint8_t> pad_mask;  // 1 = real keypoint
    std::vector<float> flat;          // slots * 128

    [[nodiscard]] std::span<const float> descriptor(int slot) const {
        return std::span<const float>(flat).subspan(static_cast<std::size_t>(slot) * kDescriptorSize, kDescriptorSize);
    }
};

namespace detail {

inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

inline std::vector<float> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
    std::vector<float> k(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[i + radius] = static_cast<float>(v);
        sum += v;
    }
    for (auto& v : k) v = static_cast<float>(v / sum);
    return k;
}

}  // namespace detail

// Separable Gaussian blur, reflect-101 borders.
inline ImageF32 gaussian_blur(const ImageF32& src, double sigma) {
    if (sigma <= 0) return src;
    const auto k = detail::gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    const int w = src.width, h = src.height;
    ImageF32 tmp(w, h), out(w, h);
    std::vector<float> line(static_cast<std::size_t>(std::max(w, h) + 2 * r));

    for (int y = 0; y < h; ++y) {
        const float* row = &src.data[static_cast<std::size_t>(y) * w];
        for (int i = -r; i < w + r; ++i) line[i + r] = row[detail::reflect101(i, w)];
        float* dst = &tmp.data[static_cast<std::size_t>(y) * w];
        for (int x = 0; x < w; ++x) {
            float acc = 0;
            for (int t = 0; t <= 2 * r; ++t) acc += k[t] * line[x + t];
            dst[x] = acc;
        }
    }
    for (int x = 0; x < w; ++x) {
        for (int i = -r; i < h + r; ++i) line[i + r] = tmp.data[static_cast<std::size_t>(detail::reflect101(i, h)) * w + x];
        for (int y = 0; y < h; ++y) {
            float acc = 0;
            for (int t = 0; t <= 2 * r; ++t) acc += k[t] * line[y + t];
            out.data[static_cast<std::size_t>(y) * w + x] = acc;
        }
    }
    return out;
}

inline ImageF32 downsample_half(const ImageF32& src) {
    ImageF32 out(src.width / 2, src.height / 2);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(x, y) = src.at(2 * x, 2 * y);
    return out;
}

inline ImageF32 upsample_double(const ImageF32& src) {
    ImageF32 out(src.width * 2, src.height * 2);
    for (int y = 0; y < out.height; ++y) {
        const float sy = std::clamp((y + 0.5f) * 0.5f - 0.5f, 0.0f, static_cast<float>(src.height - 1));
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const float fy = sy - y0;
        for (int x = 0; x < out.width; ++x) {
            const float sx = std::clamp((x + 0.5f) * 0.5f - 0.5f, 0.0f, static_cast<float>(src.width - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const float fx = sx - x0;
            out.at(x, y) = (1 - fy) * ((1 - fx) * src.at(x0, y0) + fx * src.at(x1, y0)) +
                           fy * ((1 - fx) * src.at(x0, y1) + fx * src.at(x1, y1));
        }
    }
    return out;
}

inline ScaleSpace build_scale_space(const ImageF32& img, const SiftConfig& cfg = {}) {
    if (img.width < 32 || img.height < 32) throw InvalidInput("build_scale_space: image must be at least 32x32");
    if (cfg.scales_per_octave < 1) throw InvalidInput("build_scale_space: scales_per_octave must be >= 1");
    for (float v : img.data)
        if (!std::isfinite(v)) throw InvalidInput("build_scale_space: non-finite pixel");

    ScaleSpace space;
    space.scales_per_octave = cfg.scales_per_octave;
    space.base_sigma = cfg.base_sigma;
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    space.input_range = (*hi - *lo) > 0 ? (*hi - *lo) : 1.0f;

    ImageF32 base = img;
    double blur = cfg.assumed_blur;
    if (cfg.upsample_input) {
        base = upsample_double(img);
        blur *= 2.0;
        space.first_octave = -1;
    }
    const double diff = std::sqrt(std::max(cfg.base_sigma * cfg.base_sigma - blur * blur, 0.01));
    base = gaussian_blur(base, diff);

    const int s = cfg.scales_per_octave;
    const int levels = s + 3;
    std::vector<double> step(levels, 0.0);
    const double k = std::pow(2.0, 1.0 / s);
    for (int i = 1; i < levels; ++i) {
        const double prev = cfg.base_sigma * std::pow(k, i - 1);
        const double total = prev * k;
        step[i] = std::sqrt(total * total - prev * prev);
    }

    int n_oct = 0;
    for (int side = std::min(base.width, base.height); side >= cfg.min_octave_side; side /= 2) ++n_oct;

    space.gaussians.resize(n_oct);
    space.dog.resize(n_oct);
    for (int o = 0; o < n_oct; ++o) {
        auto& g = space.gaussians[o];
        g.reserve(levels);
        g.push_back(o == 0 ? base : downsample_half(space.gaussians[o - 1][s]));
        for (int i = 1; i < levels; ++i) g.push_back(gaussian_blur(g[i - 1], step[i]));
        auto& d = space.dog[o];
        d.reserve(levels - 1);
        for (int i = 0; i + 1 < levels; ++i) {
            ImageF32 diffimg(g[i].width, g[i].height);
            for (std::size_t p = 0; p < diffimg.size(); ++p) diffimg.data[p] = g[i + 1].data[p] - g[i].data[p];
            d.push_back(std::move(diffimg));
        }
    }
    return space;
}

namespace detail {

inline bool is_extremum(const std::vector<ImageF32>& dog, int layer, int x, int y, float v) {
    if (v > 0) {
        for (int l = layer - 1; l <= layer + 1; ++l)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (l == layer && dx == 0 && dy == 0) continue;
                    if (dog[l].at(x + dx, y + dy) > v) return false;
                }
        return true;
    }
    for (int l = layer - 1; l <= layer + 1; ++l)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (l == layer && dx == 0 && dy == 0) continue;
                if (dog[l].at(x + dx, y + dy) < v) return false;
            }
    return true;
}

// Solves the 3x3 system H * x = b by Cramer's rule; false if singular.
inline bool solve3(const std::array<std::array<double, 3>, 3>& H, const std::array<double, 3>& b,
                   std::array<double, 3>& x) {
    auto det3 = [](const std::array<std::array<double, 3>, 3>& m) {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    };
    const double d = det3(H);
    if (std::abs(d) < 1e-20) return false;
    for (int c = 0; c < 3; ++c) {
        auto m = H;
        for (int r = 0; r < 3; ++r) m[r][c] = b[r];
        x[c] = det3(m) / d;
    }
    return true;
}

}  // namespace detail

// 26-neighbour extrema refined by a quadratic fit; low-contrast and edge-like
// responses are rejected. Orientation is left at 0.
inline std::vector<Keypoint> detect_and_refine(const ScaleSpace& space, const SiftConfig& cfg = {}) {
    std::vector<Keypoint> out;
    const int s = space.scales_per_octave;
    const double thr = cfg.contrast_threshold * space.input_range;
    const float prescreen = static_cast<float>(0.5 * thr);
    const double edge = (cfg.edge_ratio + 1) * (cfg.edge_ratio + 1) / cfg.edge_ratio;
    const int border = cfg.border;

    for (int o = 0; o < space.octaves(); ++o) {
        const auto& dog = space.dog[o];
        const int w = dog[0].width, h = dog[0].height;
        for (int layer = 1; layer <= s; ++layer) {
            for (int y = border; y < h - border; ++y) {
                for (int x = border; x < w - border; ++x) {
                    const float v = dog[layer].at(x, y);
                    if (std::abs(v) <= prescreen || !detail::is_extremum(dog, layer, x, y, v)) continue;

                    int cx = x, cy = y, cl = layer;
                    std::array<double, 3> off{};  // (x, y, layer)
                    bool ok = false;
                    for (int it = 0; it < cfg.max_interp_steps; ++it) {
                        const auto& c = dog[cl];
                        const auto& p = dog[cl - 1];
                        const auto& n = dog[cl + 1];
                        const double v2 = 2.0 * c.at(cx, cy);
                        const std::array<double, 3> grad = {
                            0.5 * (c.at(cx + 1, cy) - c.at(cx - 1, cy)),
                            0.5 * (c.at(cx, cy + 1) - c.at(cx, cy - 1)),
                            0.5 * (n.at(cx, cy) - p.at(cx, cy)),
                        };
                        const double dxx = c.at(cx + 1, cy) + c.at(cx - 1, cy) - v2;
                        const double dyy = c.at(cx, cy + 1) + c.at(cx, cy - 1) - v2;
                        const double dss = n.at(cx, cy) + p.at(cx, cy) - v2;
                        const double dxy = 0.25 * (c.at(cx + 1, cy + 1) - c.at(cx - 1, cy + 1) -
                                                   c.at(cx + 1, cy - 1) + c.at(cx - 1, cy - 1));
                        const double dxs = 0.25 * (n.at(cx + 1, cy) - n.at(cx - 1, cy) -
                                                   p.at(cx + 1, cy) + p.at(cx - 1, cy));
                        const double dys = 0.25 * (n.at(cx, cy + 1) - n.at(cx, cy - 1) -
                                                   p.at(cx, cy + 1) + p.at(cx, cy - 1));
                        const std::array<std::array<double, 3>, 3> H = {{
                            {dxx, dxy, dxs},
                            {dxy, dyy, dys},
                            {dxs, dys, dss},
                        }};
                        if (!detail::solve3(H, {-grad[0], -grad[1], -grad[2]}, off)) break;
                        if (std::abs(off[0]) < 0.5 && std::abs(off[1]) < 0.5 && std::abs(off[2]) < 0.5) {
                            ok = true;
                            break;
                        }
                        if (std::abs(off[0]) > 1e6 || std::abs(off[1]) > 1e6 || std::abs(off[2]) > 1e6) break;
                        cx += static_cast<int>(std::lround(off[0]));
                        cy += static_cast<int>(std::lround(off[1]));
                        cl += static_cast<int>(std::lround(off[2]));
                        if (cl < 1 || cl > s || cx < border || cx >= w - border || cy < border || cy >= h - border) break;
                    }
                    if (!ok) continue;

                    const auto& c = dog[cl];
                    const auto& p = dog[cl - 1];
                    const auto& n = dog[cl + 1];
                    const double gx = 0.5 * (c.at(cx + 1, cy) - c.at(cx - 1, cy));
                    const double gy = 0.5 * (c.at(cx, cy + 1) - c.at(cx, cy - 1));
                    const double gs = 0.5 * (n.at(cx, cy) - p.at(cx, cy));
                    const double contrast = c.at(cx, cy) + 0.5 * (gx * off[0] + gy * off[1] + gs * off[2]);
                    if (std::abs(contrast) < thr) continue;

                    const double v2 = 2.0 * c.at(cx, cy);
                    const double dxx = c.at(cx + 1, cy) + c.at(cx - 1, cy) - v2;
                    const double dyy = c.at(cx, cy + 1) + c.at(cx, cy - 1) - v2;
                    const double dxy = 0.25 * (c.at(cx + 1, cy + 1) - c.at(cx - 1, cy + 1) - c.at(cx + 1, cy - 1) +
                                               c.at(cx - 1, cy - 1));
                    const double tr = dxx + dyy;
                    const double det = dxx * dyy - dxy * dxy;
                    if (det <= 0 || tr * tr >= edge * det) continue;

                    Keypoint kp;
                    const double octave_scale = std::pow(2.0, o + space.first_octave);
                    kp.octave = o;
                    kp.layer = cl;
                    kp.layer_offset = static_cast<float>(off[2]);
                    kp.ox = static_cast<float>(cx + off[0]);
                    kp.oy = static_cast<float>(cy + off[1]);
                    kp.x = static_cast<float>(kp.ox * octave_scale);
                    kp.y = static_cast<float>(kp.oy * octave_scale);
                    kp.octave_sigma = static_cast<float>(space.base_sigma * std::pow(2.0, (cl + off[2]) / s));
                    kp.scale = static_cast<float>(kp.octave_sigma * octave_scale);
                    kp.response = static_cast<float>(contrast / space.input_range);
                    out.push_back(kp);
                }
            }
        }
    }
    return out;
}

// Emits one keypoint per dominant gradient direction around kp.
inline std::vector<Keypoint> assign_orientation(const Keypoint& kp, const ScaleSpace& space, const SiftConfig& cfg = {}) {
    const int n = cfg.orientation_bins;
    const auto& img = space.gaussians.at(kp.octave).at(kp.layer);
    const double sigma_w = cfg.orientation_sigma_factor * kp.octave_sigma;
    const int radius = static_cast<int>(std::lround(3.0 * sigma_w));
    const int px = static_cast<int>(std::lround(kp.ox));
    const int py = static_cast<int>(std::lround(kp.oy));
    const double expf_scale = -1.0 / (2.0 * sigma_w * sigma_w);
    constexpr double two_pi = 2.0 * std::numbers::pi;

    std::vector<double> raw(n, 0.0);
    for (int i = -radius; i <= radius; ++i) {
        const int y = py + i;
        if (y <= 0 || y >= img.height - 1) continue;
        for (int j = -radius; j <= radius; ++j) {
            const int x = px + j;
            if (x <= 0 || x >= img.width - 1) continue;
            const double dx = img.at(x + 1, y) - img.at(x - 1, y);
            const double dy = img.at(x, y + 1) - img.at(x, y - 1);
            const double mag = std::sqrt(dx * dx + dy * dy);
            if (mag == 0) continue;
            double ang = std::atan2(dy, dx);
            if (ang < 0) ang += two_pi;
            int bin = static_cast<int>(std::lround(n * ang / two_pi));
            bin = ((bin % n) + n) % n;
            raw[bin] += std::exp((i * i + j * j) * expf_scale) * mag;
        }
    }

    std::vector<double> hist(n);
    for (int i = 0; i < n; ++i) {
        auto at = [&](int k) { return raw[((i + k) % n + n) % n]; };
        hist[i] = (at(-2) + at(2)) * (1.0 / 16) + (at(-1) + at(1)) * (4.0 / 16) + at(0) * (6.0 / 16);
    }
    const double max_v = *std::max_element(hist.begin(), hist.end());
    std::vector<Keypoint> out;
    if (max_v <= 0) return out;
    const double accept = cfg.peak_ratio * max_v;
    for (int i = 0; i < n; ++i) {
        const double l = hist[(i + n - 1) % n], c = hist[i], r = hist[(i + 1) % n];
        if (c > l && c > r && c >= accept) {
            double bin = i + 0.5 * (l - r) / (l - 2 * c + r);
            if (bin < 0) bin += n;
            if (bin >= n) bin -= n;
            Keypoint k = kp;
            k.orientation = static_cast<float>(bin * two_pi / n);
            if (k.orientation >= two_pi) k.orientation = 0;
            out.push_back(k);
        }
    }
    return out;
}

// 4x4 cells x 8 bins of rotation-normalised gradients with trilinear binning,
// L2-normalised, clamped and renormalised. Samples outside the image contribute nothing.
inline Descriptor compute_descriptor(const Keypoint& kp, const ScaleSpace& space, const SiftConfig& cfg = {}) {
    constexpr int d = kDescriptorWidth;
    constexpr int n = kDescriptorBins;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const auto& img = space.gaussians.at(kp.octave).at(kp.layer);

    const double hist_width = cfg.descriptor_scale_factor * kp.octave_sigma;
    int radius = static_cast<int>(std::lround(hist_width * std::numbers::sqrt2 * (d + 1) * 0.5));
    radius = std::min(radius, static_cast<int>(std::sqrt(double(img.width) * img.width + double(img.height) * img.height)));
    const double cos_t = std::cos(kp.orientation) / hist_width;
    const double sin_t = std::sin(kp.orientation) / hist_width;
    const double bins_per_rad = n / two_pi;
    const double exp_scale = -1.0 / (d * d * 0.5);
    const int px = static_cast<int>(std::lround(kp.ox));
    const int py = static_cast<int>(std::lround(kp.oy));

    std::array<double, (d + 2) * (d + 2) * (n + 2)> hist{};
    auto idx = [](int r, int c, int o) { return (r * (d + 2) + c) * (n + 2) + o; };

    for (int i = -radius; i <= radius; ++i) {
        for (int j = -radius; j <= radius; ++j) {
            const double u = j * cos_t + i * sin_t;
            const double v = -j * sin_t + i * cos_t;
            const double rbin = v + d / 2.0 - 0.5;
            const double cbin = u + d / 2.0 - 0.5;
            if (!(rbin > -1 && rbin < d && cbin > -1 && cbin < d)) continue;
            const int x = px + j, y = py + i;
            if (x <= 0 || x >= img.width - 1 || y <= 0 || y >= img.height - 1) continue;
            const double dx = img.at(x + 1, y) - img.at(x - 1, y);
            const double dy = img.at(x, y + 1) - img.at(x, y - 1);
            const double mag = std::sqrt(dx * dx + dy * dy) * std::exp((u * u + v * v) * exp_scale);
            if (mag == 0) continue;
            double ang = std::atan2(dy, dx) - kp.orientation;
            ang = std::fmod(ang, two_pi);
            if (ang < 0) ang += two_pi;
            const double obin = ang * bins_per_rad;

            const int r0 = static_cast<int>(std::floor(rbin));
            const int c0 = static_cast<int>(std::floor(cbin));
            int o0 = static_cast<int>(std::floor(obin));
            const double fr = rbin - r0, fc = cbin - c0, fo = obin - o0;
            if (o0 < 0) o0 += n;
            if (o0 >= n) o0 -= n;
            for (int a = 0; a < 2; ++a) {
                const double wr = a ? fr : 1 - fr;
                for (int b = 0; b < 2; ++b) {
                    const double wc = b ? fc : 1 - fc;
                    for (int e = 0; e < 2; ++e) {
                        const double wo = e ? fo : 1 - fo;
                        hist[idx(r0 + 1 + a, c0 + 1 + b, o0 + e)] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }

    std::array<double, kDescriptorSize> raw{};
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) {
            hist[idx(r + 1, c + 1, 0)] += hist[idx(r + 1, c + 1, n)];
            hist[idx(r + 1, c + 1, 1)] += hist[idx(r + 1, c + 1, n + 1)];
            for (int o = 0; o < n; ++o) raw[(r * d + c) * n + o] = hist[idx(r + 1, c + 1, o)];
        }

    Descriptor out{};
    double norm = 0;
    for (double v : raw) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 1e-12) return out;
    const double clamp = cfg.descriptor_clamp * norm;
    double norm2 = 0;
    for (auto& v : raw) {
        v = std::min(v, clamp);
        norm2 += v * v;
    }
    norm2 = std::sqrt(norm2);
    for (int i = 0; i < kDescriptorSize; ++i) out[i] = static_cast<float>(raw[i] / norm2);
    return out;
}

struct Extraction {
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;
};

// Full detector + descriptor over one image.
inline Extraction extract(const ImageF32& img, const SiftConfig& cfg = {}) {
    const auto space = build_scale_space(img, cfg);
    Extraction ex;
    for (const auto& kp : detect_and_refine(space, cfg)) {
        for (auto& oriented : assign_orientation(kp, space, cfg)) {
            ex.descriptors.push_back(compute_descriptor(oriented, space, cfg));
            ex.keypoints.push_back(oriented);
        }
    }
    return ex;
}

namespace detail {

inline long pixel_key(float v) { return std::lround(v); }

}  // namespace detail

// Keeps the n strongest |response| keypoints, lays them out in row-major
// pixel order and zero-pads the tail.
inline FrameFeatures select_top_n(std::span<const Keypoint> kps, std::span<const Descriptor> descs, int n = kDefaultTopN) {
    if (kps.size() != descs.size()) throw InvalidInput("select_top_n: keypoints and descriptors differ in length");
    if (n < 0) throw InvalidInput("select_top_n: negative slot count");

    std::vector<std::size_t> order(kps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Strongest first; ties favour the earlier pixel, then exact position/orientation for a total order.
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ka = kps[a];
        const auto& kb = kps[b];
        const float ra = std::abs(ka.response), rb = std::abs(kb.response);
        if (ra != rb) return ra > rb;
        if (detail::pixel_key(ka.y) != detail::pixel_key(kb.y)) return detail::pixel_key(ka.y) < detail::pixel_key(kb.y);
        if (detail::pixel_key(ka.x) != detail::pixel_key(kb.x)) return detail::pixel_key(ka.x) < detail::pixel_key(kb.x);
        if (ka.y != kb.y) return ka.y < kb.y;
        if (ka.x != kb.x) return ka.x < kb.x;
        if (ka.orientation != kb.orientation) return ka.orientation < kb.orientation;
        return a < b;
    });
    if (order.size() > static_cast<std::size_t>(n)) order.resize(n);

    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ka = kps[a];
        const auto& kb = kps[b];
        if (detail::pixel_key(ka.y) != detail::pixel_key(kb.y)) return detail::pixel_key(ka.y) < detail::pixel_key(kb.y);
        if (detail::pixel_key(ka.x) != detail::pixel_key(kb.x)) return detail::pixel_key(ka.x) < detail::pixel_key(kb.x);
        const float ra = std::abs(ka.response), rb = std::abs(kb.response);
        if (ra != rb) return ra > rb;
        if (ka.orientation != kb.orientation) return ka.orientation < kb.orientation;
        return a < b;
    });

    FrameFeatures f;
    f.slots = n;
    f.flat.assign(static_cast<std::size_t>(n) * kDescriptorSize, 0.0f);
    f.pad_mask.assign(n, 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
        f.keypoints.push_back(kps[order[k]]);
        std::copy(descs[order[k]].begin(), descs[order[k]].end(), f.flat.begin() + static_cast<std::ptrdiff_t>(k * kDescriptorSize));
        f.pad_mask[k] = 1;
    }
    return f;
}

inline FrameFeatures extract_features(const ImageF32& img, const SiftConfig& cfg = {}, int n = kDefaultTopN) {
    const auto ex = extract(img, cfg);
    return select_top_n(ex.keypoints, ex.descriptors, n);
}

inline void write_keypoints_csv(std::ostream& os, std::span<const Keypoint> kps) {
    os << "x,y,scale,orientation,response\n";
    for (const auto& k : kps) os << k.x << ',' << k.y << ',' << k.scale << ',' << k.orientation << ',' << k.response << '\n';
}

// Grayscale frame with one circle per keypoint (radius = scale), red.
inline ImageRgb draw_keypoints(const ImageU8& gray, std::span<const Keypoint> kps) {
    ImageRgb out{gray.width, gray.height, std::vector<std::uint8_t>(gray.size() * 3)};
    for (std::size_t i = 0; i < gray.size(); ++i) out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = gray.data[i];
    auto plot = [&](int x, int y) {
        if (x < 0 || y < 0 || x >= gray.width || y >= gray.height) return;
        const std::size_t p = 3 * (static_cast<std::size_t>(y) * gray.width + x);
        out.data[p] = 255;
        out.data[p + 1] = 0;
        out.data[p + 2] = 0;
    };
    for (const auto& k : kps) {
        const double r = std::max(1.0, static_cast<double>(k.scale));
        const int steps = std::max(16, static_cast<int>(8 * r));
        for (int t = 0; t < steps; ++t) {
            const double a = 2.0 * std::numbers::pi * t / steps;
            plot(static_cast<int>(std::lround(k.x + r * std::cos(a))), static_cast<int>(std::lround(k.y + r * std::sin(a))));
        }
        plot(static_cast<int>(std::lround(k.x)), static_cast<int>(std::lround(k.y)));
    }
    return out;
}

}  // namespace spikepin::sift
