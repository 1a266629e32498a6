#pragma once

// Procedural pin/no-pin scenes, label-preserving augmentation and
// stratified, leakage-guarded dataset splits with a JSON-lines manifest.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spikepin/errors.hpp"
#include "spikepin/hash.hpp"
#include "spikepin/image.hpp"
#include "spikepin/image_io.hpp"

namespace spikepin::dataset {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(splitmix64(base ^ splitmix64(a)) ^ splitmix64(b + 0x51ed270b27aULL));
}

// Seeded draws that do not depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int integer(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
    bool chance(double p) { return uniform() < p; }
    // Box-Muller; one draw per call.
    double normal() {
        const double u1 = std::max(uniform(), 1e-300);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

// Flat foreground object (bracket, cable cover) placed clear of the pin.
struct ClutterBlock {
    int x0 = 0, y0 = 0, width = 0, height = 0;
    int level = 128;
};

struct SceneParams {
    int frame_width = 160;
    int frame_height = 160;
    Roi roi{16, 16, 128, 128};
    double pin_cx = 80;  // frame pixels; pin axis
    double pin_cy = 100;  // base of the pin (socket centre)
    double pin_radius = 8;
    double pin_length = 44;
    double noise_amplitude = 0.12;  // texture amplitude as a fraction of full scale
    double illumination_gradient = 0.1;  // fraction of full scale across the frame
    double illumination_angle = 0;  // radians
    double base_level = 0.42;       // background mean, fraction of full scale
    bool pin_present = true;
    std::vector<ClutterBlock> clutter;
    std::uint64_t seed = 0;

    // Pin, ring and socket footprint, inclusive frame pixels: x0, y0, x1, y1.
    [[nodiscard]] std::array<double, 4> pin_box() const {
        const double socket = pin_radius + 3;
        return {pin_cx - socket, pin_cy - pin_length - 2 * (pin_radius + 4.0), pin_cx + socket, pin_cy + 0.55 * socket};
    }

    void validate() const {
        if (frame_width < 32 || frame_height < 32) throw InvalidInput("scene: frame too small");
        if (!roi.fits(frame_width, frame_height) || roi.width < Roi::kMinSide || roi.height < Roi::kMinSide)
            throw InvalidInput("scene: roi outside frame or below minimum size");
        if (!(noise_amplitude >= 0 && noise_amplitude <= 0.5)) throw InvalidInput("scene: noise amplitude outside [0, 0.5]");
        if (pin_radius <= 0 || pin_length <= 0) throw InvalidInput("scene: pin geometry must be positive");
        const double socket = pin_radius + 3;
        const bool fits = pin_cx - socket >= roi.x0 && pin_cx + socket <= roi.x0 + roi.width &&
                          pin_cy - pin_length - 2 * (pin_radius + 4.0) >= roi.y0 && pin_cy + socket <= roi.y0 + roi.height;
        if (!fits) throw InvalidInput("scene: pin geometry does not fit inside the roi");
        const auto b = pin_box();
        for (const auto& c : clutter) {
            if (c.width <= 0 || c.height <= 0 || c.level < 0 || c.level > 255) throw InvalidInput("scene: bad clutter block");
            if (c.x0 <= b[2] && c.x0 + c.width - 1 >= b[0] && c.y0 <= b[3] && c.y0 + c.height - 1 >= b[1])
                throw InvalidInput("scene: clutter block overlaps the pin");
        }
    }
};

namespace detail {

// Bilinearly interpolated lattice noise in [-1, 1].
class ValueNoise {
public:
    ValueNoise(int cells_x, int cells_y, Rng& rng) : nx_(cells_x + 2), ny_(cells_y + 2), grid_(static_cast<std::size_t>(nx_) * ny_) {
        for (auto& v : grid_) v = rng.uniform(-1, 1);
    }
    double at(double u, double v) const {  // u, v in [0,1]
        const double gx = u * (nx_ - 2), gy = v * (ny_ - 2);
        const int x0 = std::clamp(static_cast<int>(gx), 0, nx_ - 2), y0 = std::clamp(static_cast<int>(gy), 0, ny_ - 2);
        const double fx = gx - x0, fy = gy - y0;
        const double sx = fx * fx * (3 - 2 * fx), sy = fy * fy * (3 - 2 * fy);
        auto g = [&](int x, int y) { return grid_[static_cast<std::size_t>(y) * nx_ + x]; };
        return (1 - sy) * ((1 - sx) * g(x0, y0) + sx * g(x0 + 1, y0)) + sy * ((1 - sx) * g(x0, y0 + 1) + sx * g(x0 + 1, y0 + 1));
    }

private:
    int nx_, ny_;
    std::vector<double> grid_;
};

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

inline double ring_radius(const SceneParams& p) { return p.pin_radius + 4.0; }

// Pin silhouette: shaft, rounded cap and the pull ring above it. Used for rendering and contrast checks.
inline bool in_pin_mask(const SceneParams& p, double x, double y) {
    const double top = p.pin_cy - p.pin_length;
    if (std::abs(x - p.pin_cx) <= p.pin_radius && y >= top && y <= p.pin_cy) return true;
    const double dx = x - p.pin_cx, dy = (y - top) * 2.0;
    if (dx * dx + dy * dy <= p.pin_radius * p.pin_radius) return true;
    const double rr = ring_radius(p);
    const double d = std::hypot(x - p.pin_cx, y - (top - rr + 1.0));
    return d <= rr && d >= rr - 0.45 * p.pin_radius;
}

// Concrete-like background (illumination ramp + multi-scale lattice noise), a
// dark socket, and when present a bright shaded cylindrical pin standing in it.
inline LabeledFrame generate_scene(const SceneParams& p) {
    p.validate();
    Rng rng(p.seed);
    detail::ValueNoise coarse(4, 4, rng), mid(10, 10, rng);
    const int w = p.frame_width, h = p.frame_height;
    ImageU8 img(w, h);
    const double gx = std::cos(p.illumination_angle), gy = std::sin(p.illumination_angle);
    const double socket_r = p.pin_radius + 3;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w, v = (y + 0.5) / h;
            double val = p.base_level + p.illumination_gradient * ((u - 0.5) * gx + (v - 0.5) * gy);
            val += p.noise_amplitude * (0.85 * coarse.at(u, v) + 0.15 * mid.at(u, v));
            val = val * 255.0 + 1.5 * rng.normal();

            // Socket: a dark recess, or a seated collar when the pin is in place.
            const double sx = (x - p.pin_cx) / socket_r, sy = (y - p.pin_cy) / (0.55 * socket_r);
            const double sr = std::sqrt(sx * sx + sy * sy);
            if (sr <= 1.0) val = p.pin_present ? 0.5 * val + 80.0 : 0.35 * val + 10.0;

            if (p.pin_present && in_pin_mask(p, x, y)) {
                const double t = std::clamp((x - p.pin_cx) / p.pin_radius, -1.0, 1.0);
                const double shade = std::cos(0.5 * std::numbers::pi * t);  // cylinder lit from the front
                val = 150.0 + 95.0 * shade + 3.0 * rng.normal();
                const double along = p.pin_cy - y;
                const double hole_y = std::fmod(along, 12.0) - 6.0;
                if (along > 4 && along < p.pin_length - 4 && std::hypot(x - p.pin_cx, hole_y) < 3.2) val = 30.0;  // cross holes
            }
            for (const auto& c : p.clutter)
                if (x >= c.x0 && x < c.x0 + c.width && y >= c.y0 && y < c.y0 + c.height) val = c.level + 3.0 * rng.normal();
            img.at(x, y) = detail::to_u8(val);
        }
    }
    LabeledFrame f;
    f.image = std::move(img);
    f.label = p.pin_present ? Label::PinOk : Label::PinOut;
    f.provenance = Provenance::SyntheticBase;
    return f;
}

inline SceneParams random_scene(std::uint64_t seed, bool pin_present, const Roi& roi = {16, 16, 128, 128}, int frame_size = 160) {
    Rng rng(derive_seed(seed, 0x5ce7e));
    SceneParams p;
    p.frame_width = p.frame_height = frame_size;
    p.roi = roi;
    p.seed = seed;
    p.pin_present = pin_present;
    p.pin_radius = rng.uniform(7.0, 10.0);
    p.pin_length = rng.uniform(36.0, 50.0);
    p.pin_cx = p.roi.x0 + p.roi.width / 2.0 + rng.uniform(-12.0, 12.0);
    p.pin_cy = p.roi.y0 + p.roi.height * 0.78 + rng.uniform(-6.0, 6.0);
    p.noise_amplitude = rng.uniform(0.02, 0.08);
    p.illumination_gradient = rng.uniform(0.25, 0.5);
    p.illumination_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    p.base_level = rng.uniform(0.3, 0.55);
    // Both classes carry the same clutter distribution, so flat blocks say nothing about the label.
    if (rng.chance(0.5)) {
        const auto b = p.pin_box();
        for (int attempt = 0; attempt < 20; ++attempt) {
            const double area = rng.uniform(0.03, 0.15) * p.frame_width * p.frame_height;
            const double aspect = rng.uniform(0.4, 2.5);
            const int cw = std::clamp(static_cast<int>(std::sqrt(area * aspect)), 4, p.frame_width);
            const int ch = std::clamp(static_cast<int>(area / cw), 4, p.frame_height);
            const ClutterBlock c{rng.integer(0, p.frame_width - cw), rng.integer(0, p.frame_height - ch), cw, ch, rng.integer(20, 200)};
            if (c.x0 <= b[2] && c.x0 + cw - 1 >= b[0] && c.y0 <= b[3] && c.y0 + ch - 1 >= b[1]) continue;
            p.clutter.push_back(c);
            break;
        }
    }
    return p;
}

struct Occlusion {
    int x0 = 0, y0 = 0, width = 0, height = 0;
    int level = 64;
};

enum class MorphOp { Dilate, Erode };

struct AugmentationSpec {
    std::optional<double> rotation_deg;                   // [-10, 10]
    std::optional<std::array<double, 8>> perspective;     // corner offsets (x,y)*4, fraction of size, |.| <= 0.08
    std::optional<double> gamma;                          // [0.5, 2]
    std::optional<Occlusion> occlusion;                   // <= 30% of the frame
    std::optional<std::array<double, 2>> translation;     // px, |.| <= 8
    std::optional<std::pair<MorphOp, int>> morphology;    // radius <= 2

    static constexpr double kMaxRotation = 10.0;
    static constexpr double kMaxPerspective = 0.08;
    static constexpr double kMaxOcclusionArea = 0.30;
    static constexpr double kMaxTranslation = 8.0;
    static constexpr int kMaxMorphRadius = 2;

    [[nodiscard]] bool any() const {
        return rotation_deg || perspective || gamma || occlusion || translation || morphology;
    }
    [[nodiscard]] bool geometric() const { return rotation_deg || perspective || translation; }

    void validate(int w, int h) const {
        if (rotation_deg && std::abs(*rotation_deg) > kMaxRotation) throw InvalidInput("augment: rotation beyond +-10 deg");
        if (perspective)
            for (double v : *perspective)
                if (std::abs(v) > kMaxPerspective) throw InvalidInput("augment: perspective jitter beyond 8%");
        if (gamma && !(*gamma >= 0.5 && *gamma <= 2.0)) throw InvalidInput("augment: gamma outside [0.5, 2]");
        if (occlusion) {
            const auto& o = *occlusion;
            if (o.width < 0 || o.height < 0 || static_cast<double>(o.width) * o.height > kMaxOcclusionArea * w * h)
                throw InvalidInput("augment: occlusion larger than 30% of the frame");
        }
        if (translation && (std::abs((*translation)[0]) > kMaxTranslation || std::abs((*translation)[1]) > kMaxTranslation))
            throw InvalidInput("augment: translation beyond +-8 px");
        if (morphology && (morphology->second < 1 || morphology->second > kMaxMorphRadius))
            throw InvalidInput("augment: morphology radius outside [1, 2]");
    }
};

inline nlohmann::ordered_json to_json(const AugmentationSpec& s) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    if (s.rotation_deg) j["rotation_deg"] = *s.rotation_deg;
    if (s.perspective) j["perspective"] = *s.perspective;
    if (s.gamma) j["gamma"] = *s.gamma;
    if (s.occlusion) {
        const auto& o = *s.occlusion;
        j["occlusion"] = {{"x0", o.x0}, {"y0", o.y0}, {"width", o.width}, {"height", o.height}, {"level", o.level}};
    }
    if (s.translation) j["translation"] = *s.translation;
    if (s.morphology)
        j["morphology"] = {{"op", s.morphology->first == MorphOp::Dilate ? "dilate" : "erode"}, {"radius", s.morphology->second}};
    return j;
}

inline AugmentationSpec augmentation_from_json(const nlohmann::json& j) {
    AugmentationSpec s;
    if (j.contains("rotation_deg")) s.rotation_deg = j["rotation_deg"].get<double>();
    if (j.contains("perspective")) s.perspective = j["perspective"].get<std::array<double, 8>>();
    if (j.contains("gamma")) s.gamma = j["gamma"].get<double>();
    if (j.contains("occlusion")) {
        const auto& o = j["occlusion"];
        s.occlusion = Occlusion{o.at("x0").get<int>(), o.at("y0").get<int>(), o.at("width").get<int>(),
                                o.at("height").get<int>(), o.at("level").get<int>()};
    }
    if (j.contains("translation")) s.translation = j["translation"].get<std::array<double, 2>>();
    if (j.contains("morphology")) {
        const auto& m = j["morphology"];
        s.morphology = std::make_pair(m.at("op").get<std::string>() == "dilate" ? MorphOp::Dilate : MorphOp::Erode,
                                      m.at("radius").get<int>());
    }
    return s;
}

// Each transform enabled independently with probability 1/2, parameters uniform in range.
inline AugmentationSpec random_augmentation(std::uint64_t seed, int w, int h) {
    Rng rng(derive_seed(seed, 0xa06));
    AugmentationSpec s;
    if (rng.chance(0.5)) s.rotation_deg = rng.uniform(-AugmentationSpec::kMaxRotation, AugmentationSpec::kMaxRotation);
    if (rng.chance(0.5)) {
        std::array<double, 8> c{};
        for (auto& v : c) v = rng.uniform(-AugmentationSpec::kMaxPerspective, AugmentationSpec::kMaxPerspective);
        s.perspective = c;
    }
    if (rng.chance(0.5)) s.gamma = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    if (rng.chance(0.5)) {
        const double area = rng.uniform(0.03, AugmentationSpec::kMaxOcclusionArea) * w * h;
        const double aspect = rng.uniform(0.4, 2.5);
        int ow = std::clamp(static_cast<int>(std::sqrt(area * aspect)), 4, w);
        int oh = std::clamp(static_cast<int>(area / ow), 4, h);
        while (static_cast<double>(ow) * oh > AugmentationSpec::kMaxOcclusionArea * w * h) --oh;
        s.occlusion = Occlusion{rng.integer(0, w - ow), rng.integer(0, h - oh), ow, oh, rng.integer(20, 200)};
    }
    if (rng.chance(0.5))
        s.translation = std::array<double, 2>{rng.uniform(-AugmentationSpec::kMaxTranslation, AugmentationSpec::kMaxTranslation),
                                              rng.uniform(-AugmentationSpec::kMaxTranslation, AugmentationSpec::kMaxTranslation)};
    if (rng.chance(0.5)) s.morphology = std::make_pair(rng.chance(0.5) ? MorphOp::Dilate : MorphOp::Erode, rng.integer(1, 2));
    return s;
}

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
}

inline Mat3 inverse(const Mat3& m) {
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (std::abs(det) < 1e-15) throw InvalidInput("augment: singular geometric transform");
    Mat3 r{};
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return r;
}

// Homography taking the four src points onto the four dst points (Gaussian elimination on the 8x8 system).
inline Mat3 homography(const std::array<std::array<double, 2>, 4>& src, const std::array<std::array<double, 2>, 4>& dst) {
    std::array<std::array<double, 9>, 8> a{};
    for (int i = 0; i < 4; ++i) {
        const double x = src[i][0], y = src[i][1], u = dst[i][0], v = dst[i][1];
        a[2 * i] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
        a[2 * i + 1] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
    }
    for (int c = 0; c < 8; ++c) {
        int piv = c;
        for (int r = c + 1; r < 8; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        if (std::abs(a[c][c]) < 1e-12) throw InvalidInput("augment: degenerate perspective corners");
        for (int r = 0; r < 8; ++r) {
            if (r == c) continue;
            const double f = a[r][c] / a[c][c];
            for (int k = c; k < 9; ++k) a[r][k] -= f * a[c][k];
        }
    }
    std::array<double, 8> hcoef{};
    for (int i = 0; i < 8; ++i) hcoef[i] = a[i][8] / a[i][i];
    return Mat3{{{hcoef[0], hcoef[1], hcoef[2]}, {hcoef[3], hcoef[4], hcoef[5]}, {hcoef[6], hcoef[7], 1.0}}};
}

inline double sample_bilinear(const ImageU8& img, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0, fy = y - y0;
    return (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) + fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1));
}

// Output->source mapping through the inverse of `forward_map`, bilinear, edge-replicated.
inline ImageU8 warp(const ImageU8& src, const Mat3& forward_map) {
    const Mat3 inv = inverse(forward_map);
    ImageU8 out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            const double w = inv[2][0] * x + inv[2][1] * y + inv[2][2];
            const double sx = (inv[0][0] * x + inv[0][1] * y + inv[0][2]) / w;
            const double sy = (inv[1][0] * x + inv[1][1] * y + inv[1][2]) / w;
            out.at(x, y) = to_u8(sample_bilinear(src, sx, sy));
        }
    }
    return out;
}

inline ImageU8 morph(const ImageU8& src, MorphOp op, int radius) {
    ImageU8 out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            int best = op == MorphOp::Dilate ? 0 : 255;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx * dx + dy * dy > radius * radius) continue;
                    const int sx = std::clamp(x + dx, 0, src.width - 1), sy = std::clamp(y + dy, 0, src.height - 1);
                    const int v = src.at(sx, sy);
                    best = op == MorphOp::Dilate ? std::max(best, v) : std::min(best, v);
                }
            }
            out.at(x, y) = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

}  // namespace detail

// Forward geometric map (translation . rotation about the centre . perspective).
inline detail::Mat3 geometric_transform(const AugmentationSpec& s, int w, int h) {
    detail::Mat3 m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    if (s.perspective) {
        const auto& c = *s.perspective;
        const std::array<std::array<double, 2>, 4> src = {{{0, 0}, {double(w - 1), 0}, {double(w - 1), double(h - 1)}, {0, double(h - 1)}}};
        std::array<std::array<double, 2>, 4> dst = src;
        for (int i = 0; i < 4; ++i) {
            dst[i][0] += c[2 * i] * w;
            dst[i][1] += c[2 * i + 1] * h;
        }
        m = detail::homography(src, dst);
    }
    if (s.rotation_deg) {
        const double a = *s.rotation_deg * std::numbers::pi / 180.0;
        const double ca = std::cos(a), sa = std::sin(a);
        const detail::Mat3 r{{{ca, -sa, cx - ca * cx + sa * cy}, {sa, ca, cy - sa * cx - ca * cy}, {0, 0, 1}}};
        m = detail::mul(r, m);
    }
    if (s.translation) {
        const detail::Mat3 t{{{1, 0, (*s.translation)[0]}, {0, 1, (*s.translation)[1]}, {0, 0, 1}}};
        m = detail::mul(t, m);
    }
    return m;
}

// Geometry -> photometry -> occlusion -> morphology. Label and dimensions are preserved.
inline LabeledFrame augment(const LabeledFrame& frame, const AugmentationSpec& spec, std::uint64_t seed) {
    const int w = frame.image.width, h = frame.image.height;
    spec.validate(w, h);
    LabeledFrame out = frame;
    if (!spec.any()) return out;
    out.provenance = Provenance::Augmented;
    auto& img = out.image;

    if (spec.geometric()) img = detail::warp(img, geometric_transform(spec, w, h));
    if (spec.gamma) {
        std::array<std::uint8_t, 256> lut{};
        for (int v = 0; v < 256; ++v) lut[v] = detail::to_u8(255.0 * std::pow(v / 255.0, *spec.gamma));
        for (auto& v : img.data) v = lut[v];
    }
    if (spec.occlusion) {
        Rng rng(derive_seed(seed, 0x0cc));
        const auto& o = *spec.occlusion;
        for (int y = o.y0; y < std::min(h, o.y0 + o.height); ++y)
            for (int x = o.x0; x < std::min(w, o.x0 + o.width); ++x)
                img.at(x, y) = detail::to_u8(o.level + 3.0 * rng.normal());
    }
    if (spec.morphology) img = detail::morph(img, spec.morphology->first, spec.morphology->second);
    return out;
}

enum class Split { Unassigned, Train, Val, Test };

inline std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unassigned: return "unassigned";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    if (s == "unassigned") return Split::Unassigned;
    throw InvalidInput("unknown split '" + s + "'");
}

struct ManifestEntry {
    std::string path;  // relative to the manifest directory
    Label label = Label::PinOk;
    Provenance provenance = Provenance::RealLike;
    std::string base_id;
    Split split = Split::Unassigned;
    std::uint64_t seed = 0;
    Roi roi;
    std::optional<AugmentationSpec> augmentation;
    std::string sha256;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t count(Label l) const {
        return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [l](const auto& e) { return e.label == l; }));
    }
    [[nodiscard]] std::size_t count(Label l, Split s) const {
        return static_cast<std::size_t>(
            std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.label == l && e.split == s; }));
    }
    [[nodiscard]] std::vector<const ManifestEntry*> in_split(Split s) const {
        std::vector<const ManifestEntry*> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(&e);
        return out;
    }
};

inline nlohmann::ordered_json to_json(const ManifestEntry& e) {
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["label"] = to_string(e.label);
    j["provenance"] = to_string(e.provenance);
    j["base_id"] = e.base_id;
    j["split"] = to_string(e.split);
    j["seed"] = e.seed;
    j["roi"] = {e.roi.x0, e.roi.y0, e.roi.width, e.roi.height};
    j["augmentation"] = e.augmentation ? to_json(*e.augmentation) : nlohmann::ordered_json(nullptr);
    j["sha256"] = e.sha256;
    return j;
}

inline ManifestEntry entry_from_json(const nlohmann::json& j) {
    static const std::array<const char*, 9> known = {"path", "label", "provenance", "base_id", "split",
                                                     "seed", "roi", "augmentation", "sha256"};
    for (const auto& [k, v] : j.items())
        if (std::find_if(known.begin(), known.end(), [&](const char* s) { return k == s; }) == known.end())
            throw InvalidInput("manifest: unknown key '" + k + "'");
    ManifestEntry e;
    e.path = j.at("path").get<std::string>();
    e.label = label_from_string(j.at("label").get<std::string>());
    e.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    e.base_id = j.at("base_id").get<std::string>();
    e.split = split_from_string(j.at("split").get<std::string>());
    e.seed = j.at("seed").get<std::uint64_t>();
    const auto roi = j.at("roi").get<std::array<int, 4>>();
    e.roi = Roi{roi[0], roi[1], roi[2], roi[3]};
    if (!j.at("augmentation").is_null()) e.augmentation = augmentation_from_json(j.at("augmentation"));
    e.sha256 = j.at("sha256").get<std::string>();
    return e;
}

inline std::string manifest_to_string(const DatasetManifest& m) {
    std::string out;
    for (const auto& e : m.entries) {
        out += to_json(e).dump();
        out += '\n';
    }
    return out;
}

inline DatasetManifest manifest_from_string(const std::string& text) {
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.entries.push_back(entry_from_json(nlohmann::json::parse(line)));
    }
    return m;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    const auto text = manifest_to_string(m);
    io::write_bytes(path, text.data(), text.size());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    return manifest_from_string(std::string(bytes.begin(), bytes.end()));
}

inline std::string manifest_hash(const DatasetManifest& m) { return sha256_hex(manifest_to_string(m)); }

struct SplitFractions {
    double train = 0.70, val = 0.15, test = 0.15;
};

namespace detail {

// Picks groups (in the given order) whose sizes sum to the achievable total
// closest to `target` (ties: the smaller total). Returns chosen indices.
inline std::vector<std::size_t> pick_groups(const std::vector<std::size_t>& sizes, std::size_t target) {
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    const std::size_t cap = std::min(total, target + (sizes.empty() ? 0 : *std::max_element(sizes.begin(), sizes.end())));
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::vector<std::size_t> via(cap + 1, kNone);  // group that first reached this sum
    std::vector<char> reach(cap + 1, 0);
    reach[0] = 1;
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        for (std::size_t s = cap + 1; s-- > 0;) {
            if (!reach[s] || s + sizes[g] > cap || reach[s + sizes[g]]) continue;
            reach[s + sizes[g]] = 1;
            via[s + sizes[g]] = g;
        }
    }
    std::size_t best = 0;
    for (std::size_t s = 0; s <= cap; ++s) {
        if (!reach[s]) continue;
        const auto d = s > target ? s - target : target - s;
        const auto bd = best > target ? best - target : target - best;
        if (d < bd) best = s;
    }
    std::vector<std::size_t> chosen;
    for (std::size_t s = best; s > 0;) {
        const std::size_t g = via[s];
        chosen.push_back(g);
        s -= sizes[g];
    }
    return chosen;
}

}  // namespace detail

// Per-class shuffled partition. Frames sharing a base_id stay in one split.
inline DatasetManifest stratified_split(DatasetManifest m, const SplitFractions& f, std::uint64_t seed) {
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw InvalidInput("stratified_split: fractions must be non-negative and sum to 1");

    for (Label label : {Label::PinOk, Label::PinOut}) {
        std::vector<std::string> group_ids;
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < m.entries.size(); ++i) {
            if (m.entries[i].label != label) continue;
            auto [it, fresh] = groups.try_emplace(m.entries[i].base_id);
            if (fresh) group_ids.push_back(m.entries[i].base_id);
            it->second.push_back(i);
        }
        const std::size_t n = m.count(label);
        if (n == 0) continue;

        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label) + 1, 0x5b1));
        for (std::size_t i = group_ids.size(); i > 1; --i) std::swap(group_ids[i - 1], group_ids[rng.next() % i]);

        auto target = [n](double frac) { return static_cast<std::size_t>(std::floor(n * frac + 0.5)); };
        const std::size_t t_test = target(f.test), t_val = target(f.val);
        if ((f.test > 0 && t_test == 0) || (f.val > 0 && t_val == 0) || (f.train > 0 && t_test + t_val >= n))
            throw InvalidInput("stratified_split: class " + to_string(label) + " too small for the requested fractions");

        std::vector<std::string> remaining = group_ids;
        auto take = [&](std::size_t t, Split split) {
            std::vector<std::size_t> sizes;
            for (const auto& g : remaining) sizes.push_back(groups[g].size());
            auto chosen = detail::pick_groups(sizes, t);
            std::sort(chosen.begin(), chosen.end());
            std::vector<std::string> keep;
            std::size_t c = 0;
            for (std::size_t g = 0; g < remaining.size(); ++g) {
                if (c < chosen.size() && chosen[c] == g) {
                    for (auto idx : groups[remaining[g]]) m.entries[idx].split = split;
                    ++c;
                } else {
                    keep.push_back(remaining[g]);
                }
            }
            remaining = std::move(keep);
        };
        take(t_test, Split::Test);
        take(t_val, Split::Val);
        for (const auto& g : remaining)
            for (auto idx : groups[g]) m.entries[idx].split = Split::Train;
    }
    return m;
}

struct DatasetParams {
    std::size_t n_ok = 450;
    std::size_t n_out = 150;
    std::size_t base_out = 12;
    std::uint64_t seed = 7;
    Roi roi{16, 16, 128, 128};
    int frame_size = 160;
};

// Renders every frame, writes PNGs under out_dir/images and returns the (unsplit) manifest.
// On failure, files written so far are removed.
inline DatasetManifest build_dataset(const DatasetParams& p, const std::filesystem::path& out_dir) {
    if (p.n_out > 0 && (p.base_out == 0 || p.base_out > p.n_out))
        throw InvalidInput("build_dataset: base_out must be in [1, n_out]");
    namespace fs = std::filesystem;
    if (!fs::is_directory(out_dir)) throw IoError("output directory '" + out_dir.string() + "' does not exist");
    const fs::path img_dir = out_dir / "images";
    std::vector<fs::path> written;
    const bool created_dir = !fs::exists(img_dir);

    DatasetManifest m;
    m.seed = p.seed;
    try {
        std::error_code ec;
        fs::create_directories(img_dir, ec);
        if (ec) throw IoError("cannot create '" + img_dir.string() + "': " + ec.message());

        auto emit = [&](const LabeledFrame& f, const std::string& id, const std::string& base_id, std::uint64_t seed,
                        const std::optional<AugmentationSpec>& aug) {
            const auto png = io::encode_png(f.image);
            const fs::path rel = fs::path("images") / (id + ".png");
            io::write_bytes(out_dir / rel, png.data(), png.size());
            written.push_back(out_dir / rel);
            ManifestEntry e;
            e.path = rel.generic_string();
            e.label = f.label;
            e.provenance = f.provenance;
            e.base_id = base_id;
            e.seed = seed;
            e.roi = p.roi;
            e.augmentation = aug;
            e.sha256 = sha256_hex(png.data(), png.size());
            m.entries.push_back(std::move(e));
        };
        auto scene_for = [&](std::uint64_t seed, bool present) { return random_scene(seed, present, p.roi, p.frame_size); };

        char buf[64];
        for (std::size_t i = 0; i < p.n_ok; ++i) {
            const auto seed = derive_seed(p.seed, 1, i);
            auto frame = generate_scene(scene_for(seed, true));
            frame.provenance = Provenance::RealLike;
            std::snprintf(buf, sizeof buf, "ok-%05zu", i);
            emit(frame, buf, buf, seed, std::nullopt);
        }
        for (std::size_t b = 0; b < p.base_out; ++b) {
            const std::size_t group = p.n_out / p.base_out + (b < p.n_out % p.base_out ? 1 : 0);
            const auto seed = derive_seed(p.seed, 2, b);
            auto base = generate_scene(scene_for(seed, false));
            base.provenance = Provenance::SyntheticBase;
            char base_id[32];
            std::snprintf(base_id, sizeof base_id, "out-%04zu", b);
            std::snprintf(buf, sizeof buf, "%s-base", base_id);
            emit(base, buf, base_id, seed, std::nullopt);
            for (std::size_t a = 1; a < group; ++a) {
                const auto aseed = derive_seed(p.seed, 3, b * 100003 + a);
                const auto spec = random_augmentation(aseed, base.image.width, base.image.height);
                auto frame = augment(base, spec, aseed);
                frame.provenance = Provenance::Augmented;
                std::snprintf(buf, sizeof buf, "%s-aug%03zu", base_id, a);
                emit(frame, buf, base_id, aseed, spec);
            }
        }
    } catch (...) {
        std::error_code ec;
        for (const auto& f : written) fs::remove(f, ec);
        if (created_dir) fs::remove(img_dir, ec);
        throw;
    }
    return m;
}

}  // namespace spikepin::dataset
