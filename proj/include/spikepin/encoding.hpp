#pragma once

// Time-to-first-spike coding of a feature vector: t = T * (1 - x), one spike
// per channel at most, discretised into a channels x steps raster.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "spikepin/errors.hpp"
#include "spikepin/image.hpp"

namespace spikepin {

struct EncodingConfig {
    double window_ms = 100.0;
    int n_steps = 100;
    bool silent_zero = true;

    [[nodiscard]] double step_ms() const { return window_ms / n_steps; }

    void validate() const {
        if (!(window_ms > 0) || !std::isfinite(window_ms)) throw InvalidInput("encoding: window_ms must be > 0");
        if (n_steps < 1) throw InvalidInput("encoding: n_steps must be >= 1");
    }
};

struct SpikeTrain {
    double window_ms = 100.0;
    std::vector<std::optional<double>> times;  // ms, at most one spike per channel
};

// Binary channels x steps matrix, stored as the firing step of each channel (-1 = silent).
class SpikeRaster {
public:
    SpikeRaster() = default;
    SpikeRaster(int channels, int n_steps) : n_steps_(n_steps), step_(static_cast<std::size_t>(channels), -1) {
        if (channels < 0 || n_steps < 1) throw InvalidInput("SpikeRaster: bad dimensions");
    }

    [[nodiscard]] int channels() const { return static_cast<int>(step_.size()); }
    [[nodiscard]] int n_steps() const { return n_steps_; }
    [[nodiscard]] int step_of(int channel) const { return step_[channel]; }
    [[nodiscard]] bool fires(int channel, int step) const { return step_[channel] == step; }
    [[nodiscard]] std::span<const std::int32_t> steps() const { return step_; }

    void set_spike(int channel, int step) {
        if (channel < 0 || channel >= channels()) throw BoundsError("SpikeRaster: channel out of range");
        if (step < -1 || step >= n_steps_) throw BoundsError("SpikeRaster: step out of range");
        step_[channel] = step;
    }
    void clear(int channel) { step_[channel] = -1; }

    [[nodiscard]] std::size_t spike_count() const {
        return static_cast<std::size_t>(std::count_if(step_.begin(), step_.end(), [](auto s) { return s >= 0; }));
    }

    // Channels grouped by firing step (CSR layout: offsets has n_steps + 1 entries).
    struct Events {
        std::vector<std::int32_t> offsets;
        std::vector<std::int32_t> channels;

        [[nodiscard]] std::span<const std::int32_t> at(int step) const {
            return std::span<const std::int32_t>(channels).subspan(offsets[step], offsets[step + 1] - offsets[step]);
        }
    };

    [[nodiscard]] Events events() const {
        Events ev;
        ev.offsets.assign(static_cast<std::size_t>(n_steps_) + 1, 0);
        for (auto s : step_)
            if (s >= 0) ++ev.offsets[s + 1];
        for (int t = 0; t < n_steps_; ++t) ev.offsets[t + 1] += ev.offsets[t];
        ev.channels.resize(ev.offsets.back());
        std::vector<std::int32_t> cursor(ev.offsets.begin(), ev.offsets.end() - 1);
        for (int c = 0; c < channels(); ++c)
            if (step_[c] >= 0) ev.channels[cursor[step_[c]]++] = c;
        return ev;
    }

    bool operator==(const SpikeRaster&) const = default;

private:
    int n_steps_ = 1;
    std::vector<std::int32_t> step_;
};

// L2-normalise, then rescale so the largest element is 1. Zero stays zero.
inline std::vector<float> normalize_feature_vector(std::span<const float> flat) {
    double ss = 0;
    for (float v : flat) {
        if (!std::isfinite(v)) throw InvalidInput("normalize_feature_vector: non-finite value");
        if (v < 0) throw InvalidInput("normalize_feature_vector: negative value");
        ss += static_cast<double>(v) * v;
    }
    std::vector<float> out(flat.size(), 0.0f);
    if (ss == 0) return out;
    const double norm = std::sqrt(ss);
    double max_v = 0;
    for (float v : flat) max_v = std::max(max_v, v / norm);
    for (std::size_t i = 0; i < flat.size(); ++i) out[i] = static_cast<float>((flat[i] / norm) / max_v);
    return out;
}

inline SpikeTrain encode_latency(std::span<const float> x, const EncodingConfig& cfg = {}) {
    cfg.validate();
    SpikeTrain train;
    train.window_ms = cfg.window_ms;
    train.times.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x[i];
        if (!(v >= 0.0f && v <= 1.0f)) throw InvalidInput("encode_latency: value outside [0,1]");
        if (v == 0.0f && cfg.silent_zero) continue;
        train.times[i] = cfg.window_ms * (1.0 - static_cast<double>(v));
    }
    return train;
}

inline int spike_step(double t_ms, const EncodingConfig& cfg) {
    const auto step = static_cast<long>(std::floor(t_ms * cfg.n_steps / cfg.window_ms));
    return static_cast<int>(std::clamp<long>(step, 0, cfg.n_steps - 1));
}

inline SpikeRaster rasterize(const SpikeTrain& train, const EncodingConfig& cfg = {}) {
    cfg.validate();
    SpikeRaster raster(static_cast<int>(train.times.size()), cfg.n_steps);
    for (std::size_t c = 0; c < train.times.size(); ++c)
        if (train.times[c]) raster.set_spike(static_cast<int>(c), spike_step(*train.times[c], cfg));
    return raster;
}

inline double spike_density(const SpikeRaster& raster) {
    if (raster.channels() == 0) return 0.0;
    return static_cast<double>(raster.spike_count()) / (static_cast<double>(raster.channels()) * raster.n_steps());
}

// Feature vector -> raster in one go (normalise, encode, rasterise).
inline SpikeRaster encode_features(std::span<const float> flat, const EncodingConfig& cfg = {}) {
    const auto x = normalize_feature_vector(flat);
    return rasterize(encode_latency(x, cfg), cfg);
}

inline void write_raster_csv(std::ostream& os, const SpikeRaster& raster) {
    os << "channel,step\n";
    for (int c = 0; c < raster.channels(); ++c)
        if (raster.step_of(c) >= 0) os << c << ',' << raster.step_of(c) << '\n';
}

// rows x cols grid of channels (row-major), early spikes red/yellow, late blue, silent black.
inline ImageRgb raster_heatmap(const SpikeRaster& raster, int cols = 128) {
    const int rows = (raster.channels() + cols - 1) / cols;
    ImageRgb img{cols, rows, std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols * 3, 0)};
    const double span = std::max(1, raster.n_steps() - 1);
    for (int c = 0; c < raster.channels(); ++c) {
        const int s = raster.step_of(c);
        if (s < 0) continue;
        const double v = 1.0 - s / span;  // jet colour map, 1 = earliest
        auto* p = &img.data[3 * static_cast<std::size_t>(c)];
        p[0] = static_cast<std::uint8_t>(255 * std::clamp(1.5 - std::abs(4 * v - 3), 0.0, 1.0));
        p[1] = static_cast<std::uint8_t>(255 * std::clamp(1.5 - std::abs(4 * v - 2), 0.0, 1.0));
        p[2] = static_cast<std::uint8_t>(255 * std::clamp(1.5 - std::abs(4 * v - 1), 0.0, 1.0));
    }
    return img;
}

}  // namespace spikepin
