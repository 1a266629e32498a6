#pragma once

// Discrete-time feedforward leaky integrate-and-fire network.
//
// Per layer l and step n (s_0 is the input raster):
//   v_l[n] = beta * u_l[n-1] + W_l s_{l-1}[n-1] (+ b_l)
//   s_l[n] = H(v_l[n] - theta)
//   u_l[n] = v_l[n] * (1 - s_l[n])      reset to zero
//          = v_l[n] - theta * s_l[n]    subtractive reset
// Each layer sees its input one step late, so a spike crosses one layer per step.
// The continuous membrane time constant maps to beta = exp(-dt / tau_m); the
// membrane resistance is folded into W.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spikepin/encoding.hpp"
#include "spikepin/errors.hpp"
#include "spikepin/image.hpp"

namespace spikepin {

enum class ResetMode { ToZero, Subtract };

inline std::string to_string(ResetMode m) { return m == ResetMode::ToZero ? "to-zero" : "subtract"; }

inline ResetMode reset_mode_from_string(const std::string& s) {
    if (s == "to-zero") return ResetMode::ToZero;
    if (s == "subtract") return ResetMode::Subtract;
    throw InvalidInput("unknown reset mode '" + s + "'");
}

// How the forward pass turns membrane potential into spikes.
enum class SpikeFn {
    Hard,    // Heaviside
    Smooth,  // 0.5 + x / (1 + k|x|), the antiderivative of the fast-sigmoid surrogate
};

struct NetworkConfig {
    std::vector<int> layer_sizes = {12800, 512, 2};
    double beta = 0.9;
    double threshold = 1.0;
    ResetMode reset = ResetMode::ToZero;
    bool use_bias = false;
    int n_steps = 100;

    static NetworkConfig deep_profile() {
        NetworkConfig c;
        c.layer_sizes = {12800, 512, 128, 2};
        return c;
    }

    void validate(bool require_paper_shape = false) const {
        if (layer_sizes.size() < 2) throw InvalidInput("network: need at least input and output layers");
        for (int n : layer_sizes)
            if (n < 1) throw InvalidInput("network: layer sizes must be positive");
        if (layer_sizes.back() != 2) throw InvalidInput("network: output layer must have 2 neurons");
        if (require_paper_shape && layer_sizes.front() != 12800) throw InvalidInput("network: input layer must be 12800");
        if (!(beta > 0 && beta < 1)) throw InvalidInput("network: beta must be in (0,1)");
        if (!(threshold > 0)) throw InvalidInput("network: threshold must be > 0");
        if (n_steps < 1) throw InvalidInput("network: n_steps must be >= 1");
    }
};

template <typename T>
struct LifLayer {
    int in = 0;
    int out = 0;
    // Input-major storage: weights[j * out + k] is the efficacy from input j to neuron k,
    // so the fan-out of one presynaptic spike is contiguous.
    std::vector<T> weights;
    std::vector<T> bias;  // empty when disabled
    T beta = T(0.9);
    T threshold = T(1.0);
    ResetMode reset = ResetMode::ToZero;

    T& w(int k, int j) { return weights[static_cast<std::size_t>(j) * out + k]; }
    const T& w(int k, int j) const { return weights[static_cast<std::size_t>(j) * out + k]; }
    [[nodiscard]] std::span<const T> fan_out(int j) const {
        return std::span<const T>(weights).subspan(static_cast<std::size_t>(j) * out, out);
    }
};

template <typename T>
struct LifNetwork {
    NetworkConfig config;
    std::vector<LifLayer<T>> layers;

    [[nodiscard]] int inputs() const { return config.layer_sizes.front(); }
    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.size() + l.bias.size();
        return n;
    }
};

namespace detail {

// Uniform double in [0,1) from the top 53 bits; independent of the standard library's distributions.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

// Uniform(+-sqrt(6 / (fan_in + fan_out))) / theta, seeded.
template <typename T>
LifNetwork<T> make_network(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    LifNetwork<T> net;
    net.config = cfg;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 1; l < cfg.layer_sizes.size(); ++l) {
        LifLayer<T> layer;
        layer.in = cfg.layer_sizes[l - 1];
        layer.out = cfg.layer_sizes[l];
        layer.beta = static_cast<T>(cfg.beta);
        layer.threshold = static_cast<T>(cfg.threshold);
        layer.reset = cfg.reset;
        const double limit = std::sqrt(6.0 / (layer.in + layer.out)) / cfg.threshold;
        layer.weights.resize(static_cast<std::size_t>(layer.in) * layer.out);
        for (auto& w : layer.weights) w = static_cast<T>((2.0 * detail::unit_uniform(rng) - 1.0) * limit);
        if (cfg.use_bias) layer.bias.assign(layer.out, T(0));
        net.layers.push_back(std::move(layer));
    }
    return net;
}

template <typename T>
T smooth_spike(T x, T slope) {
    return T(0.5) + x / (T(1) + slope * std::abs(x));
}

// One membrane update for a layer given its weighted input current.
// On return u holds the post-reset potential; spikes are written to out_spikes.
template <typename T>
void lif_step(std::span<T> u, std::span<const T> current, std::span<T> out_spikes, T beta, T threshold,
              ResetMode reset) {
    if (u.size() != current.size() || u.size() != out_spikes.size()) throw InvalidInput("lif_step: dimension mismatch");
    for (std::size_t k = 0; k < u.size(); ++k) {
        const T v = beta * u[k] + current[k];
        if (!std::isfinite(v)) throw DivergenceError("lif_step: non-finite membrane potential");
        const bool fire = v >= threshold;
        out_spikes[k] = fire ? T(1) : T(0);
        u[k] = fire ? (reset == ResetMode::ToZero ? T(0) : v - threshold) : v;
    }
}

template <typename T>
struct LayerTrace {
    int size = 0;
    std::vector<T> v;  // pre-reset membrane, [step * size + k]
    std::vector<T> u;  // post-reset membrane
    std::vector<T> s;  // spikes (0/1, or real-valued in smooth mode)

    [[nodiscard]] std::span<const T> spikes_at(int n) const {
        return std::span<const T>(s).subspan(static_cast<std::size_t>(n) * size, size);
    }
    [[nodiscard]] std::span<const T> v_at(int n) const {
        return std::span<const T>(v).subspan(static_cast<std::size_t>(n) * size, size);
    }
};

template <typename T>
struct ForwardTrace {
    int n_steps = 0;
    std::vector<LayerTrace<T>> layers;
    T count_ok = 0;
    T count_out = 0;
};

struct ForwardOptions {
    SpikeFn spike_fn = SpikeFn::Hard;
    double slope = 25.0;  // only used by SpikeFn::Smooth
};

template <typename T>
ForwardTrace<T> forward(const SpikeRaster& raster, const LifNetwork<T>& net, const ForwardOptions& opt = {}) {
    if (raster.channels() != net.inputs())
        throw InvalidInput("forward: raster has " + std::to_string(raster.channels()) + " channels, network expects " +
                           std::to_string(net.inputs()));
    const int steps = net.config.n_steps;
    if (raster.n_steps() != steps) throw InvalidInput("forward: raster step count does not match network");

    const auto events = raster.events();
    const std::size_t n_layers = net.layers.size();
    ForwardTrace<T> trace;
    trace.n_steps = steps;
    trace.layers.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        auto& lt = trace.layers[l];
        lt.size = net.layers[l].out;
        const std::size_t cells = static_cast<std::size_t>(steps) * lt.size;
        lt.v.assign(cells, T(0));
        lt.u.assign(cells, T(0));
        lt.s.assign(cells, T(0));
    }

    const T slope = static_cast<T>(opt.slope);
    std::vector<T> current;
    for (int n = 0; n < steps; ++n) {
        for (std::size_t l = 0; l < n_layers; ++l) {
            const auto& layer = net.layers[l];
            auto& lt = trace.layers[l];
            current.assign(layer.out, T(0));
            if (!layer.bias.empty()) std::copy(layer.bias.begin(), layer.bias.end(), current.begin());
            if (n > 0) {
                if (l == 0) {
                    for (int j : events.at(n - 1)) {
                        const auto row = layer.fan_out(j);
                        for (int k = 0; k < layer.out; ++k) current[k] += row[k];
                    }
                } else {
                    const auto prev = trace.layers[l - 1].spikes_at(n - 1);
                    for (int j = 0; j < layer.in; ++j) {
                        const T sj = prev[j];
                        if (sj == T(0)) continue;
                        const auto row = layer.fan_out(j);
                        for (int k = 0; k < layer.out; ++k) current[k] += sj * row[k];
                    }
                }
            }
            const std::size_t base = static_cast<std::size_t>(n) * layer.out;
            for (int k = 0; k < layer.out; ++k) {
                const T prev_u = n > 0 ? lt.u[base - layer.out + k] : T(0);
                const T v = layer.beta * prev_u + current[k];
                if (!std::isfinite(v)) throw DivergenceError("forward: non-finite membrane potential");
                T s;
                if (opt.spike_fn == SpikeFn::Hard) {
                    s = v >= layer.threshold ? T(1) : T(0);
                } else {
                    s = smooth_spike(v - layer.threshold, slope);
                }
                lt.v[base + k] = v;
                lt.s[base + k] = s;
                lt.u[base + k] = layer.reset == ResetMode::ToZero ? v * (T(1) - s) : v - layer.threshold * s;
            }
        }
    }

    const auto& out = trace.layers.back();
    for (int n = 0; n < steps; ++n) {
        trace.count_ok += out.s[static_cast<std::size_t>(n) * 2];
        trace.count_out += out.s[static_cast<std::size_t>(n) * 2 + 1];
    }
    return trace;
}

struct Prediction {
    Label label = Label::PinOut;
    double count_ok = 0;
    double count_out = 0;
    double score = 0;  // (c_out - c_ok) / n_steps
};

// argmax of output spike counts; ties resolve to PinOut.
template <typename T>
Prediction classify(const ForwardTrace<T>& trace) {
    if (trace.layers.empty() || trace.layers.back().size != 2) throw InvalidInput("classify: need 2 output neurons");
    Prediction p;
    p.count_ok = static_cast<double>(trace.count_ok);
    p.count_out = static_cast<double>(trace.count_out);
    p.label = p.count_ok > p.count_out ? Label::PinOk : Label::PinOut;
    p.score = trace.n_steps > 0 ? (p.count_out - p.count_ok) / trace.n_steps : 0.0;
    return p;
}

struct SpikeActivity {
    std::vector<double> per_layer;  // spikes / (neurons * steps)
    std::vector<double> spikes;     // raw totals per layer
    double aggregate = 0;           // all layers pooled
};

template <typename T>
SpikeActivity count_spike_activity(const ForwardTrace<T>& trace) {
    SpikeActivity a;
    double total_spikes = 0, total_cells = 0;
    for (const auto& lt : trace.layers) {
        double n = 0;
        for (T s : lt.s) n += static_cast<double>(s);
        const double cells = static_cast<double>(lt.size) * trace.n_steps;
        a.spikes.push_back(n);
        a.per_layer.push_back(cells > 0 ? n / cells : 0.0);
        total_spikes += n;
        total_cells += cells;
    }
    a.aggregate = total_cells > 0 ? total_spikes / total_cells : 0.0;
    return a;
}

template <typename To, typename From>
LifNetwork<To> network_cast(const LifNetwork<From>& src) {
    LifNetwork<To> dst;
    dst.config = src.config;
    for (const auto& l : src.layers) {
        LifLayer<To> d;
        d.in = l.in;
        d.out = l.out;
        d.beta = static_cast<To>(l.beta);
        d.threshold = static_cast<To>(l.threshold);
        d.reset = l.reset;
        d.weights.assign(l.weights.begin(), l.weights.end());
        d.bias.assign(l.bias.begin(), l.bias.end());
        dst.layers.push_back(std::move(d));
    }
    return dst;
}

}  // namespace spikepin
