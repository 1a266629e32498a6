#pragma once

// Surrogate-gradient BPTT with Adam for LifNetwork.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "spikepin/encoding.hpp"
#include "spikepin/errors.hpp"
#include "spikepin/lif.hpp"

namespace spikepin {

struct TrainConfig {
    double lr = 0.001;
    double lr_decay = 0.95;  // multiplicative, per epoch
    int batch_size = 64;
    int epochs = 50;
    // A gentler surrogate than the common k=25 keeps gradients alive in the
    // rarely-firing output neuron; class weighting offsets the 3:1 imbalance.
    double surrogate_slope = 5.0;
    std::uint64_t seed = 0;
    bool detach_reset = true;
    bool class_weighted = true;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int jobs = 1;

    void validate() const {
        if (!(lr > 0)) throw InvalidInput("train: lr must be > 0");
        if (!(lr_decay > 0 && lr_decay <= 1)) throw InvalidInput("train: lr_decay must be in (0,1]");
        if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
        if (epochs < 0) throw InvalidInput("train: epochs must be >= 0");
        if (!(surrogate_slope > 0)) throw InvalidInput("train: surrogate slope must be > 0");
    }

    // Learning rate in effect during 1-based epoch e.
    [[nodiscard]] double lr_at(int epoch) const { return lr * std::pow(lr_decay, epoch - 1); }
};

// Fast-sigmoid derivative, used in place of the Heaviside derivative.
template <typename T>
T surrogate_spike_grad(T u_minus_theta, T slope) {
    const T d = T(1) + slope * std::abs(u_minus_theta);
    return T(1) / (d * d);
}

inline constexpr double kProbClamp = 1e-7;

struct LossResult {
    double loss = 0;
    double p_out = 0.5;
    double grad_count_ok = 0;  // dL / dc_ok
    double grad_count_out = 0;
};

inline double bce_from_probability(double p_out, Label label) {
    const double p = std::clamp(p_out, kProbClamp, 1.0 - kProbClamp);
    const double y = label == Label::PinOut ? 1.0 : 0.0;
    return -(y * std::log(p) + (1 - y) * std::log(1 - p));
}

// BCE on the PinOut coordinate of a softmax over output spike rates.
inline LossResult loss_bce(double count_ok, double count_out, Label label, int n_steps, double weight = 1.0) {
    if (n_steps < 1) throw InvalidInput("loss_bce: n_steps must be >= 1");
    const double d = (count_out - count_ok) / n_steps;
    const double p_raw = 1.0 / (1.0 + std::exp(-d));
    const double y = label == Label::PinOut ? 1.0 : 0.0;
    LossResult r;
    r.p_out = std::clamp(p_raw, kProbClamp, 1.0 - kProbClamp);
    r.loss = weight * bce_from_probability(p_raw, label);
    const double dd = (r.p_out == p_raw) ? weight * (p_raw - y) : 0.0;
    r.grad_count_out = dd / n_steps;
    r.grad_count_ok = -dd / n_steps;
    return r;
}

template <typename T>
struct Gradients {
    std::vector<std::vector<T>> weights;  // same layout as LifLayer::weights
    std::vector<std::vector<T>> bias;

    explicit Gradients(const LifNetwork<T>& net) {
        for (const auto& l : net.layers) {
            weights.emplace_back(l.weights.size(), T(0));
            bias.emplace_back(l.bias.size(), T(0));
        }
    }
    void zero() {
        for (auto& w : weights) std::fill(w.begin(), w.end(), T(0));
        for (auto& b : bias) std::fill(b.begin(), b.end(), T(0));
    }
    [[nodiscard]] bool finite() const {
        for (const auto& w : weights)
            for (T g : w)
                if (!std::isfinite(g)) return false;
        for (const auto& b : bias)
            for (T g : b)
                if (!std::isfinite(g)) return false;
        return true;
    }
};

struct BackwardOptions {
    double slope = 25.0;
    bool detach_reset = true;
};

// Accumulates scale * dL/dparams into grads, unrolled over every step of the trace.
template <typename T>
void backward_bptt(const ForwardTrace<T>& trace, const SpikeRaster& raster, const LossResult& loss,
                   const LifNetwork<T>& net, Gradients<T>& grads, const BackwardOptions& opt = {}, T scale = T(1)) {
    const int steps = trace.n_steps;
    const std::size_t n_layers = net.layers.size();
    if (trace.layers.size() != n_layers) throw InvalidInput("backward_bptt: trace does not match network");
    const auto events = raster.events();
    const T slope = static_cast<T>(opt.slope);

    // carry[l]: dL/du_l[n] arriving from step n+1 through the leak.
    // pending[l]: dL/ds_l[n] arriving from layer l+1 at step n+1.
    std::vector<std::vector<T>> carry(n_layers), pending(n_layers), pending_next(n_layers), gv(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        carry[l].assign(net.layers[l].out, T(0));
        pending[l].assign(net.layers[l].out, T(0));
        pending_next[l].assign(net.layers[l].out, T(0));
        gv[l].assign(net.layers[l].out, T(0));
    }
    const T g_ok = static_cast<T>(loss.grad_count_ok) * scale;
    const T g_out = static_cast<T>(loss.grad_count_out) * scale;

    for (int n = steps - 1; n >= 0; --n) {
        for (auto& p : pending_next) std::fill(p.begin(), p.end(), T(0));
        for (std::size_t li = n_layers; li-- > 0;) {
            const auto& layer = net.layers[li];
            const auto& lt = trace.layers[li];
            const std::size_t base = static_cast<std::size_t>(n) * layer.out;
            auto& g = gv[li];
            for (int k = 0; k < layer.out; ++k) {
                const T v = lt.v[base + k];
                const T s = lt.s[base + k];
                T gs = pending[li][k];
                if (li + 1 == n_layers) gs += (k == 0 ? g_ok : g_out);
                const T gu = carry[li][k];
                T du_dv, du_ds;
                if (layer.reset == ResetMode::ToZero) {
                    du_dv = T(1) - s;
                    du_ds = -v;
                } else {
                    du_dv = T(1);
                    du_ds = -layer.threshold;
                }
                if (!opt.detach_reset) gs += gu * du_ds;
                g[k] = gu * du_dv + gs * surrogate_spike_grad(v - layer.threshold, slope);
                carry[li][k] = layer.beta * g[k];
            }
            if (!grads.bias[li].empty())
                for (int k = 0; k < layer.out; ++k) grads.bias[li][k] += g[k];
            if (n == 0) continue;

            auto& gw = grads.weights[li];
            if (li == 0) {
                for (int j : events.at(n - 1)) {
                    T* row = &gw[static_cast<std::size_t>(j) * layer.out];
                    for (int k = 0; k < layer.out; ++k) row[k] += g[k];
                }
            } else {
                const auto prev = trace.layers[li - 1].spikes_at(n - 1);
                auto& pn = pending_next[li - 1];
                for (int j = 0; j < layer.in; ++j) {
                    const T* wrow = &layer.weights[static_cast<std::size_t>(j) * layer.out];
                    T acc = T(0);
                    for (int k = 0; k < layer.out; ++k) acc += wrow[k] * g[k];
                    pn[j] += acc;
                    const T sj = prev[j];
                    if (sj == T(0)) continue;
                    T* row = &gw[static_cast<std::size_t>(j) * layer.out];
                    for (int k = 0; k < layer.out; ++k) row[k] += sj * g[k];
                }
            }
        }
        std::swap(pending, pending_next);
    }
}

template <typename T>
Gradients<T> backward_bptt(const ForwardTrace<T>& trace, const SpikeRaster& raster, const LossResult& loss,
                           const LifNetwork<T>& net, const BackwardOptions& opt = {}) {
    Gradients<T> g(net);
    backward_bptt(trace, raster, loss, net, g, opt);
    if (!g.finite()) throw DivergenceError("backward_bptt: non-finite gradient");
    return g;
}

template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m_w, v_w, m_b, v_b;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(const LifNetwork<T>& net, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
        : beta1(b1), beta2(b2), eps(e) {
        for (const auto& l : net.layers) {
            m_w.emplace_back(l.weights.size(), T(0));
            v_w.emplace_back(l.weights.size(), T(0));
            m_b.emplace_back(l.bias.size(), T(0));
            v_b.emplace_back(l.bias.size(), T(0));
        }
    }
};

namespace detail {

template <typename T>
void adam_update(std::vector<T>& w, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v, double b1, double b2,
                 double eps, double lr, double c1, double c2) {
    const T tb1 = static_cast<T>(b1), tb2 = static_cast<T>(b2);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const T gi = g[i];
        m[i] = tb1 * m[i] + (T(1) - tb1) * gi;
        v[i] = tb2 * v[i] + (T(1) - tb2) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace detail

// Bias-corrected Adam.
template <typename T>
void adam_step(LifNetwork<T>& net, const Gradients<T>& grads, AdamState<T>& state, double lr) {
    if (grads.weights.size() != net.layers.size() || state.m_w.size() != net.layers.size())
        throw InvalidInput("adam_step: shape mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        if (grads.weights[l].size() != layer.weights.size()) throw InvalidInput("adam_step: shape mismatch");
        detail::adam_update(layer.weights, grads.weights[l], state.m_w[l], state.v_w[l], state.beta1, state.beta2,
                            state.eps, lr, c1, c2);
        detail::adam_update(layer.bias, grads.bias[l], state.m_b[l], state.v_b[l], state.beta1, state.beta2, state.eps,
                            lr, c1, c2);
    }
}

struct Sample {
    SpikeRaster raster;
    Label label = Label::PinOk;
};

struct EpochReport {
    int epoch = 0;
    double train_loss = 0;
    double train_accuracy = 0;
    double val_loss = 0;
    double val_accuracy = 0;
    double lr = 0;
    double seconds = 0;
};

template <typename T>
struct TrainResult {
    LifNetwork<T> best;
    LifNetwork<T> last;
    int best_epoch = 0;  // 0 = initial weights
    std::vector<EpochReport> reports;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads; each index is visited exactly once.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::clamp<long>(jobs, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct EvalSummary {
    double loss = 0;
    double accuracy = 0;
};

template <typename T>
EvalSummary evaluate_loss(const LifNetwork<T>& net, std::span<const Sample> samples, int jobs = 1) {
    if (samples.empty()) return {};
    std::vector<double> losses(samples.size());
    std::vector<int> correct(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) {
        const auto trace = forward(samples[i].raster, net);
        const auto pred = classify(trace);
        losses[i] = loss_bce(pred.count_ok, pred.count_out, samples[i].label, trace.n_steps).loss;
        correct[i] = pred.label == samples[i].label;
    });
    EvalSummary s;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        s.loss += losses[i];
        s.accuracy += correct[i];
    }
    s.loss /= static_cast<double>(samples.size());
    s.accuracy /= static_cast<double>(samples.size());
    return s;
}

// Mini-batch Adam over the training samples with per-epoch shuffling and lr decay.
// The returned `best` network is the one with the highest validation accuracy
// (lower validation loss breaks ties).
template <typename T>
TrainResult<T> train(std::span<const Sample> train_set, std::span<const Sample> val_set, LifNetwork<T> net,
                     const TrainConfig& cfg, const std::function<void(const EpochReport&)>& on_epoch = {}) {
    cfg.validate();
    TrainResult<T> result;
    result.best = net;
    if (cfg.epochs == 0 || train_set.empty()) {
        result.last = std::move(net);
        return result;
    }

    double w_ok = 1.0, w_out = 1.0;
    if (cfg.class_weighted) {
        double n_ok = 0, n_out = 0;
        for (const auto& s : train_set) (s.label == Label::PinOk ? n_ok : n_out) += 1;
        if (n_ok > 0 && n_out > 0) {
            w_ok = train_set.size() / (2.0 * n_ok);
            w_out = train_set.size() / (2.0 * n_out);
        }
    }

    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    AdamState<T> adam(net, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    Gradients<T> grads(net);
    const BackwardOptions bopt{cfg.surrogate_slope, cfg.detach_reset};
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_acc = -1, best_loss = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cfg.lr_at(epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            grads.zero();
            const T scale = T(1) / static_cast<T>(end - start);
            for (std::size_t b = start; b < end; ++b) {
                const auto& sample = train_set[order[b]];
                const auto trace = forward(sample.raster, net);
                const auto pred = classify(trace);
                const auto loss = loss_bce(pred.count_ok, pred.count_out, sample.label, trace.n_steps,
                                           sample.label == Label::PinOk ? w_ok : w_out);
                if (!std::isfinite(loss.loss)) throw DivergenceError("train: non-finite loss");
                loss_sum += loss.loss;
                correct += pred.label == sample.label;
                backward_bptt(trace, sample.raster, loss, net, grads, bopt, scale);
            }
            if (!grads.finite()) throw DivergenceError("train: non-finite gradient in epoch " + std::to_string(epoch));
            adam_step(net, grads, adam, lr);
        }

        EpochReport rep;
        rep.epoch = epoch;
        rep.lr = lr;
        rep.train_loss = loss_sum / static_cast<double>(order.size());
        rep.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        const auto val = evaluate_loss(net, val_set, cfg.jobs);
        rep.val_loss = val.loss;
        rep.val_accuracy = val.accuracy;
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!std::isfinite(rep.train_loss) || !std::isfinite(rep.val_loss))
            throw DivergenceError("train: non-finite loss in epoch " + std::to_string(epoch));
        result.reports.push_back(rep);
        if (on_epoch) on_epoch(rep);

        if (rep.val_accuracy > best_acc || (rep.val_accuracy == best_acc && rep.val_loss < best_loss)) {
            best_acc = rep.val_accuracy;
            best_loss = rep.val_loss;
            result.best = net;
            result.best_epoch = epoch;
        }
    }
    result.last = std::move(net);
    return result;
}

}  // namespace spikepin
