#pragma once

// Shared fixtures for the unit tests and the acceptance run: synthetic
// textured images, SIFT invariance measurements, the encoding audit, the
// gradient oracle and a subprocess runner for the CLI.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "spikepin/encoding.hpp"
#include "spikepin/image.hpp"
#include "spikepin/sift.hpp"
#include "spikepin/training.hpp"

namespace spikepin::fixtures {

struct Blob {
    double x, y, sigma, amp;
};

// Random Gaussian blobs in unit coordinates; rendering at any size samples the
// same continuous pattern, so a 2x render is an exact scale change.
inline std::vector<Blob> random_blobs(std::uint32_t seed, int count = 40) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> pos(0.1, 0.9), sig(0.012, 0.05), amp(-1.0, 1.0);
    std::vector<Blob> blobs;
    for (int i = 0; i < count; ++i) blobs.push_back({pos(rng), pos(rng), sig(rng), amp(rng)});
    return blobs;
}

inline ImageF32 render_blobs(const std::vector<Blob>& blobs, int size) {
    ImageF32 img(size, size, 0.0f);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double u = (x + 0.5) / size, v = (y + 0.5) / size;
            double s = 0;
            for (const auto& b : blobs) {
                const double d2 = (u - b.x) * (u - b.x) + (v - b.y) * (v - b.y);
                s += b.amp * std::exp(-d2 / (2 * b.sigma * b.sigma));
            }
            img.at(x, y) = static_cast<float>(s);
        }
    return img;
}

// Exact 90-degree counter-clockwise rotation: (x, y) -> (y, W - 1 - x).
inline ImageF32 rotate90(const ImageF32& src) {
    ImageF32 out(src.height, src.width);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) out.at(y, src.width - 1 - x) = src.at(x, y);
    return out;
}

inline double descriptor_distance(const sift::Descriptor& a, const sift::Descriptor& b) {
    double s = 0;
    for (int i = 0; i < sift::kDescriptorSize; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

struct MatchStats {
    int matches = 0;  // ratio-test survivors
    int correct = 0;  // survivors landing within tolerance of the true position
    [[nodiscard]] double rate() const { return matches ? static_cast<double>(correct) / matches : 0.0; }
};

// Nearest-neighbour descriptor matching with Lowe's ratio test, scored against
// the known rotation.
inline MatchStats rotation_matching(const ImageF32& img, double ratio = 0.8, double tol_px = 2.0) {
    const auto a = sift::extract(img);
    const auto b = sift::extract(rotate90(img));
    MatchStats st;
    for (std::size_t i = 0; i < a.keypoints.size(); ++i) {
        double best = std::numeric_limits<double>::max(), second = best;
        std::size_t bi = 0;
        for (std::size_t j = 0; j < b.keypoints.size(); ++j) {
            const double d = descriptor_distance(a.descriptors[i], b.descriptors[j]);
            if (d < best) {
                second = best;
                best = d;
                bi = j;
            } else if (d < second) {
                second = d;
            }
        }
        if (b.keypoints.size() < 2 || best >= ratio * second) continue;
        ++st.matches;
        const double ex = a.keypoints[i].y, ey = img.width - 1 - a.keypoints[i].x;
        if (std::hypot(b.keypoints[bi].x - ex, b.keypoints[bi].y - ey) <= tol_px) ++st.correct;
    }
    return st;
}

struct ScaleStats {
    int matched = 0;   // small-image keypoints with a large-image keypoint at twice the position
    int shifted = 0;   // of those, scale ratio within one scale step of 2
    [[nodiscard]] double rate() const { return matched ? static_cast<double>(shifted) / matched : 0.0; }
};

// Renders the same pattern at `size` and `2 * size` and checks that matched
// keypoints move up by one octave.
inline ScaleStats octave_shift(const std::vector<Blob>& blobs, int size, double tol_px = 3.0) {
    const auto small = sift::extract(render_blobs(blobs, size));
    const auto large = sift::extract(render_blobs(blobs, 2 * size));
    const double step = 1.0 / 3.0;  // one scale level at s = 3, in octaves
    ScaleStats st;
    for (const auto& k : small.keypoints) {
        // Pixel centres map as x' = 2x + 0.5.
        const double ex = 2 * k.x + 0.5, ey = 2 * k.y + 0.5;
        const sift::Keypoint* best = nullptr;
        double best_d = tol_px;
        for (const auto& q : large.keypoints) {
            const double d = std::hypot(q.x - ex, q.y - ey);
            if (d <= best_d) {
                best_d = d;
                best = &q;
            }
        }
        if (!best) continue;
        ++st.matched;
        if (std::abs(std::log2(best->scale / k.scale) - 1.0) <= step) ++st.shifted;
    }
    return st;
}

struct EncodingAudit {
    std::size_t vectors = 0, spikes = 0;
    std::size_t time_errors = 0;     // |t - T(1 - x)| above float precision
    std::size_t multi_spike_rows = 0;
    std::size_t order_violations = 0;  // larger x firing strictly later
    std::size_t silence_errors = 0;    // zero channels firing, or nonzero channels silent
    double encode_seconds = 0;         // normalise + encode + rasterise only
};

// Random sparse descriptor-like vectors through normalise -> encode -> rasterise,
// each checked against t = T (1 - x) computed here in double precision.
inline EncodingAudit audit_encoding(std::size_t n_vectors, std::size_t length, std::uint64_t seed, const EncodingConfig& cfg = {}) {
    // splitmix64 keeps generation cheap next to the encoder: one draw gives the
    // zero decision (~30%) and a 24-bit value in (0, 1].
    std::uint64_t state = seed;
    auto next = [&state] {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    EncodingAudit a;
    std::vector<float> flat(length);
    for (std::size_t v = 0; v < n_vectors; ++v) {
        for (auto& f : flat) {
            const std::uint64_t r = next();
            f = (r & 0xff) < 77 ? 0.0f : static_cast<float>((r >> 40) + 1) * 0x1.0p-24f;
        }
        const auto t0 = std::chrono::steady_clock::now();
        const auto x = normalize_feature_vector(flat);
        const auto train = encode_latency(x, cfg);
        const auto raster = rasterize(train, cfg);
        a.encode_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ++a.vectors;
        for (std::size_t i = 0; i < length; ++i) {
            const bool fired = raster.step_of(static_cast<int>(i)) >= 0;
            if (x[i] == 0.0f) {
                if (fired || train.times[i]) ++a.silence_errors;
                continue;
            }
            if (!fired || !train.times[i]) {
                ++a.silence_errors;
                continue;
            }
            ++a.spikes;
            const double expect = cfg.window_ms * (1.0 - static_cast<double>(x[i]));
            if (std::abs(*train.times[i] - expect) > 1e-9 * cfg.window_ms) ++a.time_errors;
        }
        // Row sums recounted from the step-grouped event view.
        std::vector<std::uint8_t> per_row(length, 0);
        const auto ev = raster.events();
        for (int t = 0; t < raster.n_steps(); ++t)
            for (int c : ev.at(t)) a.multi_spike_rows += ++per_row[static_cast<std::size_t>(c)] == 2;
        // Monotonicity without sorting: every x firing at step s must be <= every x
        // that fired at an earlier step.
        std::vector<float> lo(static_cast<std::size_t>(raster.n_steps()), 2.0f), hi(lo.size(), -1.0f);
        for (std::size_t i = 0; i < length; ++i) {
            const int s = raster.step_of(static_cast<int>(i));
            if (s < 0) continue;
            lo[static_cast<std::size_t>(s)] = std::min(lo[static_cast<std::size_t>(s)], x[i]);
            hi[static_cast<std::size_t>(s)] = std::max(hi[static_cast<std::size_t>(s)], x[i]);
        }
        float floor_so_far = 2.0f;  // smallest x among earlier steps
        for (std::size_t s = 0; s < lo.size(); ++s) {
            if (hi[s] < 0) continue;
            if (hi[s] > floor_so_far) {
                for (std::size_t i = 0; i < length; ++i)
                    a.order_violations += raster.step_of(static_cast<int>(i)) == static_cast<int>(s) && x[i] > floor_so_far;
            }
            floor_so_far = std::min(floor_so_far, lo[s]);
        }
    }
    return a;
}

// Largest relative deviation of the membrane driven by constant current I (no
// threshold) from I * (1 - beta^(n+1)) / (1 - beta), over steps 0..n_max.
inline double lif_closed_form_error(double beta, int n_max, double current = 1.0) {
    std::vector<double> u{0.0}, spike{0.0};
    const std::vector<double> in{current};
    double worst = 0;
    for (int n = 0; n <= n_max; ++n) {
        lif_step<double>(u, in, spike, beta, std::numeric_limits<double>::max(), ResetMode::ToZero);
        const double expect = current * (1 - std::pow(beta, n + 1)) / (1 - beta);
        worst = std::max(worst, std::abs(u[0] - expect) / std::abs(expect));
        if (spike[0] != 0) return std::numeric_limits<double>::infinity();
    }
    return worst;
}

struct GradCheck {
    double max_rel_error = 0;
    double max_abs_grad = 0;
    std::size_t parameters = 0;
};

// Smooth forward pass (hard spike replaced by the surrogate's antiderivative),
// so the BPTT gradient with an attached reset is the exact gradient and central
// differences are a valid oracle.
inline GradCheck gradient_check(std::uint64_t seed, const std::vector<int>& sizes = {10, 4, 2}, int n_steps = 10,
                                double h = 1e-4, double slope = 5.0) {
    NetworkConfig nc;
    nc.layer_sizes = sizes;
    nc.n_steps = n_steps;
    nc.use_bias = true;
    auto net = make_network<double>(nc, seed);
    std::mt19937_64 rng(seed * 7919 + 1);
    std::uniform_real_distribution<double> w(-1.5, 1.5), b(-0.2, 0.2);
    for (auto& l : net.layers) {
        for (auto& x : l.weights) x = w(rng);
        for (auto& x : l.bias) x = b(rng);
    }
    SpikeRaster raster(sizes.front(), n_steps);
    for (int c = 0; c < sizes.front(); ++c)
        if (rng() % 4 != 0) raster.set_spike(c, static_cast<int>(rng() % static_cast<std::uint64_t>(n_steps)));
    const Label label = rng() % 2 ? Label::PinOut : Label::PinOk;

    const ForwardOptions fopt{SpikeFn::Smooth, slope};
    auto loss_of = [&](const LifNetwork<double>& n) {
        const auto t = forward(raster, n, fopt);
        return loss_bce(t.count_ok, t.count_out, label, n_steps);
    };
    const auto trace = forward(raster, net, fopt);
    const auto lr = loss_bce(trace.count_ok, trace.count_out, label, n_steps);
    const auto grads = backward_bptt(trace, raster, lr, net, BackwardOptions{slope, false});

    GradCheck gc;
    auto probe = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = loss_of(net).loss;
        param = saved - h;
        const double down = loss_of(net).loss;
        param = saved;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        gc.max_rel_error = std::max(gc.max_rel_error, std::abs(analytic - numeric) / scale);
        gc.max_abs_grad = std::max(gc.max_abs_grad, std::abs(analytic));
        ++gc.parameters;
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        for (std::size_t i = 0; i < net.layers[l].weights.size(); ++i) probe(net.layers[l].weights[i], grads.weights[l][i]);
        for (std::size_t i = 0; i < net.layers[l].bias.size(); ++i) probe(net.layers[l].bias[i], grads.bias[l][i]);
    }
    return gc;
}

struct CommandResult {
    int exit_code = -1;
    std::string out, err;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs a shell command in `cwd`, capturing stdout and stderr through temp files.
inline CommandResult run_command(const std::string& cmd, const std::filesystem::path& cwd = std::filesystem::current_path()) {
    static int counter = 0;
    const auto tmp = std::filesystem::temp_directory_path();
    const auto tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
    const auto out = tmp / ("spikepin_out_" + tag), err = tmp / ("spikepin_err_" + tag);
    const std::string full = "cd '" + cwd.string() + "' && " + cmd + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(full.c_str());
    CommandResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    std::filesystem::remove(out);
    std::filesystem::remove(err);
    return r;
}

}  // namespace spikepin::fixtures
