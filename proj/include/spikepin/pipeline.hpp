#pragma once

// Per-frame inference chain (preprocess -> SIFT -> latency code -> LIF) with
// stage timing, dataset feature loading and test-set evaluation.

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "spikepin/dataset.hpp"
#include "spikepin/encoding.hpp"
#include "spikepin/image.hpp"
#include "spikepin/image_io.hpp"
#include "spikepin/lif.hpp"
#include "spikepin/metrics.hpp"
#include "spikepin/sift.hpp"
#include "spikepin/training.hpp"

namespace spikepin {

struct PipelineConfig {
    sift::SiftConfig sift;
    int top_n = sift::kDefaultTopN;
    EncodingConfig encoding;

    [[nodiscard]] int channels() const { return top_n * sift::kDescriptorSize; }
};

struct StageTimes {
    double preproc = 0, sift = 0, encode = 0, snn = 0, total = 0;  // ms
};

struct FrameResult {
    Prediction prediction;
    SpikeActivity activity;
    double input_density = 0;
    StageTimes times;
};

inline SpikeRaster frame_to_raster(const ImageU8& gray, const Roi& roi, const PipelineConfig& cfg) {
    const auto roi_img = preprocess_frame(gray, roi);
    const auto feats = sift::extract_features(roi_img, cfg.sift, cfg.top_n);
    return encode_features(feats.flat, cfg.encoding);
}

inline void check_compatible(const PipelineConfig& cfg, const LifNetwork<float>& net) {
    if (net.config.layer_sizes.front() != cfg.channels())
        throw InvalidInput("model expects " + std::to_string(net.config.layer_sizes.front()) + " input channels, pipeline produces " +
                           std::to_string(cfg.channels()));
    if (net.config.n_steps != cfg.encoding.n_steps)
        throw InvalidInput("model runs " + std::to_string(net.config.n_steps) + " steps, encoder produces " +
                           std::to_string(cfg.encoding.n_steps));
}

// Single-threaded, timed on the monotonic clock.
inline FrameResult run_frame(const ImageU8& gray, const Roi& roi, const PipelineConfig& cfg, const LifNetwork<float>& net) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double, std::milli>(b - a).count(); };
    FrameResult r;
    const auto t0 = clock::now();
    const auto roi_img = preprocess_frame(gray, roi);
    const auto t1 = clock::now();
    const auto feats = sift::extract_features(roi_img, cfg.sift, cfg.top_n);
    const auto t2 = clock::now();
    const auto raster = encode_features(feats.flat, cfg.encoding);
    const auto t3 = clock::now();
    const auto trace = forward(raster, net);
    r.prediction = classify(trace);
    const auto t4 = clock::now();
    r.times = {ms(t0, t1), ms(t1, t2), ms(t2, t3), ms(t3, t4), ms(t0, t4)};
    r.activity = count_spike_activity(trace);
    r.input_density = spike_density(raster);
    return r;
}

// Loads a manifest entry's image, checking its recorded hash.
inline ImageU8 load_entry_image(const std::filesystem::path& root, const dataset::ManifestEntry& e) {
    const auto bytes = io::read_bytes(root / e.path);
    if (sha256_hex(bytes.data(), bytes.size()) != e.sha256) throw IoError("hash mismatch for '" + (root / e.path).string() + "'");
    return io::decode_png_gray(bytes);
}

// Encodes every entry once (in parallel) so training epochs reuse the rasters.
inline std::vector<Sample> load_samples(const std::filesystem::path& root, const std::vector<const dataset::ManifestEntry*>& entries,
                                        const PipelineConfig& cfg, int jobs = 1) {
    std::vector<Sample> out(entries.size());
    parallel_for(entries.size(), jobs, [&](std::size_t i) {
        const auto img = load_entry_image(root, *entries[i]);
        out[i] = Sample{frame_to_raster(img, entries[i]->roi, cfg), entries[i]->label};
    });
    return out;
}

struct SpikeDensities {
    double input = 0;
    std::vector<double> layers;  // hidden layers, then output
    double network = 0;          // pooled over all LIF layers
    double aggregate = 0;        // pooled over input raster and all LIF layers
};

struct RunReport {
    metrics::ConfusionMatrix confusion;
    metrics::Metrics metrics;
    metrics::PrCurve pr;
    bool pr_defined = false;
    SpikeDensities densities;
    std::vector<double> scores;
    std::vector<Label> truth, predicted;
};

// Full pipeline over each frame; metrics are aggregated in manifest order.
inline RunReport evaluate(const std::vector<Sample>& samples, const LifNetwork<float>& net, int jobs = 1) {
    RunReport rep;
    const std::size_t n = samples.size();
    std::vector<Prediction> preds(n);
    std::vector<SpikeActivity> acts(n);
    std::vector<double> input_density(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        const auto trace = forward(samples[i].raster, net);
        preds[i] = classify(trace);
        acts[i] = count_spike_activity(trace);
        input_density[i] = spike_density(samples[i].raster);
    });

    const std::size_t n_layers = net.layers.size();
    rep.densities.layers.assign(n_layers, 0.0);
    const double in_cells = static_cast<double>(net.config.layer_sizes.front()) * net.config.n_steps;
    double net_cells = 0;
    for (std::size_t l = 0; l < n_layers; ++l) net_cells += static_cast<double>(net.layers[l].out) * net.config.n_steps;
    for (std::size_t i = 0; i < n; ++i) {
        rep.truth.push_back(samples[i].label);
        rep.predicted.push_back(preds[i].label);
        rep.scores.push_back(preds[i].score);
        rep.confusion.add(samples[i].label, preds[i].label);
        rep.densities.input += input_density[i];
        double net_spikes = 0;
        for (std::size_t l = 0; l < n_layers; ++l) {
            rep.densities.layers[l] += acts[i].per_layer[l];
            net_spikes += acts[i].spikes[l];
        }
        rep.densities.network += net_spikes / net_cells;
        rep.densities.aggregate += (net_spikes + input_density[i] * in_cells) / (net_cells + in_cells);
    }
    if (n > 0) {
        const double dn = static_cast<double>(n);
        rep.densities.input /= dn;
        for (auto& d : rep.densities.layers) d /= dn;
        rep.densities.network /= dn;
        rep.densities.aggregate /= dn;
    }
    rep.metrics = metrics::compute_metrics(rep.confusion);
    const auto pos = std::count(rep.truth.begin(), rep.truth.end(), Label::PinOut);
    if (pos > 0 && static_cast<std::size_t>(pos) < n) {
        rep.pr = metrics::pr_curve(rep.scores, rep.truth);
        rep.pr_defined = true;
    }
    return rep;
}

inline nlohmann::ordered_json to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["frames"] = r.confusion.total();
    j["confusion"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
    auto cls = [](const metrics::ClassMetrics& c) {
        return nlohmann::ordered_json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
    };
    j["accuracy"] = r.metrics.accuracy;
    j["class_metrics"] = {{"PinOut", cls(r.metrics.out)}, {"PinOk", cls(r.metrics.ok)}};
    j["average_precision"] = r.pr_defined ? nlohmann::ordered_json(r.pr.average_precision) : nlohmann::ordered_json(nullptr);
    j["pr_points"] = nlohmann::ordered_json::array();
    for (const auto& p : r.pr.points)
        j["pr_points"].push_back({{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}});
    j["spike_density"] = {{"input", r.densities.input},
                          {"layers", r.densities.layers},
                          {"network", r.densities.network},
                          {"aggregate", r.densities.aggregate}};
    return j;
}

}  // namespace spikepin
