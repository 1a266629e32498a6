#pragma once

// RunConfig: one JSON document covering dataset, SIFT, encoding, network,
// training and bench settings. Unknown keys are rejected; missing keys keep
// their defaults.

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "spikepin/dataset.hpp"
#include "spikepin/errors.hpp"
#include "spikepin/image_io.hpp"
#include "spikepin/lif.hpp"
#include "spikepin/pipeline.hpp"
#include "spikepin/training.hpp"

namespace spikepin {

struct RunConfig {
    std::uint64_t seed = 7;
    int jobs = 1;
    std::string data_dir = "data";
    std::string out_dir = "runs";
    dataset::DatasetParams dataset;
    dataset::SplitFractions split;
    PipelineConfig pipeline;
    NetworkConfig network;
    TrainConfig training;
    int bench_warmup = 20;
    int bench_frames = 100;

    // Applies the shared seed/job count and the encoder step count to the sub-configs.
    void sync() {
        dataset.seed = seed;
        training.seed = seed;
        training.jobs = jobs;
        network.n_steps = pipeline.encoding.n_steps;
    }

    void validate() const {
        if (jobs < 1) throw InvalidInput("config: jobs must be >= 1");
        pipeline.encoding.validate();
        network.validate();
        training.validate();
        if (network.layer_sizes.front() != pipeline.channels())
            throw InvalidInput("config: network input size must equal top_n x 128");
        const auto& r = dataset.roi;
        if (r.width < Roi::kMinSide || r.height < Roi::kMinSide || !r.fits(dataset.frame_size, dataset.frame_size))
            throw InvalidInput("config: roi must be at least 16x16 and inside the frame");
        if (bench_warmup < 0 || bench_frames < 1) throw InvalidInput("config: bad bench settings");
    }
};

inline nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["jobs"] = c.jobs;
    j["paths"] = {{"data_dir", c.data_dir}, {"out_dir", c.out_dir}};
    const auto& d = c.dataset;
    j["dataset"] = {{"n_ok", d.n_ok},
                    {"n_out", d.n_out},
                    {"base_out", d.base_out},
                    {"frame_size", d.frame_size},
                    {"roi", {d.roi.x0, d.roi.y0, d.roi.width, d.roi.height}},
                    {"split", {c.split.train, c.split.val, c.split.test}}};
    const auto& s = c.pipeline.sift;
    j["sift"] = {{"scales_per_octave", s.scales_per_octave},
                 {"base_sigma", s.base_sigma},
                 {"contrast_threshold", s.contrast_threshold},
                 {"edge_ratio", s.edge_ratio},
                 {"upsample_input", s.upsample_input},
                 {"top_n", c.pipeline.top_n}};
    const auto& e = c.pipeline.encoding;
    j["encoding"] = {{"window_ms", e.window_ms}, {"n_steps", e.n_steps}, {"silent_zero", e.silent_zero}};
    const auto& n = c.network;
    j["network"] = {{"layer_sizes", n.layer_sizes},
                    {"beta", n.beta},
                    {"threshold", n.threshold},
                    {"reset", to_string(n.reset)},
                    {"use_bias", n.use_bias}};
    const auto& t = c.training;
    j["training"] = {{"lr", t.lr},
                     {"lr_decay", t.lr_decay},
                     {"batch_size", t.batch_size},
                     {"epochs", t.epochs},
                     {"surrogate_slope", t.surrogate_slope},
                     {"detach_reset", t.detach_reset},
                     {"class_weighted", t.class_weighted}};
    j["bench"] = {{"warmup", c.bench_warmup}, {"frames", c.bench_frames}};
    return j;
}

namespace detail {

// Every key in `patch` must exist in `defaults`, recursively through objects.
inline void check_keys(const nlohmann::json& patch, const nlohmann::json& defaults, const std::string& where) {
    if (!patch.is_object()) throw InvalidInput("config: '" + where + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!defaults.contains(key)) throw InvalidInput("config: unknown key '" + path + "'");
        if (defaults[key].is_object()) check_keys(value, defaults[key], path);
    }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& patch) {
    RunConfig c;
    const nlohmann::json defaults = to_json(c);
    detail::check_keys(patch, defaults, "");
    nlohmann::json j = defaults;
    j.merge_patch(patch);
    try {
        c.seed = j["seed"].get<std::uint64_t>();
        c.jobs = j["jobs"].get<int>();
        c.data_dir = j["paths"]["data_dir"].get<std::string>();
        c.out_dir = j["paths"]["out_dir"].get<std::string>();
        const auto& d = j["dataset"];
        c.dataset.n_ok = d["n_ok"].get<std::size_t>();
        c.dataset.n_out = d["n_out"].get<std::size_t>();
        c.dataset.base_out = d["base_out"].get<std::size_t>();
        c.dataset.frame_size = d["frame_size"].get<int>();
        const auto roi = d["roi"].get<std::array<int, 4>>();
        c.dataset.roi = Roi{roi[0], roi[1], roi[2], roi[3]};
        const auto split = d["split"].get<std::array<double, 3>>();
        c.split = {split[0], split[1], split[2]};
        const auto& s = j["sift"];
        c.pipeline.sift.scales_per_octave = s["scales_per_octave"].get<int>();
        c.pipeline.sift.base_sigma = s["base_sigma"].get<double>();
        c.pipeline.sift.contrast_threshold = s["contrast_threshold"].get<double>();
        c.pipeline.sift.edge_ratio = s["edge_ratio"].get<double>();
        c.pipeline.sift.upsample_input = s["upsample_input"].get<bool>();
        c.pipeline.top_n = s["top_n"].get<int>();
        const auto& e = j["encoding"];
        c.pipeline.encoding.window_ms = e["window_ms"].get<double>();
        c.pipeline.encoding.n_steps = e["n_steps"].get<int>();
        c.pipeline.encoding.silent_zero = e["silent_zero"].get<bool>();
        const auto& n = j["network"];
        c.network.layer_sizes = n["layer_sizes"].get<std::vector<int>>();
        c.network.beta = n["beta"].get<double>();
        c.network.threshold = n["threshold"].get<double>();
        c.network.reset = reset_mode_from_string(n["reset"].get<std::string>());
        c.network.use_bias = n["use_bias"].get<bool>();
        const auto& t = j["training"];
        c.training.lr = t["lr"].get<double>();
        c.training.lr_decay = t["lr_decay"].get<double>();
        c.training.batch_size = t["batch_size"].get<int>();
        c.training.epochs = t["epochs"].get<int>();
        c.training.surrogate_slope = t["surrogate_slope"].get<double>();
        c.training.detach_reset = t["detach_reset"].get<bool>();
        c.training.class_weighted = t["class_weighted"].get<bool>();
        c.bench_warmup = j["bench"]["warmup"].get<int>();
        c.bench_frames = j["bench"]["frames"].get<int>();
    } catch (const nlohmann::json::exception& ex) {
        throw InvalidInput(std::string("config: ") + ex.what());
    }
    c.sync();
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    const auto bytes = io::read_bytes(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::parse_error& ex) {
        throw InvalidInput("config '" + path.string() + "': " + ex.what());
    }
    return config_from_json(j);
}

}  // namespace spikepin
