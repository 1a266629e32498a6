#pragma once

// Per-stage latency benchmark: single-threaded, monotonic clock, explicit warmup.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "spikepin/errors.hpp"
#include "spikepin/pipeline.hpp"

namespace spikepin::bench {

struct StageStats {
    std::string name;
    double median = 0, mean = 0, p95 = 0;  // ms
};

struct LatencyReport {
    std::vector<std::string> stage_names;
    std::vector<std::vector<double>> stage_samples;  // [stage][frame], ms
    std::vector<double> total_samples;               // ms per frame, whole pipeline
    std::vector<StageStats> stages;
    StageStats total{"total"};
    int warmup = 0;
    std::string hardware;
    double timer_resolution_ms = 0;
    std::vector<std::string> warnings;
};

// Nearest-rank percentile on a copy.
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

inline double median(std::vector<double> v) {
    if (v.empty()) return 0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline StageStats summarize(const std::string& name, const std::vector<double>& xs) {
    StageStats s;
    s.name = name;
    s.median = median(xs);
    double sum = 0;
    for (double x : xs) sum += x;
    s.mean = xs.empty() ? 0 : sum / static_cast<double>(xs.size());
    s.p95 = percentile(xs, 0.95);
    return s;
}

inline void recompute(LatencyReport& r) {
    r.stages.clear();
    for (std::size_t i = 0; i < r.stage_names.size(); ++i) r.stages.push_back(summarize(r.stage_names[i], r.stage_samples[i]));
    r.total = summarize("total", r.total_samples);
}

// Appends a separately timed stage; its time is added to every frame's total.
inline void add_stage(LatencyReport& r, const std::string& name, const std::vector<double>& samples) {
    if (samples.size() != r.total_samples.size()) throw InvalidInput("add_stage: sample count mismatch");
    r.stage_names.push_back(name);
    r.stage_samples.push_back(samples);
    for (std::size_t i = 0; i < samples.size(); ++i) r.total_samples[i] += samples[i];
    recompute(r);
}

// Smallest observable non-zero step of the monotonic clock.
inline double timer_resolution_ms() {
    using clock = std::chrono::steady_clock;
    double best = 1e9;
    for (int i = 0; i < 200; ++i) {
        const auto a = clock::now();
        auto b = clock::now();
        while (b == a) b = clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(b - a).count());
    }
    return best;
}

inline std::string hardware_descriptor() {
    std::string model = "unknown-cpu";
    std::ifstream in("/proc/cpuinfo");
    for (std::string line; std::getline(in, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) model = line.substr(line.find_first_not_of(' ', colon + 1));
            break;
        }
    }
    std::string compiler = "unknown-compiler";
#if defined(__clang__)
    compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
    compiler = "gcc " __VERSION__;
#endif
    return model + "; " + std::to_string(std::thread::hardware_concurrency()) + " hw threads; " + compiler;
}

inline constexpr int kMinMeasuredFrames = 50;
inline constexpr double kResolutionWarnMs = 0.1;

struct Frame {
    ImageU8 image;
    Roi roi;
};

// Runs `warmup` untimed frames (cycling the input), then times every frame once.
inline LatencyReport bench_latency(const std::vector<Frame>& frames, const PipelineConfig& cfg, const LifNetwork<float>& net,
                                   int warmup = 20) {
    if (static_cast<int>(frames.size()) < kMinMeasuredFrames)
        throw InvalidInput("bench_latency: need at least " + std::to_string(kMinMeasuredFrames) + " measured frames");
    check_compatible(cfg, net);
    for (int i = 0; i < warmup; ++i) {
        const auto& f = frames[static_cast<std::size_t>(i) % frames.size()];
        (void)run_frame(f.image, f.roi, cfg, net);
    }
    LatencyReport r;
    r.warmup = warmup;
    r.stage_names = {"preproc", "sift", "encode", "snn"};
    r.stage_samples.assign(4, {});
    for (const auto& f : frames) {
        const auto t = run_frame(f.image, f.roi, cfg, net).times;
        r.stage_samples[0].push_back(t.preproc);
        r.stage_samples[1].push_back(t.sift);
        r.stage_samples[2].push_back(t.encode);
        r.stage_samples[3].push_back(t.snn);
        r.total_samples.push_back(t.total);
    }
    r.hardware = hardware_descriptor();
    r.timer_resolution_ms = timer_resolution_ms();
    if (r.timer_resolution_ms > kResolutionWarnMs)
        r.warnings.push_back("timer resolution " + std::to_string(r.timer_resolution_ms) + " ms is coarser than 0.1 ms");
    recompute(r);
    return r;
}

inline nlohmann::ordered_json to_json(const LatencyReport& r) {
    nlohmann::ordered_json j;
    auto st = [](const StageStats& s) {
        return nlohmann::ordered_json{{"median_ms", s.median}, {"mean_ms", s.mean}, {"p95_ms", s.p95}};
    };
    j["frames"] = r.total_samples.size();
    j["warmup"] = r.warmup;
    j["stages"] = nlohmann::ordered_json::object();
    for (const auto& s : r.stages) j["stages"][s.name] = st(s);
    j["total"] = st(r.total);
    j["hardware"] = r.hardware;
    j["timer_resolution_ms"] = r.timer_resolution_ms;
    j["warnings"] = r.warnings;
    return j;
}

inline void write_csv(std::ostream& os, const LatencyReport& r) {
    os << "stage,median_ms,mean_ms,p95_ms\n";
    for (const auto& s : r.stages) os << s.name << ',' << s.median << ',' << s.mean << ',' << s.p95 << '\n';
    os << "total," << r.total.median << ',' << r.total.mean << ',' << r.total.p95 << '\n';
}

// Checks the fields a consumer of the JSON report relies on. Empty result = valid.
inline std::vector<std::string> validate_report_json(const nlohmann::json& j) {
    std::vector<std::string> errs;
    auto need_num = [&](const nlohmann::json& obj, const std::string& key, const std::string& where) {
        if (!obj.contains(key) || !obj[key].is_number()) errs.push_back(where + "." + key + " missing or not a number");
        else if (obj[key].get<double>() < 0) errs.push_back(where + "." + key + " is negative");
    };
    if (!j.is_object()) return {"report is not an object"};
    need_num(j, "frames", "report");
    need_num(j, "warmup", "report");
    if (!j.contains("hardware") || !j["hardware"].is_string()) errs.push_back("report.hardware missing");
    if (!j.contains("warnings") || !j["warnings"].is_array()) errs.push_back("report.warnings missing");
    for (const char* stage : {"preproc", "sift", "encode", "snn"}) {
        if (!j.contains("stages") || !j["stages"].contains(stage)) {
            errs.push_back(std::string("report.stages.") + stage + " missing");
            continue;
        }
        for (const char* k : {"median_ms", "mean_ms", "p95_ms"}) need_num(j["stages"][stage], k, std::string("stages.") + stage);
    }
    if (!j.contains("total")) errs.push_back("report.total missing");
    else
        for (const char* k : {"median_ms", "mean_ms", "p95_ms"}) need_num(j["total"], k, "total");
    return errs;
}

}  // namespace spikepin::bench
