// spikepin: gen-data | train | eval | bench | infer
//
// Exit codes: 0 ok, 2 config/input error, 3 I/O error, 4 training divergence.
// SPIKEPIN_LOG sets the log level (trace, debug, info, warn, error, off).

#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "spikepin/bench.hpp"
#include "spikepin/checkpoint.hpp"
#include "spikepin/config.hpp"
#include "spikepin/dataset.hpp"
#include "spikepin/hash.hpp"
#include "spikepin/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace spikepin;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string out;
    std::string manifest;
    std::string checkpoint;
    std::string input;
    std::string split = "test";
    std::optional<int> epochs;
    std::vector<int> roi;
    bool allow_split_mismatch = false;
};

RunConfig resolve_config(const Options& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.epochs) c.training.epochs = *o.epochs;
    c.sync();
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    io::write_bytes(path, text.data(), text.size());
}

void require_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("output directory '" + dir.string() + "' does not exist");
}

fs::path manifest_path(const Options& o, const RunConfig& c) {
    return o.manifest.empty() ? fs::path(c.data_dir) / "manifest.jsonl" : fs::path(o.manifest);
}

// Provenance block shared by every output artifact.
json provenance(const RunConfig& c, const json& inputs) {
    return json{{"config", to_json(c)}, {"seed", c.seed}, {"inputs", inputs}};
}

int cmd_gen_data(const Options& o) {
    const auto cfg = resolve_config(o);
    const fs::path out = o.out.empty() ? fs::path(cfg.data_dir) : fs::path(o.out);
    require_dir(out);
    spdlog::info("rendering {} PinOk + {} PinOut frames into {}", cfg.dataset.n_ok, cfg.dataset.n_out, out.string());
    auto m = dataset::build_dataset(cfg.dataset, out);
    m = dataset::stratified_split(std::move(m), cfg.split, cfg.seed);
    const fs::path mpath = out / "manifest.jsonl";
    dataset::write_manifest(mpath, m);
    json meta = provenance(cfg, json::object());
    meta["manifest_sha256"] = dataset::manifest_hash(m);
    meta["counts"] = json::object();
    for (auto s : {dataset::Split::Train, dataset::Split::Val, dataset::Split::Test})
        meta["counts"][dataset::to_string(s)] = {{"PinOk", m.count(Label::PinOk, s)}, {"PinOut", m.count(Label::PinOut, s)}};
    write_text(out / "dataset.json", meta.dump(2) + "\n");
    spdlog::info("train/val/test = {}/{}/{}", m.in_split(dataset::Split::Train).size(), m.in_split(dataset::Split::Val).size(),
                 m.in_split(dataset::Split::Test).size());
    std::cout << mpath.string() << '\n';
    return 0;
}

int cmd_train(const Options& o) {
    const auto cfg = resolve_config(o);
    const fs::path out = o.out.empty() ? fs::path(cfg.out_dir) : fs::path(o.out);
    require_dir(out);
    const fs::path mpath = manifest_path(o, cfg);
    const auto m = dataset::read_manifest(mpath);
    const auto train_entries = m.in_split(dataset::Split::Train);
    const auto val_entries = m.in_split(dataset::Split::Val);
    if (train_entries.empty()) throw InvalidInput("manifest '" + mpath.string() + "' has no train split");

    spdlog::info("encoding {} train + {} val frames", train_entries.size(), val_entries.size());
    const auto root = mpath.parent_path();
    const auto train_set = load_samples(root, train_entries, cfg.pipeline, cfg.jobs);
    const auto val_set = load_samples(root, val_entries, cfg.pipeline, cfg.jobs);

    const auto init = make_network<float>(cfg.network, cfg.seed);
    std::ostringstream csv;
    csv << "epoch,lr,train_loss,train_accuracy,val_loss,val_accuracy,seconds\n";
    const auto result = train<float>(train_set, val_set, init, cfg.training, [&](const EpochReport& r) {
        csv << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss << ',' << r.val_accuracy
            << ',' << r.seconds << '\n';
        spdlog::info("epoch {:>3}  loss {:.4f}  acc {:.3f}  val {:.4f}/{:.3f}  {:.1f}s", r.epoch, r.train_loss, r.train_accuracy,
                     r.val_loss, r.val_accuracy, r.seconds);
    });

    const std::string manifest_sha = dataset::manifest_hash(m);
    json meta = provenance(cfg, {{"manifest_sha256", manifest_sha}});
    meta["best_epoch"] = result.best_epoch;
    const fs::path ckpt = out / "checkpoint.spkp";
    save_checkpoint(ckpt, result.best, meta);
    write_text(out / "epochs.csv", csv.str());

    json summary = provenance(cfg, {{"manifest_sha256", manifest_sha}});
    summary["best_epoch"] = result.best_epoch;
    summary["checkpoint_sha256"] = sha256_file(ckpt);
    summary["model_sha256"] = load_checkpoint(ckpt).payload_sha256;
    summary["epochs"] = json::array();
    double seconds = 0;
    for (const auto& r : result.reports) {
        summary["epochs"].push_back({{"epoch", r.epoch},
                                     {"lr", r.lr},
                                     {"train_loss", r.train_loss},
                                     {"train_accuracy", r.train_accuracy},
                                     {"val_loss", r.val_loss},
                                     {"val_accuracy", r.val_accuracy}});
        seconds += r.seconds;
    }
    summary["train_seconds"] = seconds;
    write_text(out / "run_summary.json", summary.dump(2) + "\n");
    spdlog::info("best epoch {}; checkpoint {}", result.best_epoch, ckpt.string());
    std::cout << ckpt.string() << '\n';
    return 0;
}

Checkpoint load_compatible(const Options& o, const RunConfig& cfg) {
    if (o.checkpoint.empty()) throw InvalidInput("--checkpoint is required");
    auto ck = load_checkpoint(o.checkpoint);
    check_compatible(cfg.pipeline, ck.network);
    return ck;
}

int cmd_eval(const Options& o) {
    const auto cfg = resolve_config(o);
    const fs::path out = o.out.empty() ? fs::path(cfg.out_dir) : fs::path(o.out);
    require_dir(out);
    const auto split = dataset::split_from_string(o.split);
    if (split != dataset::Split::Test && !o.allow_split_mismatch)
        throw InvalidInput("refusing to evaluate on the '" + o.split + "' split; pass --allow-split-mismatch to override");
    const auto ck = load_compatible(o, cfg);
    const fs::path mpath = manifest_path(o, cfg);
    const auto m = dataset::read_manifest(mpath);
    const auto entries = m.in_split(split);
    if (entries.empty()) throw InvalidInput("manifest '" + mpath.string() + "' has no '" + o.split + "' split");
    const auto samples = load_samples(mpath.parent_path(), entries, cfg.pipeline, cfg.jobs);
    const auto rep = evaluate(samples, ck.network, cfg.jobs);

    json j = provenance(cfg, {{"manifest_sha256", dataset::manifest_hash(m)}, {"model_sha256", ck.payload_sha256}});
    j["split"] = o.split;
    j["report"] = to_json(rep);
    write_text(out / "eval_report.json", j.dump(2) + "\n");
    std::ostringstream csv;
    csv << "threshold,precision,recall\n";
    for (const auto& p : rep.pr.points) csv << p.threshold << ',' << p.precision << ',' << p.recall << '\n';
    write_text(out / "pr_curve.csv", csv.str());
    spdlog::info("{} frames: accuracy {:.4f}, recall(PinOut) {:.4f}, precision(PinOut) {:.4f}", samples.size(), rep.metrics.accuracy,
                 rep.metrics.out.recall, rep.metrics.out.precision);
    std::cout << (out / "eval_report.json").string() << '\n';
    return 0;
}

int cmd_bench(const Options& o) {
    const auto cfg = resolve_config(o);
    const fs::path out = o.out.empty() ? fs::path(cfg.out_dir) : fs::path(o.out);
    require_dir(out);
    const auto ck = load_compatible(o, cfg);
    const fs::path mpath = manifest_path(o, cfg);
    const auto m = dataset::read_manifest(mpath);
    // Test frames first, topped up from the other splits when the test split is small.
    std::vector<const dataset::ManifestEntry*> entries = m.in_split(dataset::Split::Test);
    for (auto s : {dataset::Split::Val, dataset::Split::Train})
        for (const auto* e : m.in_split(s)) entries.push_back(e);
    if (entries.size() > static_cast<std::size_t>(cfg.bench_frames)) entries.resize(static_cast<std::size_t>(cfg.bench_frames));
    std::vector<bench::Frame> frames;
    for (const auto* e : entries) frames.push_back({load_entry_image(mpath.parent_path(), *e), e->roi});
    const auto rep = bench::bench_latency(frames, cfg.pipeline, ck.network, cfg.bench_warmup);
    for (const auto& w : rep.warnings) spdlog::warn("{}", w);

    json j = provenance(cfg, {{"manifest_sha256", dataset::manifest_hash(m)}, {"model_sha256", ck.payload_sha256}});
    const auto report = bench::to_json(rep);
    for (const auto& [k, v] : report.items()) j[k] = v;
    write_text(out / "bench.json", j.dump(2) + "\n");
    std::ofstream csv(out / "bench.csv");
    if (!csv) throw IoError("cannot write '" + (out / "bench.csv").string() + "'");
    bench::write_csv(csv, rep);
    spdlog::info("median total {:.2f} ms over {} frames", rep.total.median, frames.size());
    std::cout << (out / "bench.json").string() << '\n';
    return 0;
}

int cmd_infer(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto ck = load_compatible(o, cfg);
    if (o.input.empty()) throw InvalidInput("--input is required");
    const auto img = io::read_gray(o.input);
    Roi roi = cfg.dataset.roi;
    if (!o.roi.empty()) {
        if (o.roi.size() != 4) throw InvalidInput("--roi takes x0 y0 width height");
        roi = Roi{o.roi[0], o.roi[1], o.roi[2], o.roi[3]};
    }
    const auto r = run_frame(img, roi, cfg.pipeline, ck.network);
    const json j{{"label", to_string(r.prediction.label)},
                 {"counts", {{"PinOk", r.prediction.count_ok}, {"PinOut", r.prediction.count_out}}},
                 {"score", r.prediction.score}};
    std::cout << j.dump() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    auto logger = spdlog::stderr_color_mt("spikepin");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
    if (const char* lvl = std::getenv("SPIKEPIN_LOG")) spdlog::cfg::helpers::load_levels(lvl);

    CLI::App app{"SIFT + spiking network pin-state classifier"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Override the config seed");
        sub->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    };
    auto* gen = app.add_subcommand("gen-data", "Render the procedural dataset and its manifest");
    common(gen);
    gen->add_option("--out", o.out, "Existing output directory (default: paths.data_dir)");

    auto* tr = app.add_subcommand("train", "Train the network on the manifest's train split");
    common(tr);
    tr->add_option("--manifest", o.manifest, "Dataset manifest (default: <data_dir>/manifest.jsonl)");
    tr->add_option("--out", o.out, "Existing run directory (default: paths.out_dir)");
    tr->add_option("--epochs", o.epochs, "Override the epoch count")->check(CLI::NonNegativeNumber);

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    common(ev);
    ev->add_option("--manifest", o.manifest, "Dataset manifest");
    ev->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
    ev->add_option("--out", o.out, "Existing report directory (default: paths.out_dir)");
    ev->add_option("--split", o.split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_flag("--allow-split-mismatch", o.allow_split_mismatch, "Allow evaluating on a non-test split");

    auto* be = app.add_subcommand("bench", "Per-stage single-threaded latency benchmark");
    common(be);
    be->add_option("--manifest", o.manifest, "Dataset manifest");
    be->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
    be->add_option("--out", o.out, "Existing report directory (default: paths.out_dir)");

    auto* in = app.add_subcommand("infer", "Classify one image and print JSON");
    common(in);
    in->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
    in->add_option("--input", o.input, "PNG or PGM image")->required();
    in->add_option("--roi", o.roi, "x0 y0 width height (default: config roi)")->expected(4);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o);
        if (tr->parsed()) return cmd_train(o);
        if (ev->parsed()) return cmd_eval(o);
        if (be->parsed()) return cmd_bench(o);
        return cmd_infer(o);
    } catch (const IoError& e) {
        spdlog::error("{}", e.what());
        return 3;
    } catch (const DivergenceError& e) {
        spdlog::error("{}", e.what());
        return 4;
    } catch (const InvalidInput& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const BoundsError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
