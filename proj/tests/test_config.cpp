#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "spikepin/config.hpp"

using namespace spikepin;

#ifndef SPIKEPIN_SOURCE_DIR
#define SPIKEPIN_SOURCE_DIR "."
#endif

TEST(Config, DefaultsMatchPublishedSettings) {
    const RunConfig c;
    EXPECT_EQ(c.network.layer_sizes, (std::vector<int>{12800, 512, 2}));
    EXPECT_EQ(c.network.beta, 0.9);
    EXPECT_EQ(c.network.threshold, 1.0);
    EXPECT_EQ(c.pipeline.encoding.n_steps, 100);
    EXPECT_EQ(c.pipeline.encoding.window_ms, 100.0);
    EXPECT_EQ(c.pipeline.top_n, 100);
    EXPECT_EQ(c.training.lr, 0.001);
    EXPECT_EQ(c.training.lr_decay, 0.95);
    EXPECT_EQ(c.training.batch_size, 64);
    EXPECT_EQ(c.training.epochs, 50);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, EmptyPatchGivesDefaultsAndRoundTrips) {
    const auto c = config_from_json(nlohmann::json::object());
    EXPECT_EQ(to_json(c), to_json(RunConfig{}));
    const auto again = config_from_json(to_json(c));
    EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Config, PatchOverridesAndSyncs) {
    const auto c = config_from_json(nlohmann::json::parse(R"({"seed": 42, "jobs": 3, "training": {"epochs": 5}})"));
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.training.seed, 42u);
    EXPECT_EQ(c.dataset.seed, 42u);
    EXPECT_EQ(c.training.jobs, 3);
    EXPECT_EQ(c.training.epochs, 5);
    EXPECT_EQ(c.training.batch_size, 64);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"sead": 1})")), InvalidInput);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"training": {"learning_rate": 1}})")), InvalidInput);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"training": 3})")), InvalidInput);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"training": {"epochs": "ten"}})")), InvalidInput);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"network": {"beta": 1.5}})")), InvalidInput);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"sift": {"top_n": 50}})")), InvalidInput);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"dataset": {"roi": [150, 150, 16, 16]}})")), InvalidInput);
}

TEST(Config, ShippedDeskConfigLoads) {
    const auto c = load_config(std::filesystem::path(SPIKEPIN_SOURCE_DIR) / "configs" / "desk.json");
    EXPECT_EQ(c.network.layer_sizes.front(), 12800);
    EXPECT_EQ(c.training.epochs, 50);
}

TEST(Config, FileErrors) {
    EXPECT_THROW(load_config("/nonexistent/spikepin.json"), IoError);
    const auto p = std::filesystem::temp_directory_path() / "spikepin_bad_config.json";
    std::ofstream(p) << "{ not json";
    EXPECT_THROW(load_config(p), InvalidInput);
    std::filesystem::remove(p);
}
