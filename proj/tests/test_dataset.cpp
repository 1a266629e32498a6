#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "spikepin/dataset.hpp"

using namespace spikepin;
using namespace spikepin::dataset;

namespace {

double psnr_central(const ImageU8& a, const ImageU8& b, double keep = 0.8) {
    const int mx = static_cast<int>(a.width * (1 - keep) / 2), my = static_cast<int>(a.height * (1 - keep) / 2);
    double se = 0;
    std::size_t n = 0;
    for (int y = my; y < a.height - my; ++y)
        for (int x = mx; x < a.width - mx; ++x) {
            const double d = static_cast<double>(a.at(x, y)) - b.at(x, y);
            se += d * d;
            ++n;
        }
    const double mse = se / static_cast<double>(n);
    return mse == 0 ? 1e9 : 10 * std::log10(255.0 * 255.0 / mse);
}

// Mean inside the pin silhouette minus mean over the rest of the roi, socket excluded.
double pin_contrast(const SceneParams& p, const ImageU8& img) {
    double in = 0, out = 0;
    int n_in = 0, n_out = 0;
    const double socket = p.pin_radius + 3;
    for (int y = p.roi.y0; y < p.roi.y0 + p.roi.height; ++y)
        for (int x = p.roi.x0; x < p.roi.x0 + p.roi.width; ++x) {
            const double sx = (x - p.pin_cx) / socket, sy = (y - p.pin_cy) / (0.55 * socket);
            if (sx * sx + sy * sy <= 1.0) continue;
            if (in_pin_mask(p, x, y)) {
                in += img.at(x, y);
                ++n_in;
            } else {
                out += img.at(x, y);
                ++n_out;
            }
        }
    return in / n_in - out / n_out;
}

SceneParams clean_scene(std::uint64_t seed, bool present) {
    auto p = random_scene(seed, present);
    p.clutter.clear();
    return p;
}

// In-memory manifest with the dataset's grouping: n_ok singletons, n_out spread over `bases` groups.
DatasetManifest synthetic_manifest(std::size_t n_ok, std::size_t n_out, std::size_t bases) {
    DatasetManifest m;
    auto add = [&](const std::string& path, Label label, Provenance prov, const std::string& base) {
        ManifestEntry e;
        e.path = path;
        e.label = label;
        e.provenance = prov;
        e.base_id = base;
        m.entries.push_back(e);
    };
    for (std::size_t i = 0; i < n_ok; ++i) add("ok" + std::to_string(i), Label::PinOk, Provenance::RealLike, "ok" + std::to_string(i));
    for (std::size_t b = 0; b < bases; ++b) {
        const std::size_t group = n_out / bases + (b < n_out % bases ? 1 : 0);
        for (std::size_t a = 0; a < group; ++a)
            add("out" + std::to_string(b) + "-" + std::to_string(a), Label::PinOut, a ? Provenance::Augmented : Provenance::SyntheticBase,
                "out" + std::to_string(b));
    }
    return m;
}

std::size_t in_split(const DatasetManifest& m, Split s) { return m.in_split(s).size(); }

}  // namespace

TEST(Scene, DeterministicAndLabelled) {
    const auto a = generate_scene(random_scene(5, true)), b = generate_scene(random_scene(5, true));
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.label, Label::PinOk);
    EXPECT_EQ(generate_scene(random_scene(5, false)).label, Label::PinOut);
    EXPECT_NE(generate_scene(random_scene(6, true)).image, a.image);
}

TEST(Scene, PinStandsOutFromBackground) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto p = clean_scene(seed, true);
        EXPECT_GE(pin_contrast(p, generate_scene(p).image), 30.0) << seed;
    }
}

TEST(Scene, NoPinMeansNoRidge) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto p = clean_scene(seed, false);
        p.noise_amplitude = 0;
        EXPECT_LT(std::abs(pin_contrast(p, generate_scene(p).image)), 15.0) << seed;
    }
}

TEST(Scene, ClutterNeverTouchesThePin) {
    int with_clutter = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed)
        for (bool present : {true, false}) {
            const auto p = random_scene(seed, present);
            EXPECT_NO_THROW(p.validate());
            with_clutter += !p.clutter.empty();
        }
    EXPECT_GT(with_clutter, 120);
    EXPECT_LT(with_clutter, 280);

    auto p = random_scene(1, true);
    const auto b = p.pin_box();
    p.clutter = {ClutterBlock{static_cast<int>(b[0]), static_cast<int>(b[1]), 10, 10, 100}};
    EXPECT_THROW(p.validate(), InvalidInput);
}

TEST(Scene, RejectsBadGeometry) {
    auto p = random_scene(1, true);
    p.pin_length = 200;
    EXPECT_THROW(generate_scene(p), InvalidInput);
    p = random_scene(1, true);
    p.noise_amplitude = 0.6;
    EXPECT_THROW(generate_scene(p), InvalidInput);
    p = random_scene(1, true);
    p.roi = Roi{150, 150, 20, 20};
    EXPECT_THROW(generate_scene(p), InvalidInput);
}

TEST(Augment, DisabledIsIdentity) {
    const auto f = generate_scene(random_scene(3, false));
    const auto g = augment(f, AugmentationSpec{}, 9);
    EXPECT_EQ(g.image, f.image);
    EXPECT_EQ(g.label, f.label);
}

TEST(Augment, NeutralGeometryWithinOneLevel) {
    const auto f = generate_scene(random_scene(3, false));
    AugmentationSpec s;
    s.gamma = 1.0;
    s.rotation_deg = 0.0;
    s.translation = std::array<double, 2>{0, 0};
    const auto g = augment(f, s, 1);
    for (std::size_t i = 0; i < f.image.size(); ++i) ASSERT_LE(std::abs(f.image.data[i] - g.image.data[i]), 1);
}

TEST(Augment, RotationRoundTripPsnr) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = generate_scene(random_scene(seed, seed % 2));
        AugmentationSpec fwd, back;
        fwd.rotation_deg = 10.0;
        back.rotation_deg = -10.0;
        const auto g = augment(augment(f, fwd, 1), back, 2);
        EXPECT_GE(psnr_central(f.image, g.image), 30.0) << seed;
    }
}

TEST(Augment, PreservesLabelAndSize) {
    const auto f = generate_scene(random_scene(4, false));
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto spec = random_augmentation(seed, f.image.width, f.image.height);
        EXPECT_NO_THROW(spec.validate(f.image.width, f.image.height));
        const auto g = augment(f, spec, seed);
        EXPECT_EQ(g.label, Label::PinOut);
        EXPECT_EQ(g.image.width, f.image.width);
        EXPECT_EQ(g.image.height, f.image.height);
        EXPECT_EQ(augment(f, spec, seed).image, g.image);
        const auto j = to_json(spec);
        EXPECT_EQ(to_json(augmentation_from_json(nlohmann::json::parse(j.dump()))).dump(), j.dump());
    }
}

TEST(Augment, RangesAreEnforced) {
    AugmentationSpec s;
    s.rotation_deg = 10.5;
    EXPECT_THROW(s.validate(160, 160), InvalidInput);
    s = {};
    s.gamma = 2.1;
    EXPECT_THROW(s.validate(160, 160), InvalidInput);
    s = {};
    s.occlusion = Occlusion{0, 0, 100, 100, 50};
    EXPECT_THROW(s.validate(160, 160), InvalidInput);
    s = {};
    s.translation = std::array<double, 2>{0, 9};
    EXPECT_THROW(s.validate(160, 160), InvalidInput);
    s = {};
    s.morphology = std::make_pair(MorphOp::Erode, 3);
    EXPECT_THROW(s.validate(160, 160), InvalidInput);
    s = {};
    s.perspective = std::array<double, 8>{0, 0, 0, 0.09, 0, 0, 0, 0};
    EXPECT_THROW(s.validate(160, 160), InvalidInput);
}

TEST(Split, PaperScaleCounts) {
    const auto m = stratified_split(synthetic_manifest(4500, 1500, 120), {}, 7);
    EXPECT_EQ(in_split(m, Split::Train), 4200u);
    EXPECT_EQ(in_split(m, Split::Val), 900u);
    EXPECT_EQ(in_split(m, Split::Test), 900u);
    EXPECT_EQ(m.count(Label::PinOk, Split::Train), 3150u);
    EXPECT_EQ(m.count(Label::PinOut, Split::Train), 1050u);
    EXPECT_EQ(m.count(Label::PinOk, Split::Test), 675u);
    EXPECT_EQ(m.count(Label::PinOut, Split::Test), 225u);
    EXPECT_EQ(m.count(Label::PinOut, Split::Val), 225u);
}

TEST(Split, NoBaseStraddlesSplits) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = stratified_split(synthetic_manifest(450, 150, 12), {}, seed);
        std::map<std::string, Split> seen;
        for (const auto& e : m.entries) {
            EXPECT_NE(e.split, Split::Unassigned);
            auto [it, fresh] = seen.try_emplace(e.base_id, e.split);
            if (!fresh) {
                EXPECT_EQ(it->second, e.split) << e.base_id;
            }
        }
    }
}

TEST(Split, RatiosExactWithinRounding) {
    for (std::size_t n_ok : {20, 37, 100, 451})
        for (std::size_t n_out : {20, 33, 90}) {
            const auto m = stratified_split(synthetic_manifest(n_ok, n_out, n_out), {}, n_ok + n_out);
            for (Label l : {Label::PinOk, Label::PinOut}) {
                const double n = static_cast<double>(m.count(l));
                EXPECT_LE(std::abs(static_cast<double>(m.count(l, Split::Test)) - 0.15 * n), 0.5 + 1e-9);
                EXPECT_LE(std::abs(static_cast<double>(m.count(l, Split::Val)) - 0.15 * n), 0.5 + 1e-9);
            }
        }
}

TEST(Split, EdgeCases) {
    const auto all_train = stratified_split(synthetic_manifest(30, 30, 5), {1, 0, 0}, 1);
    EXPECT_EQ(in_split(all_train, Split::Train), 60u);
    EXPECT_THROW(stratified_split(synthetic_manifest(30, 30, 5), {0.5, 0.5, 0.5}, 1), InvalidInput);
    EXPECT_THROW(stratified_split(synthetic_manifest(3, 3, 3), {}, 1), InvalidInput);
    EXPECT_EQ(manifest_hash(stratified_split(synthetic_manifest(60, 30, 6), {}, 4)),
              manifest_hash(stratified_split(synthetic_manifest(60, 30, 6), {}, 4)));
}

TEST(Manifest, RoundTripIsByteIdentical) {
    auto m = stratified_split(synthetic_manifest(20, 20, 4), {}, 3);
    AugmentationSpec s;
    s.gamma = 0.7;
    s.occlusion = Occlusion{1, 2, 3, 4, 5};
    m.entries.back().augmentation = s;
    const auto text = manifest_to_string(m);
    EXPECT_EQ(manifest_to_string(manifest_from_string(text)), text);
    EXPECT_THROW(manifest_from_string(R"({"path":"a","colour":"red"})"), InvalidInput);
}

TEST(BuildDataset, WritesExactCountsDeterministically) {
    namespace fs = std::filesystem;
    const auto root = fs::temp_directory_path() / "spikepin_test_dataset";
    fs::remove_all(root);
    fs::create_directories(root / "a");
    fs::create_directories(root / "b");
    DatasetParams p;
    p.n_ok = 12;
    p.n_out = 9;
    p.base_out = 3;
    p.seed = 11;
    const auto a = build_dataset(p, root / "a"), b = build_dataset(p, root / "b");
    EXPECT_EQ(a.count(Label::PinOk), 12u);
    EXPECT_EQ(a.count(Label::PinOut), 9u);
    EXPECT_EQ(manifest_hash(a), manifest_hash(b));
    std::set<std::string> bases;
    for (const auto& e : a.entries) {
        EXPECT_EQ(sha256_file(root / "a" / e.path), e.sha256);
        EXPECT_EQ(e.augmentation.has_value(), e.provenance == Provenance::Augmented);
        if (e.label == Label::PinOut) bases.insert(e.base_id);
    }
    EXPECT_EQ(bases.size(), 3u);
    EXPECT_THROW(build_dataset(p, root / "missing"), IoError);
    p.base_out = 0;
    EXPECT_THROW(build_dataset(p, root / "a"), InvalidInput);
    fs::remove_all(root);
}
