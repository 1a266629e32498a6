#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>
#include <sstream>

#include "spikepin/sift.hpp"
#include "support.hpp"

using namespace spikepin;
using namespace spikepin::sift;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kBinWidth = kTwoPi / 36;

ImageF32 blob_image(int size, double cx, double cy, double sigma, double amp = 1.0) {
    ImageF32 img(size, size, 0.0f);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            img.at(x, y) = static_cast<float>(amp * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma)));
    return img;
}

double angle_diff(double a, double b) { return std::abs(std::remainder(a - b, kTwoPi)); }

// Keypoint at the centre of octave 0, level 1, for driving orientation/descriptor code directly.
Keypoint centre_keypoint(const ScaleSpace& space, int size) {
    Keypoint k;
    k.octave = 0;
    k.layer = 1;
    k.ox = k.x = size / 2.0f;
    k.oy = k.y = size / 2.0f;
    k.octave_sigma = k.scale = static_cast<float>(space.sigma(0, 1));
    return k;
}

}  // namespace

TEST(ScaleSpace, LevelCountsAndOctaveSizes) {
    const auto space = build_scale_space(blob_image(128, 64, 64, 5));
    ASSERT_EQ(space.octaves(), 5);  // 128, 64, 32, 16, 8
    for (int o = 0; o < space.octaves(); ++o) {
        EXPECT_EQ(space.gaussians[o].size(), 6u);
        EXPECT_EQ(space.dog[o].size(), 5u);
        EXPECT_EQ(space.gaussians[o][0].width, 128 >> o);
        EXPECT_GE(space.gaussians[o][0].width, 8);
    }
    EXPECT_NEAR(space.sigma(0, 0), 1.6, 1e-12);
    EXPECT_NEAR(space.sigma(1, 3), 1.6 * 4, 1e-12);
    EXPECT_NEAR(space.sigma(2, 1), 1.6 * std::pow(2.0, 2 + 1.0 / 3), 1e-12);
}

TEST(ScaleSpace, ConstantImageHasZeroDog) {
    const auto space = build_scale_space(ImageF32(64, 48, 0.7f));
    for (const auto& oct : space.dog)
        for (const auto& d : oct)
            for (float v : d.data) ASSERT_NEAR(v, 0.0f, 1e-6f);
    EXPECT_THROW(build_scale_space(ImageF32(31, 64, 0.f)), InvalidInput);
}

TEST(ScaleSpace, DogPeaksNearBlobScale) {
    // Brute force: |DoG| at the blob centre over every octave and level.
    for (double sigma_b : {3.0, 5.0, 8.0}) {
        const auto space = build_scale_space(blob_image(128, 64, 64, sigma_b));
        double best = 0, best_sigma = 0;
        for (int o = 0; o < space.octaves(); ++o)
            for (int i = 0; i < static_cast<int>(space.dog[o].size()); ++i) {
                const auto& d = space.dog[o][i];
                const double v = std::abs(d.at(d.width / 2, d.height / 2));
                if (v > best) {
                    best = v;
                    best_sigma = space.sigma(o, i + 0.5);
                }
            }
        EXPECT_LT(std::abs(std::log2(best_sigma / sigma_b)), 0.5) << "blob sigma " << sigma_b << " peaked at " << best_sigma;
    }
}

TEST(Detect, FlatImageHasNoKeypoints) {
    EXPECT_TRUE(extract(ImageF32(64, 64, 0.3f)).keypoints.empty());
}

TEST(Detect, BlobFoundAtItsCentre) {
    const auto ex = extract(blob_image(64, 30.0, 35.0, 4.0));
    ASSERT_FALSE(ex.keypoints.empty());
    double nearest = 1e9;
    for (const auto& k : ex.keypoints) nearest = std::min(nearest, std::hypot(k.x - 30.0, k.y - 35.0));
    EXPECT_LE(nearest, 2.0);
    for (const auto& k : ex.keypoints) {
        EXPECT_GE(k.x, 0);
        EXPECT_LT(k.x, 64);
        EXPECT_GE(k.y, 0);
        EXPECT_LT(k.y, 64);
        EXPECT_GE(std::abs(k.response), SiftConfig{}.contrast_threshold);
        EXPECT_GE(k.orientation, 0);
        EXPECT_LT(k.orientation, kTwoPi);
    }
}

TEST(Detect, StepEdgeRejected) {
    for (bool vertical : {true, false}) {
        ImageF32 img(64, 64, 0.0f);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) img.at(x, y) = (vertical ? x : y) >= 32 ? 1.0f : 0.0f;
        EXPECT_TRUE(extract(img).keypoints.empty()) << (vertical ? "vertical" : "horizontal");
    }
}

TEST(Detect, ContrastThresholdScalesWithInputRange) {
    const auto a = extract(blob_image(64, 32, 32, 4, 1.0));
    const auto b = extract(blob_image(64, 32, 32, 4, 50.0));
    ASSERT_EQ(a.keypoints.size(), b.keypoints.size());
    for (std::size_t i = 0; i < a.keypoints.size(); ++i) EXPECT_NEAR(a.keypoints[i].response, b.keypoints[i].response, 1e-4);
}

TEST(Orientation, RampPointsAlongGradient) {
    constexpr int n = 64;
    ImageF32 ramp(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) ramp.at(x, y) = static_cast<float>(x) / n;
    const auto space = build_scale_space(ramp);
    const auto kps = assign_orientation(centre_keypoint(space, n), space);
    ASSERT_EQ(kps.size(), 1u);
    EXPECT_LT(angle_diff(kps[0].orientation, 0.0), kBinWidth);

    // rotate90 maps the +x gradient to -y, i.e. 3pi/2 in image coordinates.
    const auto rspace = build_scale_space(fixtures::rotate90(ramp));
    const auto rkps = assign_orientation(centre_keypoint(rspace, n), rspace);
    ASSERT_EQ(rkps.size(), 1u);
    EXPECT_LT(angle_diff(rkps[0].orientation, kps[0].orientation + 1.5 * std::numbers::pi), kBinWidth);
}

TEST(Orientation, TwoOrthogonalPopulationsGiveTwoKeypoints) {
    constexpr int n = 64;
    ImageF32 img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) img.at(x, y) = static_cast<float>(std::max(x - n / 2, y - n / 2)) / n;
    const auto space = build_scale_space(img);
    const auto kps = assign_orientation(centre_keypoint(space, n), space);
    ASSERT_EQ(kps.size(), 2u);
    std::vector<double> got{kps[0].orientation, kps[1].orientation};
    std::sort(got.begin(), got.end());
    EXPECT_LT(angle_diff(got[0], 0.0), kBinWidth);
    EXPECT_LT(angle_diff(got[1], 0.5 * std::numbers::pi), kBinWidth);
}

TEST(Descriptor, FlatPatchIsZero) {
    const auto space = build_scale_space(ImageF32(64, 64, 0.5f));
    const auto d = compute_descriptor(centre_keypoint(space, 64), space);
    for (float v : d) EXPECT_EQ(v, 0.0f);
}

TEST(Descriptor, UnitNormNonNegative) {
    const auto img = fixtures::render_blobs(fixtures::random_blobs(11), 96);
    const auto ex = extract(img);
    ASSERT_GT(ex.descriptors.size(), 5u);
    for (const auto& d : ex.descriptors) {
        double s = 0;
        for (float v : d) {
            EXPECT_GE(v, 0.0f);
            s += static_cast<double>(v) * v;
        }
        EXPECT_NEAR(std::sqrt(s), 1.0, 1e-4);
    }
}

TEST(Descriptor, ClampFlattensConcentratedGradients) {
    // A ramp puts every gradient in one orientation bin; without the 0.2 clamp
    // the descriptor would be dominated by a handful of entries near 0.5.
    constexpr int n = 64;
    ImageF32 ramp(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) ramp.at(x, y) = static_cast<float>(x) / n;
    const auto space = build_scale_space(ramp);
    auto k = centre_keypoint(space, n);
    k.orientation = 0;
    const auto d = compute_descriptor(k, space);
    const float mx = *std::max_element(d.begin(), d.end());
    EXPECT_LT(mx, 0.3f);
    EXPECT_GE(std::count_if(d.begin(), d.end(), [&](float v) { return v > mx - 1e-6f; }), 2);
}

TEST(Descriptor, RotatedTwinsStayClose) {
    const auto img = fixtures::render_blobs(fixtures::random_blobs(3), 128);
    const auto a = extract(img), b = extract(fixtures::rotate90(img));
    int pairs = 0;
    for (std::size_t i = 0; i < a.keypoints.size(); ++i) {
        const double ex = a.keypoints[i].y, ey = img.width - 1 - a.keypoints[i].x;
        for (std::size_t j = 0; j < b.keypoints.size(); ++j) {
            const auto& q = b.keypoints[j];
            if (std::hypot(q.x - ex, q.y - ey) > 1.0) continue;
            if (angle_diff(q.orientation, a.keypoints[i].orientation + 1.5 * std::numbers::pi) > 0.2) continue;
            ++pairs;
            EXPECT_LT(fixtures::descriptor_distance(a.descriptors[i], b.descriptors[j]), 0.45);
        }
    }
    EXPECT_GE(pairs, 5);
}

TEST(SelectTopN, EmptyInputIsAllPadding) {
    const auto f = select_top_n({}, {}, 100);
    EXPECT_EQ(f.flat.size(), 12800u);
    EXPECT_TRUE(std::all_of(f.flat.begin(), f.flat.end(), [](float v) { return v == 0.0f; }));
    EXPECT_TRUE(std::all_of(f.pad_mask.begin(), f.pad_mask.end(), [](auto m) { return m == 0; }));
}

TEST(SelectTopN, MatchesBruteForceOracle) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<float> pos(0, 127), resp(-1, 1);
    for (std::size_t count : {0u, 7u, 100u, 150u}) {
        std::vector<Keypoint> kps(count);
        std::vector<Descriptor> descs(count);
        for (std::size_t i = 0; i < count; ++i) {
            kps[i].x = pos(rng);
            kps[i].y = pos(rng);
            kps[i].response = resp(rng);
            descs[i].fill(static_cast<float>(i + 1));  // tags each descriptor with its keypoint
        }
        const auto f = select_top_n(kps, descs, 100);
        ASSERT_EQ(f.flat.size(), 12800u);
        const std::size_t kept = std::min<std::size_t>(count, 100);
        ASSERT_EQ(f.keypoints.size(), kept);

        // Oracle: rank all magnitudes, the kept set is exactly the top `kept`.
        std::vector<float> mags;
        for (const auto& k : kps) mags.push_back(std::abs(k.response));
        std::sort(mags.begin(), mags.end(), std::greater<>());
        float min_kept = 1e9f;
        for (const auto& k : f.keypoints) min_kept = std::min(min_kept, std::abs(k.response));
        if (count > kept) {
            EXPECT_GE(min_kept, mags[kept]);
        }

        for (std::size_t s = 0; s < 100; ++s) {
            const auto d = f.descriptor(static_cast<int>(s));
            if (s < kept) {
                ASSERT_EQ(f.pad_mask[s], 1);
                // Layout: slot s holds the descriptor of the s-th keypoint in (y, x) order.
                const auto& k = f.keypoints[s];
                const auto src = std::find_if(kps.begin(), kps.end(), [&](const Keypoint& q) { return q.x == k.x && q.y == k.y; });
                ASSERT_NE(src, kps.end());
                EXPECT_EQ(d[0], static_cast<float>(src - kps.begin() + 1));
                if (s > 0) {
                    const auto& p = f.keypoints[s - 1];
                    EXPECT_TRUE(std::lround(p.y) < std::lround(k.y) || (std::lround(p.y) == std::lround(k.y) && std::lround(p.x) <= std::lround(k.x)));
                }
            } else {
                ASSERT_EQ(f.pad_mask[s], 0);
                EXPECT_TRUE(std::all_of(d.begin(), d.end(), [](float v) { return v == 0.0f; }));
            }
        }
    }
}

TEST(SelectTopN, TiesPreferEarlierPixel) {
    std::vector<Keypoint> kps(3);
    kps[0].x = 10, kps[0].y = 20, kps[0].response = 0.5f;
    kps[1].x = 10, kps[1].y = 5, kps[1].response = -0.5f;
    kps[2].x = 3, kps[2].y = 40, kps[2].response = 0.9f;
    std::vector<Descriptor> descs(3);
    const auto f = select_top_n(kps, descs, 2);
    ASSERT_EQ(f.keypoints.size(), 2u);
    EXPECT_EQ(f.keypoints[0].y, 5);  // the tie at |0.5| goes to y=5, then spatial order
    EXPECT_EQ(f.keypoints[1].y, 40);
}

TEST(Sift, DeterministicFeatures) {
    const auto img = fixtures::render_blobs(fixtures::random_blobs(2), 128);
    EXPECT_EQ(extract_features(img).flat, extract_features(img).flat);
}

TEST(Sift, RotationMatching) {
    for (std::uint32_t seed = 1; seed <= 5; ++seed) {
        const auto st = fixtures::rotation_matching(fixtures::render_blobs(fixtures::random_blobs(seed), 128));
        EXPECT_GE(st.matches, 8) << "seed " << seed;
        EXPECT_GE(st.rate(), 0.8) << "seed " << seed << ": " << st.correct << "/" << st.matches;
    }
}

TEST(Sift, OctaveShiftUnderDoubling) {
    for (std::uint32_t seed = 1; seed <= 5; ++seed) {
        const auto st = fixtures::octave_shift(fixtures::random_blobs(seed), 128);
        EXPECT_GE(st.matched, 8) << "seed " << seed;
        EXPECT_GE(st.rate(), 0.7) << "seed " << seed << ": " << st.shifted << "/" << st.matched;
    }
}

TEST(Sift, DebugOutputs) {
    std::vector<Keypoint> kps(1);
    kps[0].x = 8, kps[0].y = 8, kps[0].scale = 3;
    std::ostringstream os;
    write_keypoints_csv(os, kps);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "x,y,scale,orientation,response");
    const auto rgb = draw_keypoints(ImageU8(16, 16, 100), kps);
    const std::size_t p = 3 * (8 * 16 + 11);  // on the circle, radius 3 to the right
    EXPECT_EQ(rgb.data[p], 255);
    EXPECT_EQ(rgb.data[p + 1], 0);
    EXPECT_EQ(rgb.data[0], 100);
}
