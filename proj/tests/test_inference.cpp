#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "voxseg/inference.hpp"

using namespace voxseg;

namespace {

UNetParams<float> random_net(Shape3 patch, int num_classes, std::uint64_t seed) {
    UNetConfig cfg;
    cfg.in_channels = 1;
    cfg.num_classes = num_classes;
    cfg.levels = 1;
    cfg.base_channels = 2;
    cfg.patch = patch;
    return init_params<float>(cfg, seed);
}

ScalarVolume random_volume(Shape3 shape, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<float> vals(shape.voxels());
    for (auto& v : vals)
        v = float(dist(rng));
    return ScalarVolume(shape, vals);
}

} // namespace

TEST(AxisTiles, StrideMultiplesWithFlushFinalTile) {
    EXPECT_EQ(detail::axis_tiles(48, 32, 16), (std::vector<std::uint32_t>{0, 16}));
    EXPECT_EQ(detail::axis_tiles(40, 32, 16), (std::vector<std::uint32_t>{0, 8}));
    EXPECT_EQ(detail::axis_tiles(32, 32, 16), (std::vector<std::uint32_t>{0}));
    EXPECT_EQ(detail::axis_tiles(64, 32, 16), (std::vector<std::uint32_t>{0, 16, 32}));
    EXPECT_EQ(detail::axis_tiles(33, 32, 16), (std::vector<std::uint32_t>{0, 1}));
}

TEST(PlanTiles, CartesianCornersAndExactCoverage) {
    TilingPlan plan = plan_tiles(Shape3{48, 40, 32}, cube(32), cube(16));
    // axes: {0,16} x {0,8} x {0} -> 4 corners
    ASSERT_EQ(plan.corners.size(), 4u);
    EXPECT_EQ(plan.corners[0], (std::array<std::uint32_t, 3>{0, 0, 0}));
    EXPECT_EQ(plan.corners[3], (std::array<std::uint32_t, 3>{16, 8, 0}));

    // coverage equals brute-force tile membership, and no voxel is missed
    const Shape3& v = plan.volume;
    for (std::uint32_t z = 0; z < v.nz; ++z)
        for (std::uint32_t y = 0; y < v.ny; ++y)
            for (std::uint32_t x = 0; x < v.nx; ++x) {
                std::uint32_t n = 0;
                for (const auto& c : plan.corners) {
                    const bool inside = x >= c[0] && x < c[0] + 32 && y >= c[1] &&
                                        y < c[1] + 32 && z >= c[2] && z < c[2] + 32;
                    n += inside;
                }
                ASSERT_GE(n, 1u);
                ASSERT_EQ(plan.coverage[v.index(x, y, z)], n);
            }
}

TEST(PlanTiles, RejectsBadGeometry) {
    EXPECT_THROW(plan_tiles(cube(32), cube(32), Shape3{0, 1, 1}), std::invalid_argument);
    EXPECT_THROW(plan_tiles(cube(32), cube(16), cube(17)), std::invalid_argument);
    EXPECT_THROW(plan_tiles(cube(16), cube(32), cube(16)), std::invalid_argument);
}

TEST(PredictVolume, SingleTileEqualsDirectForwardPass) {
    const Shape3 patch = cube(8);
    UNetParams<float> net = random_net(patch, 3, 31);
    ScalarVolume image = random_volume(patch, 32);

    TilingPlan plan = plan_tiles(patch, patch, cube(4));
    ASSERT_EQ(plan.corners.size(), 1u);
    ProbabilityMap stitched = predict_volume(net, image, plan);

    Tensor5<float> input = Tensor5<float>::zeros(1, 1, patch);
    load_crop(input, 0, 0, image, {0, 0, 0});
    Tensor5<float> probs = softmax_channels(unet_forward(net, input));

    for (int c = 0; c < 3; ++c)
        for (std::uint32_t x = 0; x < 8; ++x)
            for (std::uint32_t y = 0; y < 8; ++y)
                for (std::uint32_t z = 0; z < 8; ++z)
                    ASSERT_EQ(stitched.at(c, x, y, z), probs.at(0, c, x, y, z));
}

TEST(PredictVolume, FullyOverlappingTilesAverageToTheSameAnswer) {
    const Shape3 patch = cube(8);
    UNetParams<float> net = random_net(patch, 2, 41);
    ScalarVolume image = random_volume(patch, 42);

    TilingPlan once = plan_tiles(patch, patch, cube(4));
    TilingPlan twice = once;
    twice.corners.push_back({0, 0, 0});
    for (auto& c : twice.coverage)
        c = 2;

    ProbabilityMap a = predict_volume(net, image, once);
    ProbabilityMap b = predict_volume(net, image, twice);
    EXPECT_EQ(a.values, b.values);
}

TEST(PredictVolume, StitchedProbabilitiesSumToOne) {
    const Shape3 patch = cube(16);
    UNetParams<float> net = random_net(patch, 3, 51);
    ScalarVolume image = random_volume(Shape3{24, 24, 16}, 52);

    ProbabilityMap probs = predict_volume(net, image, plan_tiles(image.shape, patch, cube(8)));
    const std::size_t voxels = image.shape.voxels();
    for (std::size_t v = 0; v < voxels; ++v) {
        double sum = 0.0;
        for (int c = 0; c < 3; ++c)
            sum += double(probs.values[std::size_t(c) * voxels + v]);
        ASSERT_NEAR(sum, 1.0, 1e-5);
    }
}

TEST(PredictVolume, DefaultStrideIsHalfThePatch) {
    const Shape3 patch = cube(8);
    UNetParams<float> net = random_net(patch, 2, 61);
    ScalarVolume image = random_volume(Shape3{12, 8, 8}, 62);
    ProbabilityMap a = predict_volume(net, image);
    ProbabilityMap b = predict_volume(net, image, plan_tiles(image.shape, patch, cube(4)));
    EXPECT_EQ(a.values, b.values);
}

TEST(PredictVolume, RejectsMismatchedPlans) {
    const Shape3 patch = cube(8);
    UNetParams<float> net = random_net(patch, 2, 71);
    ScalarVolume image = random_volume(cube(16), 72);
    TilingPlan plan = plan_tiles(cube(16), cube(16), cube(8)); // wrong patch
    EXPECT_THROW(predict_volume(net, image, plan), std::invalid_argument);
    TilingPlan plan2 = plan_tiles(cube(24), patch, cube(4)); // wrong volume
    EXPECT_THROW(predict_volume(net, image, plan2), std::invalid_argument);
}

TEST(ArgmaxLabels, PicksTheMostProbableClass) {
    ProbabilityMap p = ProbabilityMap::zeros(cube(1), 3);
    p.values = {0.1f, 0.7f, 0.2f};
    LabelVolume l = argmax_labels(p);
    EXPECT_EQ(l.labels[0], 1);
    EXPECT_EQ(l.num_classes, 3);
}

TEST(ArgmaxLabels, TiesGoToTheLowestClassIndex) {
    ProbabilityMap p = ProbabilityMap::zeros(cube(1), 4);
    p.values = {0.25f, 0.25f, 0.25f, 0.25f};
    EXPECT_EQ(argmax_labels(p).labels[0], 0);
    p.values = {0.1f, 0.45f, 0.45f, 0.0f};
    EXPECT_EQ(argmax_labels(p).labels[0], 1);
}

TEST(ArgmaxLabels, InvertsOneHotProbabilities) {
    std::mt19937_64 rng(81);
    std::uniform_int_distribution<int> dist(0, 4);
    const Shape3 shape = cube(4);
    std::vector<std::uint8_t> labels(shape.voxels());
    for (auto& l : labels)
        l = std::uint8_t(dist(rng));
    LabelVolume truth(shape, labels, 5);
    ProbabilityMap p = ProbabilityMap::zeros(shape, 5);
    for (std::size_t v = 0; v < shape.voxels(); ++v)
        p.values[std::size_t(labels[v]) * shape.voxels() + v] = 1.0f;
    LabelVolume back = argmax_labels(p);
    EXPECT_EQ(back.labels, truth.labels);
}

TEST(DownsampleScalar, BlockMeanOnExactBlocks) {
    ScalarVolume constant = ScalarVolume::filled(cube(8), 0.625f);
    ScalarVolume down = downsample(constant, 4);
    EXPECT_TRUE(down.shape == cube(2));
    for (float v : down.values)
        EXPECT_EQ(v, 0.625f);

    std::vector<float> vals(64);
    for (std::size_t i = 0; i < 64; ++i)
        vals[i] = float(i);
    ScalarVolume counted(cube(4), vals);
    ScalarVolume one = downsample(counted, 4);
    ASSERT_EQ(one.values.size(), 1u);
    EXPECT_EQ(one.values[0], 31.5f);
}

TEST(DownsampleScalar, PartialBlocksAverageActualMembers) {
    const Shape3 shape = cube(5);
    std::vector<float> vals(shape.voxels());
    for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = float(i);
    ScalarVolume vol(shape, vals);
    ScalarVolume down = downsample(vol, 4);
    ASSERT_TRUE(down.shape == cube(2));

    // oracle: plain mean over whatever the block actually contains
    for (std::uint32_t z = 0; z < 2; ++z)
        for (std::uint32_t y = 0; y < 2; ++y)
            for (std::uint32_t x = 0; x < 2; ++x) {
                double sum = 0.0;
                int n = 0;
                for (std::uint32_t zz = 4 * z; zz < std::min(5u, 4 * z + 4); ++zz)
                    for (std::uint32_t yy = 4 * y; yy < std::min(5u, 4 * y + 4); ++yy)
                        for (std::uint32_t xx = 4 * x; xx < std::min(5u, 4 * x + 4); ++xx) {
                            sum += vol.at(xx, yy, zz);
                            ++n;
                        }
                EXPECT_FLOAT_EQ(down.at(x, y, z), float(sum / n)) << x << "," << y << "," << z;
            }
    // the far corner block is the single voxel (4,4,4)
    EXPECT_EQ(down.at(1, 1, 1), vol.at(4, 4, 4));
}

TEST(DownsampleLabels, MajorityVoteWithLowIndexTieBreak) {
    std::vector<std::uint8_t> labels(64, 0);
    for (std::size_t i = 0; i < 24; ++i)
        labels[i] = 1;
    LabelVolume vol(cube(4), labels, 2);
    EXPECT_EQ(downsample(vol, 4).labels[0], 0); // 40 vs 24

    for (std::size_t i = 0; i < 33; ++i)
        labels[i] = 1;
    EXPECT_EQ(downsample(LabelVolume(cube(4), labels, 2), 4).labels[0], 1); // 31 vs 33

    std::fill(labels.begin(), labels.end(), std::uint8_t(0));
    for (std::size_t i = 0; i < 32; ++i)
        labels[i] = 1;
    EXPECT_EQ(downsample(LabelVolume(cube(4), labels, 2), 4).labels[0], 0); // 32-32 tie

    // three-way: class 1 and 2 tie ahead of class 0 -> lowest winner is 1
    for (std::size_t i = 0; i < 64; ++i)
        labels[i] = i < 22 ? 1 : (i < 44 ? 2 : 0);
    EXPECT_EQ(downsample(LabelVolume(cube(4), labels, 3), 4).labels[0], 1);
}

TEST(Downsample, RejectsBadFactor) {
    ScalarVolume vol = ScalarVolume::filled(cube(4), 0.0f);
    EXPECT_THROW(downsample(vol, 0), std::invalid_argument);
    EXPECT_THROW(downsample(vol, 5), std::invalid_argument);
    LabelVolume l = LabelVolume::filled(cube(2), 0, 2);
    EXPECT_THROW(downsample(l, 3), std::invalid_argument);
}
