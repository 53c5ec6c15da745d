// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

// Central-difference checks of the full render backward pass for every
// learnable parameter class.

#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace urbansplat;
using namespace urbansplat::testing;

namespace {

class RenderGradient : public ::testing::TestWithParam<int> {};

} // namespace

TEST_P(RenderGradient, AllParameterClasses)
{
    GradientReport r;
    probe_micro_scene(r, static_cast<std::uint64_t>(GetParam()));
    for (auto [name, tally] : r.classes()) {
        EXPECT_GT(tally->checked, 0) << name;
        EXPECT_EQ(tally->failed, 0) << name << " worst " << tally->worst;
        // Threshold crossings must stay rare or the check says little.
        EXPECT_LE(tally->boundary, tally->checked / 5 + 1) << name;
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RenderGradient, ::testing::Values(1, 2, 3, 4));

TEST(RenderGradient, OtherFramesGetNoPoseGradient)
{
    const GradientFixture f = GradientFixture::make(5, 2, GradientFixture::Terms::Geometry);
    const SceneGradients g = f.analytic();
    for (std::size_t s = 0; s < g.objects[0].delta_yaws.size(); ++s) {
        if (s != 2) {
            EXPECT_EQ(g.objects[0].delta_yaws[s], 0.0);
            EXPECT_EQ(g.objects[0].delta_translations[s], Vec3::Zero());
        }
    }
    EXPECT_NE(g.objects[0].delta_yaws[2], 0.0);
}

TEST(RenderGradient, ScreenStatsPopulated)
{
    const GradientFixture f = GradientFixture::make(9, 0, GradientFixture::Terms::Geometry);
    RenderState state;
    render(f.scene, f.camera, f.config, state);
    ScreenStats stats;
    render_backward(f.scene, state, f.weights, &stats);
    ASSERT_EQ(stats.visible.size(), state.world.size());
    int visible = 0;
    for (std::size_t i = 0; i < stats.visible.size(); ++i) {
        if (stats.visible[i]) {
            ++visible;
            EXPECT_GT(stats.radius[i], 0.0);
            EXPECT_GE(stats.mean2d_grad_norm[i], 0.0);
        }
    }
    EXPECT_GT(visible, 0);
}
