// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include "urbansplat/errors.hpp"
#include "urbansplat/parallel.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace urbansplat;
using namespace urbansplat::testing;

namespace {

struct Oracle {
    std::vector<double> color, opacity, depth, semantic;
};

// Per-pixel front-to-back blend written straight from the compositing rule.
// Points are projected independently and sorted by view depth.
Oracle oracle_render(const SceneGraph& scene, const Camera& cam, const RenderConfig& cfg)
{
    const WorldSet world = assemble_world_set(scene, cfg);
    const std::vector<Vec3> colors = world_colors(world, cam.center());
    struct Item {
        ProjectedGaussian p;
        std::size_t i;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < world.size(); ++i) {
        if (auto p = project_gaussian(world.means[i], world.covariance(i), cam)) {
            items.push_back({*p, i});
        }
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.p.view_depth < b.p.view_depth; });
    const int w = cam.width, h = cam.height, m = world.num_classes;
    Oracle o;
    o.color.assign(static_cast<std::size_t>(w * h * 3), 0.0);
    o.opacity.assign(static_cast<std::size_t>(w * h), 0.0);
    o.depth.assign(static_cast<std::size_t>(w * h), 0.0);
    o.semantic.assign(static_cast<std::size_t>(w * h * m), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t px = static_cast<std::size_t>(y * w + x);
            double trans = 1.0;
            const Vec2 c(x + 0.5, y + 0.5);
            for (const Item& it : items) {
                const Vec2 d = c - it.p.mean2d;
                const Eigen::Matrix2d inv = Eigen::Matrix2d(it.p.cov2d).inverse();
                const double q = d.dot(inv * d);
                double a = std::min(cfg.alpha_clamp, world.opacities[it.i] * std::exp(-0.5 * q));
                if (a < cfg.alpha_threshold) {
                    continue;
                }
                const double wgt = a * trans;
                for (int ch = 0; ch < 3; ++ch) {
                    o.color[px * 3 + ch] += wgt * colors[it.i][ch];
                }
                o.depth[px] += wgt * it.p.view_depth;
                for (int k = 0; k < m; ++k) {
                    o.semantic[px * m + k] += wgt * world.semantic[it.i * m + k];
                }
                trans *= 1.0 - a;
            }
            o.opacity[px] = 1.0 - trans;
            if (cfg.composite_sky) {
                const Vec3 sky = scene.sky.sample(cam.ray_direction(x + 0.5, y + 0.5));
                for (int ch = 0; ch < 3; ++ch) {
                    o.color[px * 3 + ch] += trans * sky[ch];
                }
            }
        }
    }
    return o;
}

RandomSceneOptions light_options()
{
    RandomSceneOptions o;
    o.background_points = 120;
    o.object_points = 30;
    o.max_opacity = 0.6;
    return o;
}

double max_output_diff(const RenderOutputs& a, const RenderOutputs& b)
{
    return std::max({max_abs_diff(a.color, b.color), max_abs_diff(a.opacity, b.opacity),
                     max_abs_diff(a.depth, b.depth), max_abs_diff(a.semantic, b.semantic)});
}

} // namespace

TEST(Render, EmptySceneShowsSky)
{
    SceneGraph scene;
    scene.background = GaussianSet::make(0, AppearanceMode::Static, 1, 1,
                                         SemanticKind::BackgroundVector, 8);
    scene.sky = SkyCubemap::make(4, 0.25);
    const Camera cam = axis_camera(16, 12, 20.0);
    const RenderOutputs out = render(scene, cam, RenderConfig{});
    for (double v : out.opacity) {
        EXPECT_EQ(v, 0.0);
    }
    for (double v : out.color) {
        EXPECT_NEAR(v, 0.25, 1e-15);
    }
    RenderConfig no_sky;
    no_sky.composite_sky = false;
    for (double v : render(scene, cam, no_sky).color) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Render, SingleCenteredGaussian)
{
    SceneGraph scene;
    scene.background = GaussianSet::make(1, AppearanceMode::Static, 0, 1,
                                         SemanticKind::BackgroundVector, 8);
    scene.background.set_position(0, Vec3(0, 0, 4));
    scene.background.set_log_scale(0, Vec3::Constant(std::log(0.2)));
    scene.background.opacity_logits[0] = logit(0.8);
    // Color 0.5 + z * Y00; choose z = 0 -> flat 0.5 gray.
    scene.sky = SkyCubemap::make(2, 0.0);
    const Camera cam = axis_camera(32, 32, 40.0);
    RenderConfig cfg;
    cfg.composite_sky = false;
    const RenderOutputs out = render(scene, cam, cfg);
    // Pixel center (16.5, 16.5) is 0.5 px from the mean in both axes.
    const double var = std::pow(40.0 * 0.2 / 4.0, 2) + kLowPassDilation;
    const double alpha = 0.8 * std::exp(-0.5 * 0.5 / var);
    const std::size_t px = 16 * 32 + 16;
    EXPECT_NEAR(out.opacity[px], alpha, 1e-12);
    EXPECT_NEAR(out.color[px * 3], 0.5 * alpha, 1e-12);
    EXPECT_NEAR(out.depth[px], 4.0 * alpha, 1e-12);
    // Symmetric about the mean.
    EXPECT_NEAR(out.opacity[15 * 32 + 15], out.opacity[px], 1e-15);
}

TEST(Render, MatchesOracleAndReference)
{
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const SceneGraph scene = random_scene(seed, light_options());
        const Camera cam = axis_camera(40, 32, 36.0);
        RenderConfig cfg;
        cfg.timestep = static_cast<int>(seed % 4);
        const RenderOutputs tiled = render(scene, cam, cfg);
        const RenderOutputs ref = render_reference(scene, cam, cfg);
        const Oracle o = oracle_render(scene, cam, cfg);
        EXPECT_LE(max_output_diff(tiled, ref), 1e-9) << "seed " << seed;
        EXPECT_LE(max_abs_diff(tiled.color, o.color), 1e-9);
        EXPECT_LE(max_abs_diff(tiled.opacity, o.opacity), 1e-9);
        EXPECT_LE(max_abs_diff(tiled.depth, o.depth), 1e-9);
        EXPECT_LE(max_abs_diff(tiled.semantic, o.semantic), 1e-9);
    }
}

TEST(Render, TileSizeCommutes)
{
    const SceneGraph scene = random_scene(5, light_options());
    const Camera cam = axis_camera(40, 30, 36.0);
    RenderConfig cfg;
    cfg.tile_size = 16;
    const RenderOutputs a = render(scene, cam, cfg);
    for (int ts : {4, 8, 32}) {
        cfg.tile_size = ts;
        EXPECT_LE(max_output_diff(a, render(scene, cam, cfg)), 1e-12) << "tile " << ts;
    }
}

TEST(Render, PermutationInvariant)
{
    SceneGraph scene = random_scene(6, light_options());
    const Camera cam = axis_camera(32, 32, 30.0);
    const RenderOutputs a = render(scene, cam, RenderConfig{});
    std::vector<std::size_t> perm(scene.background.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(99);
    std::shuffle(perm.begin(), perm.end(), rng);
    scene.background = scene.background.select(perm);
    const RenderOutputs b = render(scene, cam, RenderConfig{});
    // Exact ties in depth are measure-zero for continuous random positions.
    EXPECT_LE(max_output_diff(a, b), 1e-12);
}

TEST(Render, DeterministicAcrossThreadCounts)
{
    const SceneGraph scene = random_scene(7, light_options());
    const Camera cam = axis_camera(48, 40, 40.0);
    RenderConfig cfg;
    cfg.num_threads = 1;
    const RenderOutputs a = render(scene, cam, cfg);
    for (int n : {2, 4}) {
        cfg.num_threads = n;
        const RenderOutputs b = render(scene, cam, cfg);
        EXPECT_EQ(a.color, b.color);
        EXPECT_EQ(a.depth, b.depth);
        EXPECT_EQ(a.semantic, b.semantic);
    }
}

TEST(Render, OpacityBoundedAndSaturates)
{
    RandomSceneOptions o;
    o.background_points = 400;
    o.min_opacity = 0.9;
    o.max_opacity = 0.99;
    o.min_scale = 0.2;
    o.max_scale = 0.4;
    const SceneGraph scene = random_scene(8, o);
    const RenderOutputs out = render(scene, axis_camera(24, 24, 20.0), RenderConfig{});
    double max_o = 0.0;
    for (double v : out.opacity) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        max_o = std::max(max_o, v);
    }
    EXPECT_GT(max_o, 0.999);
}

TEST(Render, SemanticsShareColorWeights)
{
    // With all logits set to one-hot class 3 the semantic image equals opacity
    // in channel 3 and zero elsewhere.
    SceneGraph scene = random_scene(9, light_options());
    std::fill(scene.background.semantic.logits.begin(), scene.background.semantic.logits.end(), 0.0);
    for (std::size_t i = 0; i < scene.background.size(); ++i) {
        scene.background.semantic_logits(i)[3] = 1.0;
    }
    RenderConfig cfg;
    cfg.include_object_ids = std::vector<int>{};
    const RenderOutputs out = render(scene, axis_camera(32, 24, 28.0), cfg);
    for (std::size_t px = 0; px < out.pixel_count(); ++px) {
        for (int k = 0; k < 8; ++k) {
            const double v = out.semantic[px * 8 + k];
            EXPECT_NEAR(v, k == 3 ? out.opacity[px] : 0.0, 1e-12);
        }
    }
}

TEST(Render, ObjectSemanticGoesToVehicleChannel)
{
    SceneGraph scene = random_scene(10, light_options());
    RenderConfig cfg = objects_only(RenderConfig{}, scene);
    for (double& v : scene.objects[0].gaussians.semantic.logits) {
        v = 2.0;
    }
    const RenderOutputs out = render(scene, axis_camera(32, 24, 28.0), cfg);
    for (std::size_t px = 0; px < out.pixel_count(); ++px) {
        for (int k = 0; k < 8; ++k) {
            EXPECT_NEAR(out.semantic[px * 8 + k], k == scene.vehicle_class ? 2.0 * out.opacity[px] : 0.0,
                        1e-12);
        }
    }
}

TEST(Render, SkyIdentity)
{
    const SceneGraph scene = random_scene(11, light_options());
    const Camera cam = axis_camera(32, 24, 28.0);
    RenderConfig with_sky;
    RenderConfig no_sky;
    no_sky.composite_sky = false;
    const RenderOutputs a = render(scene, cam, with_sky);
    const RenderOutputs b = render(scene, cam, no_sky);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const std::size_t px = static_cast<std::size_t>(y * cam.width + x);
            const Vec3 sky = scene.sky.sample(cam.ray_direction(x + 0.5, y + 0.5));
            for (int ch = 0; ch < 3; ++ch) {
                EXPECT_NEAR(a.color[px * 3 + ch], b.color[px * 3 + ch] + (1.0 - b.opacity[px]) * sky[ch],
                            1e-12);
            }
        }
    }
}

TEST(Render, CubemapSeamContinuity)
{
    SkyCubemap sky = SkyCubemap::make(16, 0.0);
    // Smooth function of direction baked per texel center.
    const auto field = [](const Vec3& d) {
        const Vec3 u = d.normalized();
        return Vec3(0.5 + 0.4 * u.x(), 0.5 + 0.4 * u.y(), 0.5 + 0.4 * u.z());
    };
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    // Fill by sampling: each texel takes the field at its own footprint center.
    for (int f = 0; f < 6; ++f) {
        for (int r = 0; r < 16; ++r) {
            for (int c = 0; c < 16; ++c) {
                const double s = 2.0 * (c + 0.5) / 16.0 - 1.0;
                const double t = 2.0 * (r + 0.5) / 16.0 - 1.0;
                Vec3 d;
                switch (f) {
                case 0: d = Vec3(1, -t, -s); break;
                case 1: d = Vec3(-1, -t, s); break;
                case 2: d = Vec3(s, 1, t); break;
                case 3: d = Vec3(s, -1, -t); break;
                case 4: d = Vec3(s, -t, 1); break;
                default: d = Vec3(-s, -t, -1); break;
                }
                const Vec3 v = field(d);
                const std::size_t base = ((static_cast<std::size_t>(f) * 16 + r) * 16 + c) * 3;
                for (int ch = 0; ch < 3; ++ch) {
                    sky.texels[base + ch] = v[ch];
                }
            }
        }
    }
    // Directions straddling each face edge sample nearly the same color.
    for (int trial = 0; trial < 200; ++trial) {
        Vec3 d(n(rng), n(rng), n(rng));
        int axis;
        d.cwiseAbs().maxCoeff(&axis);
        const int other = (axis + 1 + static_cast<int>(rng() % 2)) % 3;
        d[other] = (d[other] >= 0 ? 1.0 : -1.0) * std::abs(d[axis]);
        Vec3 a = d, b = d;
        a[other] *= 1.0 - 1e-6;
        b[other] *= 1.0 + 1e-6;
        EXPECT_LE((sky.sample(a) - sky.sample(b)).cwiseAbs().maxCoeff(), 0.1);
        EXPECT_LE((sky.sample(d) - field(d)).cwiseAbs().maxCoeff(), 0.1);
    }
}

TEST(Render, InvalidConfigRejected)
{
    const SceneGraph scene = random_scene(12, light_options());
    const Camera cam = axis_camera(16, 16, 20.0);
    RenderConfig cfg;
    cfg.tile_size = 0;
    EXPECT_THROW(render(scene, cam, cfg), ValidationError);
    cfg = RenderConfig{};
    cfg.timestep = 99;
    EXPECT_THROW(render(scene, cam, cfg), ValidationError);
    Camera bad = cam;
    bad.fx = -1.0;
    EXPECT_THROW(render(scene, bad, RenderConfig{}), ValidationError);
}

TEST(Decompose, ObjectIsolationMatchesObjectsOnlyRender)
{
    RandomSceneOptions o = light_options();
    o.objects = 2;
    const SceneGraph scene = random_scene(13, o);
    const Camera cam = axis_camera(40, 32, 36.0);
    RenderConfig cfg;
    cfg.composite_sky = false;
    const int id = scene.objects[1].id;
    const DecomposedOutputs d = render_decomposed(scene, cam, cfg, DecomposeTarget::object(id));
    // Compositional oracle: a scene that contains only that object.
    SceneGraph only = scene;
    only.background = scene.background.select(std::vector<std::size_t>{});
    only.objects = {scene.objects[1]};
    RenderConfig plain;
    plain.composite_sky = false;
    const Oracle ref = oracle_render(only, cam, plain);
    EXPECT_LE(max_abs_diff(d.render.color, ref.color), 1e-9);
    EXPECT_LE(max_abs_diff(d.render.opacity, ref.opacity), 1e-9);

    const DecomposedOutputs bg = render_decomposed(scene, cam, cfg, DecomposeTarget::background());
    SceneGraph bg_only = scene;
    bg_only.objects.clear();
    const Oracle ref_bg = oracle_render(bg_only, cam, plain);
    EXPECT_LE(max_abs_diff(bg.render.color, ref_bg.color), 1e-9);

    SceneGraph objs = scene;
    objs.background = scene.background.select(std::vector<std::size_t>{});
    const Oracle ref_obj = oracle_render(objs, cam, plain);
    EXPECT_LE(max_abs_diff(d.object_opacity, ref_obj.opacity), 1e-9);

    EXPECT_THROW(render_decomposed(scene, cam, cfg, DecomposeTarget::object(12345)), ValidationError);
}
