// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include "urbansplat/edit.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/evaluate.hpp"
#include "urbansplat/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace urbansplat;
using urbansplat::testing::make_camera;

namespace {

Image constant_image(int w, int h, double v)
{
    return Image::make(w, h, 3, v);
}

Tracklet box_track(int id, int frames, const Vec3& dims, const Vec3& center, double yaw)
{
    Tracklet t;
    t.id = id;
    t.track = PoseTrack::make(frames, dims);
    for (int f = 0; f < frames; ++f) {
        t.track.rotations[static_cast<std::size_t>(f)] = rotation_z(yaw + 0.1 * f);
        t.track.translations[static_cast<std::size_t>(f)] = center + Vec3(0.3 * f, 0.0, 0.0);
    }
    return t;
}

// Pixel center p is inside the convex hull of `pts` iff no line through two
// of the points has every point on one side and p strictly on the other.
bool inside_hull_oracle(const std::vector<Vec2>& pts, const Vec2& p)
{
    const auto side = [](const Vec2& a, const Vec2& b, const Vec2& c) {
        return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    };
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (i == j || (pts[i] - pts[j]).norm() == 0.0) {
                continue;
            }
            bool all_left = true;
            for (const Vec2& q : pts) {
                all_left = all_left && side(pts[i], pts[j], q) >= -1e-9;
            }
            if (all_left && side(pts[i], pts[j], p) < -1e-9) {
                return false;
            }
        }
    }
    return true;
}

SceneGraph two_object_scene()
{
    urbansplat::testing::RandomSceneOptions o;
    o.objects = 2;
    return urbansplat::testing::random_scene(3, o);
}

} // namespace

TEST(Psnr, IdenticalIsInfinite)
{
    const Image a = constant_image(8, 6, 0.3);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_EQ(ssim_metric(a, a), 1.0);
}

TEST(Psnr, ZeroVersusHalf)
{
    EXPECT_NEAR(psnr(constant_image(8, 6, 0.0), constant_image(8, 6, 0.5)), 10.0 * std::log10(4.0), 1e-12);
    EXPECT_NEAR(10.0 * std::log10(4.0), 6.0206, 1e-4);
}

TEST(Psnr, RejectsSizeMismatch)
{
    EXPECT_THROW(psnr(constant_image(8, 6, 0.0), constant_image(6, 8, 0.0)), ValidationError);
}

TEST(BoxMask, MatchesHullOracle)
{
    const Camera cam = make_camera(64, 48, 50.0, Vec3(-12.0, -3.0, 4.0), Vec3(0.0, 0.0, 0.5));
    for (int f = 0; f < 4; ++f) {
        const Tracklet t = box_track(1, 4, Vec3(4.0, 1.8, 1.5), Vec3(-1.0, 0.5, 0.75), 0.4);
        const std::vector<std::uint8_t> mask = box_mask({t}, cam, f);
        // Corners of the expanded box, projected directly.
        std::vector<Vec2> pts;
        const Mat3& r = t.track.rotations[static_cast<std::size_t>(f)];
        const Vec3& c = t.track.translations[static_cast<std::size_t>(f)];
        for (double sx : {-1.0, 1.0}) {
            for (double sy : {-1.0, 1.0}) {
                for (double sz : {-1.0, 1.0}) {
                    const Vec3 w = r * Vec3(sx * 3.0, sy * 1.35, sz * 0.75) + c;
                    const Vec3 q = cam.to_camera(w);
                    ASSERT_GT(q.z(), cam.near_clip);
                    pts.emplace_back(cam.fx * q.x() / q.z() + cam.cx, cam.fy * q.y() / q.z() + cam.cy);
                }
            }
        }
        std::size_t covered = 0;
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const bool expect = inside_hull_oracle(pts, Vec2(x + 0.5, y + 0.5));
                EXPECT_EQ(mask[static_cast<std::size_t>(y) * cam.width + x] != 0, expect) << x << "," << y;
                covered += expect;
            }
        }
        EXPECT_GT(covered, 50u);
    }
}

TEST(BoxMask, UnionOfTwoBoxes)
{
    const Camera cam = make_camera(64, 48, 50.0, Vec3(-12.0, 0.0, 4.0), Vec3(0.0, 0.0, 0.5));
    const Tracklet a = box_track(1, 1, Vec3(2.0, 1.0, 1.0), Vec3(0.0, -2.5, 0.5), 0.0);
    const Tracklet b = box_track(2, 1, Vec3(2.0, 1.0, 1.0), Vec3(0.0, 2.5, 0.5), 0.0);
    const auto ma = box_mask({a}, cam, 0);
    const auto mb = box_mask({b}, cam, 0);
    const auto both = box_mask({a, b}, cam, 0);
    for (std::size_t i = 0; i < both.size(); ++i) {
        EXPECT_EQ(both[i], static_cast<std::uint8_t>(ma[i] || mb[i]));
    }
}

TEST(PsnrStar, AbsentWithoutVisibleBox)
{
    const Camera cam = make_camera(32, 24, 30.0, Vec3(-10.0, 0.0, 2.0), Vec3(0.0, 0.0, 1.0));
    // Behind the camera.
    const Tracklet t = box_track(1, 1, Vec3(2.0, 1.0, 1.0), Vec3(-30.0, 0.0, 0.5), 0.0);
    const Image a = constant_image(32, 24, 0.2), b = constant_image(32, 24, 0.7);
    EXPECT_FALSE(psnr_star(a, b, {t}, cam, 0).has_value());
    EXPECT_FALSE(psnr_star(a, b, {}, cam, 0).has_value());
}

TEST(PsnrStar, OnlyMaskedPixelsCount)
{
    const Camera cam = make_camera(32, 24, 30.0, Vec3(-10.0, 0.0, 2.0), Vec3(0.0, 0.0, 1.0));
    const Tracklet t = box_track(1, 1, Vec3(2.0, 1.0, 1.0), Vec3(0.0, 0.0, 0.5), 0.0);
    const auto mask = box_mask({t}, cam, 0);
    Image a = constant_image(32, 24, 0.5), b = constant_image(32, 24, 0.5);
    for (std::size_t p = 0; p < mask.size(); ++p) {
        for (int c = 0; c < 3; ++c) {
            (mask[p] ? a : b).data[p * 3 + static_cast<std::size_t>(c)] = mask[p] ? 0.6 : 0.0;
        }
    }
    const auto v = psnr_star(a, b, {t}, cam, 0);
    ASSERT_TRUE(v.has_value());
    EXPECT_NEAR(*v, 10.0 * std::log10(1.0 / 0.01), 1e-9);
}

TEST(BoxMask, NearPlaneClipping)
{
    // Box straddling the camera: the visible part still produces a mask and
    // the camera center column is covered.
    const Camera cam = make_camera(32, 24, 30.0, Vec3(0.0, 0.0, 0.5), Vec3(10.0, 0.0, 0.5));
    const Tracklet t = box_track(1, 1, Vec3(6.0, 2.0, 2.0), Vec3(1.0, 0.0, 0.5), 0.0);
    const auto mask = box_mask({t}, cam, 0);
    EXPECT_EQ(mask[12 * 32 + 16], 1);
}

TEST(ConvexHull, DropsInteriorAndCollinear)
{
    const auto hull = convex_hull({{0, 0}, {2, 0}, {1, 0}, {2, 2}, {0, 2}, {1, 1}});
    EXPECT_EQ(hull.size(), 4u);
}

TEST(Miou, IdenticalAndDisjoint)
{
    LabelMap a{4, 1, {0, 1, 1, 2}};
    EXPECT_EQ(miou(a, a, 3).mean, 1.0);
    LabelMap p{4, 1, {1, 1, 1, 1}}, r{4, 1, {0, 0, 0, 0}};
    EXPECT_EQ(miou(p, r, 3).mean, 0.0);
}

TEST(Miou, MatchesConfusionMatrixOracle)
{
    std::mt19937_64 rng(12);
    const int m = 5;
    std::uniform_int_distribution<int> lab(0, m - 1);
    LabelMap p{40, 30, {}}, r{40, 30, {}};
    for (int i = 0; i < 1200; ++i) {
        p.labels.push_back(static_cast<std::uint16_t>(lab(rng)));
        // Class 4 never appears in the reference; some pixels are ignored.
        const int rv = i % 17 == 0 ? kIgnoreLabel : lab(rng) % 4;
        r.labels.push_back(static_cast<std::uint16_t>(rv));
    }
    std::vector<std::vector<double>> conf(m, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
        if (r.labels[i] != kIgnoreLabel) {
            conf[r.labels[i]][p.labels[i]] += 1.0;
        }
    }
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < m; ++c) {
        double row = 0.0, col = 0.0;
        for (int k = 0; k < m; ++k) {
            row += conf[c][k];
            col += conf[k][c];
        }
        if (row == 0.0) {
            continue;
        }
        sum += conf[c][c] / (row + col - conf[c][c]);
        ++present;
    }
    const IouResult res = miou(p, r, m);
    EXPECT_NEAR(res.mean, sum / present, 1e-12);
    EXPECT_FALSE(res.per_class[4].has_value());
}

TEST(Edit, ScriptJsonRoundTrip)
{
    const std::string text = R"({"edits": [
        {"op": "translate", "object": 1, "delta": [1.5, -2, 0], "frames": [0, 2]},
        {"op": "rotate_yaw", "object": 2, "angle": 0.25, "frames": [null, 1]},
        {"op": "swap", "objects": [1, 2]}]})";
    const EditScript s = edit_script_from_json(text);
    ASSERT_EQ(s.edits.size(), 3u);
    EXPECT_EQ(edit_script_to_json(edit_script_from_json(edit_script_to_json(s))), edit_script_to_json(s));
    EXPECT_THROW(edit_script_from_json(R"({"edits": [{"op": "scale", "object": 1}]})"), ValidationError);
    EXPECT_THROW(edit_script_from_json(R"({"edits": [{"op": "swap", "objects": [1]}]})"), ValidationError);
}

TEST(Edit, InvalidIdOrRangeRejected)
{
    const SceneGraph scene = two_object_scene();
    EditScript bad_id{{TranslateEdit{99, Vec3::Ones(), {}}}};
    EXPECT_THROW(apply_edit(scene, bad_id), ValidationError);
    EditScript bad_range{{RotateYawEdit{scene.objects[0].id, 0.1, {0, scene.num_frames}}}};
    EXPECT_THROW(apply_edit(scene, bad_range), ValidationError);
}

TEST(Edit, CopyOnEdit)
{
    const SceneGraph scene = two_object_scene();
    const Vec3 before = scene.objects[0].track.translations[0];
    const SceneGraph edited = apply_edit(scene, {{TranslateEdit{scene.objects[0].id, Vec3(1, 2, 3), {}}}});
    EXPECT_EQ(scene.objects[0].track.translations[0], before);
    EXPECT_EQ(edited.objects[0].track.translations[0], before + Vec3(1, 2, 3));
}

TEST(Edit, TranslateRangeOnly)
{
    const SceneGraph scene = two_object_scene();
    ASSERT_GE(scene.num_frames, 3);
    const int id = scene.objects[0].id;
    const SceneGraph e = apply_edit(scene, {{TranslateEdit{id, Vec3(0, 1, 0), {1, 1}}}});
    EXPECT_EQ(e.objects[0].track.translations[0], scene.objects[0].track.translations[0]);
    EXPECT_EQ(e.objects[0].track.translations[1], scene.objects[0].track.translations[1] + Vec3(0, 1, 0));
    EXPECT_EQ(e.objects[0].track.translations[2], scene.objects[0].track.translations[2]);
}

TEST(Edit, SwapTwiceIsBitwiseIdentity)
{
    const SceneGraph scene = two_object_scene();
    const int a = scene.objects[0].id, b = scene.objects[1].id;
    const SceneGraph once = apply_edit(scene, {{SwapEdit{a, b}}});
    EXPECT_EQ(once.objects[0].gaussians.positions, scene.objects[1].gaussians.positions);
    EXPECT_EQ(once.objects[0].track.translations, scene.objects[0].track.translations);
    const SceneGraph twice = apply_edit(once, {{SwapEdit{a, b}}});
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        EXPECT_EQ(twice.objects[i].gaussians.positions, scene.objects[i].gaussians.positions);
        EXPECT_EQ(twice.objects[i].gaussians.appearance.coeffs, scene.objects[i].gaussians.appearance.coeffs);
        EXPECT_EQ(twice.objects[i].gaussians.opacity_logits, scene.objects[i].gaussians.opacity_logits);
    }
}

TEST(Edit, EmptyScriptRendersIdentically)
{
    const SceneGraph scene = two_object_scene();
    const SceneGraph same = apply_edit(scene, {});
    const Camera cam = urbansplat::testing::axis_camera(32, 32, 30.0);
    const Image a = render_image(scene, cam, 0), b = render_image(same, cam, 0);
    EXPECT_EQ(a.data, b.data);
}

TEST(Edit, FullTurnAndOppositeTranslateRestorePoses)
{
    const SceneGraph scene = two_object_scene();
    const int id = scene.objects[0].id;
    const double two_pi = 2.0 * std::acos(-1.0);
    const SceneGraph turned = apply_edit(scene, {{RotateYawEdit{id, two_pi, {}}}});
    const SceneGraph moved =
        apply_edit(scene, {{TranslateEdit{id, Vec3(2.5, -1.25, 0.5), {}}, TranslateEdit{id, Vec3(-2.5, 1.25, -0.5), {}}}});
    for (int f = 0; f < scene.num_frames; ++f) {
        const auto fi = static_cast<std::size_t>(f);
        EXPECT_LT((turned.objects[0].track.rotations[fi] - scene.objects[0].track.rotations[fi]).cwiseAbs().maxCoeff(),
                  1e-12);
        EXPECT_LT((moved.objects[0].track.translations[fi] - scene.objects[0].track.translations[fi]).cwiseAbs().maxCoeff(),
                  1e-12);
    }
}
