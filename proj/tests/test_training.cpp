// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "test_support.hpp"

#include "urbansplat/checkpoint.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/init.hpp"
#include "urbansplat/synthbench.hpp"
#include "urbansplat/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace urbansplat;

namespace {

SynthSpec tiny_spec(int objects = 1)
{
    SynthSpec s;
    s.seed = 5;
    s.frames = 4;
    s.width = 40;
    s.height = 30;
    s.focal = 40.0;
    s.ground_size = 16.0;
    s.ground_spacing = 1.0;
    s.static_boxes = 2;
    s.box_points = 40;
    s.objects = objects;
    s.object_points = 80;
    s.lidar_rays_x = 20;
    s.lidar_rays_y = 15;
    s.sky_resolution = 4;
    return s;
}

TrainConfig quiet_config(int iterations)
{
    TrainConfig c;
    c.iterations = iterations;
    c.densify = false;
    c.opacity_reset = false;
    c.threads = 1;
    return c;
}

double mean(const std::vector<double>& v)
{
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace

TEST(TrainConfig, JsonRoundTrip)
{
    TrainConfig c;
    c.iterations = 1234;
    c.seed = 99;
    c.weights.sky = 0.5;
    c.pose_yaw = {2e-3, 2e-6};
    c.test_every = 4;
    const TrainConfig back = train_config_from_json(train_config_to_json(c));
    EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
    EXPECT_EQ(back.iterations, 1234);
    EXPECT_EQ(back.weights.sky, 0.5);
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues)
{
    EXPECT_THROW(train_config_from_json(R"({"iterationz": 5})"), ValidationError);
    EXPECT_THROW(train_config_from_json(R"({"iterations": -1})"), ValidationError);
    EXPECT_THROW(train_config_from_json(R"({"lambda_ssim": 1.5})"), ValidationError);
    EXPECT_NO_THROW(train_config_from_json("{}"));
}

TEST(LrSchedule, ExponentialEndpoints)
{
    const LrSchedule s{1e-2, 1e-4};
    EXPECT_DOUBLE_EQ(s.at(0, 100), 1e-2);
    EXPECT_NEAR(s.at(100, 100), 1e-4, 1e-18);
    EXPECT_NEAR(s.at(50, 100), 1e-3, 1e-15);
    EXPECT_EQ((LrSchedule{0.0, 0.0}).at(10, 100), 0.0);
}

TEST(SplitFrames, EveryFourthHeldOut)
{
    EXPECT_EQ(split_frames(10, 4, true), (std::vector<std::size_t>{3, 7}));
    EXPECT_EQ(split_frames(10, 4, false), (std::vector<std::size_t>{0, 1, 2, 4, 5, 6, 8, 9}));
    EXPECT_EQ(split_frames(3, 0, false).size(), 3u);
    // Without a held-out split, evaluation covers every frame.
    EXPECT_EQ(split_frames(3, 0, true).size(), 3u);
}

TEST(AdaptiveControl, PrunesTransparent)
{
    GaussianSet set = GaussianSet::make(3, AppearanceMode::Static, 0, 1, SemanticKind::BackgroundVector, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        set.set_position(i, Vec3(static_cast<double>(i), 0, 0));
        set.set_log_scale(i, Vec3::Constant(std::log(0.01)));
        set.set_rotation(i, Vec4(1, 0, 0, 0));
        set.opacity_logits[i] = logit(0.5);
    }
    set.opacity_logits[1] = logit(0.001);
    DensityStats stats;
    stats.reset(3);
    const TrainConfig c;
    ControlReport report;
    const DensifyPlan plan = adaptive_control(set, stats, c, 10.0, false, std::nullopt, 1, &report);
    EXPECT_EQ(plan.keep, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(set.size(), 2u);
    EXPECT_EQ(report.pruned, 1u);
}

TEST(AdaptiveControl, ClonesSmallAndSplitsLarge)
{
    GaussianSet set = GaussianSet::make(2, AppearanceMode::Static, 0, 1, SemanticKind::BackgroundVector, 2);
    for (std::size_t i = 0; i < 2; ++i) {
        set.set_position(i, Vec3(static_cast<double>(i), 0, 0));
        set.set_rotation(i, Vec4(1, 0, 0, 0));
        set.opacity_logits[i] = logit(0.5);
    }
    set.set_log_scale(0, Vec3::Constant(std::log(0.01))); // below 0.01 * extent = 0.1
    set.set_log_scale(1, Vec3::Constant(std::log(1.0)));
    DensityStats stats;
    stats.reset(2);
    stats.grad_accum = {1.0, 1.0};
    stats.count = {1.0, 1.0};
    const TrainConfig c;
    ControlReport report;
    const DensifyPlan plan = adaptive_control(set, stats, c, 10.0, false, std::nullopt, 1, &report);
    EXPECT_EQ(report.cloned, 1u);
    EXPECT_EQ(report.split, 1u);
    // The clone keeps its parent; the split parent is replaced by two children.
    EXPECT_EQ(set.size(), 4u);
    EXPECT_EQ(plan.keep, (std::vector<std::size_t>{0}));
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.log_scale(i).maxCoeff() > std::log(0.1)) {
            EXPECT_NEAR(set.log_scale(i).x(), -std::log(1.6), 1e-12);
        }
    }
}

TEST(AdaptiveControl, BoxPruneDropsOutsideMeans)
{
    GaussianSet set = GaussianSet::make(2, AppearanceMode::Static, 0, 1, SemanticKind::ObjectScalar, 2);
    for (std::size_t i = 0; i < 2; ++i) {
        set.set_log_scale(i, Vec3::Constant(std::log(0.01)));
        set.set_rotation(i, Vec4(1, 0, 0, 0));
        set.opacity_logits[i] = logit(0.5);
    }
    set.set_position(0, Vec3(0.1, 0.0, 0.0));
    set.set_position(1, Vec3(3.0, 0.0, 0.0));
    EXPECT_TRUE(gaussian_mean_inside_box(set, 0, Vec3(2, 2, 2), 32, 1));
    EXPECT_FALSE(gaussian_mean_inside_box(set, 1, Vec3(2, 2, 2), 32, 1));
    DensityStats stats;
    stats.reset(2);
    ControlReport report;
    adaptive_control(set, stats, TrainConfig{}, 10.0, false, Vec3(2, 2, 2), 1, &report);
    EXPECT_EQ(set.size(), 1u);
    EXPECT_EQ(report.box_pruned, 1u);
}

TEST(Training, FixedPointAtGroundTruth)
{
    // Unquantized renders of the ground truth through the training renderer.
    SynthResult r = generate(tiny_spec());
    for (FrameRecord& f : r.dataset.frames) {
        RenderConfig rc;
        rc.timestep = f.timestep;
        rc.num_threads = 1;
        f.image.data = render(r.scene, f.camera, rc).color;
    }
    TrainConfig c = quiet_config(30);
    c.weights.depth = c.weights.sky = c.weights.semantic = c.weights.reg = 0.0;
    Trainer trainer(r.dataset, r.scene, c);
    trainer.set_pose_truth(r.dataset.tracklets);
    double worst = 0.0;
    while (!trainer.done()) {
        const IterationMetrics m = trainer.step();
        worst = std::max(worst, m.total);
    }
    EXPECT_LT(worst, 1e-6);
    for (std::size_t f = 0; f < r.dataset.frames.size(); ++f) {
        EXPECT_LT(trainer.evaluate(f).total, 1e-6);
    }
}

TEST(Training, LossDecreasesFromInit)
{
    const SynthResult r = generate(tiny_spec());
    InitConfig ic;
    ic.voxel_size = 0.5;
    ic.sky_resolution = 4;
    const SceneGraph init = init_scene(r.dataset, ic);
    Trainer trainer(r.dataset, init, quiet_config(200));
    std::vector<double> first, last;
    while (!trainer.done()) {
        const IterationMetrics m = trainer.step();
        if (m.iteration <= 20) {
            first.push_back(m.color);
        } else if (m.iteration > 180) {
            last.push_back(m.color);
        }
    }
    EXPECT_LT(mean(last), 0.7 * mean(first));
}

TEST(Training, ZeroWeightTermsAreNotReported)
{
    const SynthResult r = generate(tiny_spec());
    TrainConfig c = quiet_config(2);
    c.weights.sky = 0.0;
    c.weights.semantic = 0.0;
    Trainer trainer(r.dataset, r.scene, c);
    const IterationMetrics m = trainer.step();
    EXPECT_FALSE(m.sky.has_value());
    EXPECT_FALSE(m.semantic.has_value());
    EXPECT_TRUE(m.depth.has_value());
}

TEST(Training, DeterministicAcrossThreadCounts)
{
    const SynthResult r = generate(tiny_spec());
    InitConfig ic;
    ic.voxel_size = 0.5;
    ic.sky_resolution = 4;
    const SceneGraph init = init_scene(r.dataset, ic);
    const auto run = [&](int threads) {
        TrainConfig c = quiet_config(60);
        c.densify = true;
        c.densify_from = 20;
        c.densify_interval = 20;
        c.threads = threads;
        std::string log;
        const SceneGraph out =
            train(r.dataset, init, c, [&](const IterationMetrics& m) { log += m.to_json_line() + "\n"; });
        return std::make_pair(log, out.background.positions);
    };
    const auto a = run(1), b = run(1), c = run(3);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.first, c.first);
    EXPECT_EQ(a.second, c.second);
}

TEST(Synthbench, SpecJsonRoundTrip)
{
    SynthSpec s = tiny_spec(2);
    s.trajectory = Trajectory::Arc;
    s.camera_path = CameraPath::EgoForward;
    EXPECT_EQ(synth_spec_to_json(synth_spec_from_json(synth_spec_to_json(s))), synth_spec_to_json(s));
    EXPECT_THROW(synth_spec_from_json(R"({"framez": 3})"), ValidationError);
}

TEST(Synthbench, GenerationIsDeterministic)
{
    const SynthResult a = generate(tiny_spec(2)), b = generate(tiny_spec(2));
    ASSERT_EQ(a.dataset.frames.size(), b.dataset.frames.size());
    for (std::size_t f = 0; f < a.dataset.frames.size(); ++f) {
        EXPECT_EQ(a.dataset.frames[f].image.data, b.dataset.frames[f].image.data);
        EXPECT_EQ(a.dataset.frames[f].lidar.positions, b.dataset.frames[f].lidar.positions);
    }
}

TEST(Synthbench, ZeroObjectsLoads)
{
    urbansplat::testing::TempDir dir("synth0");
    const SynthResult r = generate(tiny_spec(0));
    save_dataset(r.dataset, dir.path());
    const Dataset back = load_dataset(dir.path());
    EXPECT_TRUE(back.tracklets.empty());
    EXPECT_EQ(back.frames.size(), 4u);
}

TEST(Synthbench, SaveLoadIsIdentity)
{
    urbansplat::testing::TempDir dir("synthio");
    const SynthResult r = generate(tiny_spec(2));
    save_dataset(r.dataset, dir.path());
    const Dataset back = load_dataset(dir.path());
    ASSERT_EQ(back.frames.size(), r.dataset.frames.size());
    for (std::size_t f = 0; f < back.frames.size(); ++f) {
        const FrameRecord& x = r.dataset.frames[f];
        const FrameRecord& y = back.frames[f];
        EXPECT_EQ(x.timestep, y.timestep);
        EXPECT_EQ(x.image.data, y.image.data);
        EXPECT_EQ(x.lidar.positions, y.lidar.positions);
        EXPECT_EQ(x.sky_mask->labels, y.sky_mask->labels);
        EXPECT_EQ(x.semantic->labels, y.semantic->labels);
        EXPECT_EQ(x.camera.rotation, y.camera.rotation);
        EXPECT_EQ(x.camera.translation, y.camera.translation);
        EXPECT_EQ(x.camera.fx, y.camera.fx);
    }
    ASSERT_EQ(back.tracklets.size(), r.dataset.tracklets.size());
    for (std::size_t k = 0; k < back.tracklets.size(); ++k) {
        EXPECT_EQ(back.tracklets[k].id, r.dataset.tracklets[k].id);
        EXPECT_EQ(back.tracklets[k].track.rotations, r.dataset.tracklets[k].track.rotations);
        EXPECT_EQ(back.tracklets[k].track.translations, r.dataset.tracklets[k].track.translations);
        EXPECT_EQ(back.tracklets[k].track.box_dims, r.dataset.tracklets[k].track.box_dims);
        // Tracklets equal the ground-truth poses.
        EXPECT_EQ(back.tracklets[k].track.translations, r.scene.objects[k].track.translations);
    }
}

TEST(Synthbench, RerenderReproducesImages)
{
    const SynthResult r = generate(tiny_spec(2));
    for (const FrameRecord& f : r.dataset.frames) {
        RenderConfig rc;
        rc.timestep = f.timestep;
        const RenderOutputs out = render_reference(r.scene, f.camera, rc);
        for (std::size_t i = 0; i < out.color.size(); ++i) {
            ASSERT_EQ(std::round(std::clamp(out.color[i], 0.0, 1.0) * 255.0) / 255.0, f.image.data[i]);
        }
    }
}

TEST(Perturb, ZeroSigmaIsIdentity)
{
    const SynthResult r = generate(tiny_spec(2));
    const PerturbResult p = perturb(r.dataset, 0.0, 0.0, 7);
    for (std::size_t k = 0; k < p.dataset.tracklets.size(); ++k) {
        EXPECT_EQ(p.dataset.tracklets[k].track.rotations, r.dataset.tracklets[k].track.rotations);
        EXPECT_EQ(p.dataset.tracklets[k].track.translations, r.dataset.tracklets[k].track.translations);
    }
    for (const PoseNoise& n : p.noise) {
        EXPECT_EQ(n.delta_translation, Vec3::Zero());
        EXPECT_EQ(n.delta_yaw, 0.0);
    }
}

TEST(Perturb, RecordedDeltasReproduceNoisyPoses)
{
    const SynthResult r = generate(tiny_spec(2));
    const PerturbResult p = perturb(r.dataset, 0.2, 0.1, 7);
    ASSERT_EQ(p.noise.size(), 8u);
    for (const PoseNoise& n : p.noise) {
        const auto f = static_cast<std::size_t>(n.frame);
        const PoseTrack& noisy = p.dataset.find_tracklet(n.id)->track;
        const PoseTrack& clean = r.dataset.find_tracklet(n.id)->track;
        EXPECT_EQ(noisy.translations[f], clean.translations[f] + n.delta_translation);
        EXPECT_EQ(n.delta_translation.z(), 0.0);
        EXPECT_LT((noisy.rotations[f] - clean.rotations[f] * rotation_z(n.delta_yaw)).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Perturb, EmpiricalStdWithinFivePercent)
{
    Dataset ds;
    ds.num_frames = 1000;
    Tracklet t;
    t.id = 1;
    t.track = PoseTrack::make(1000, Vec3(4, 2, 1.5));
    ds.tracklets.push_back(t);
    const double st = 0.2, sy = 5.0 * std::acos(-1.0) / 180.0;
    const PerturbResult p = perturb(ds, st, sy, 3);
    ASSERT_EQ(p.noise.size(), 1000u);
    double sx2 = 0, sy2 = 0, syaw2 = 0;
    for (const PoseNoise& n : p.noise) {
        sx2 += n.delta_translation.x() * n.delta_translation.x();
        sy2 += n.delta_translation.y() * n.delta_translation.y();
        syaw2 += n.delta_yaw * n.delta_yaw;
    }
    EXPECT_NEAR(std::sqrt(sx2 / 1000.0), st, 0.05 * st);
    EXPECT_NEAR(std::sqrt(sy2 / 1000.0), st, 0.05 * st);
    EXPECT_NEAR(std::sqrt(syaw2 / 1000.0), sy, 0.05 * sy);
}
