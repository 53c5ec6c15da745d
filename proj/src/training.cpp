// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/training.hpp"

#include "json_util.hpp"
#include "urbansplat/checkpoint.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/geometry.hpp"
#include "urbansplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

namespace urbansplat {

namespace {

using detail::json;
using ordered = nlohmann::ordered_json;

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t a, std::uint64_t b)
{
    std::uint64_t z = a ^ (b + kGolden + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double median(std::vector<double> v)
{
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_schedule(const LrSchedule& s, const char* name)
{
    // A schedule of exactly zero freezes the group.
    if (s.initial == 0.0 && s.final == 0.0) {
        return;
    }
    if (!(s.initial > 0.0 && s.final > 0.0 && s.final <= s.initial) || !std::isfinite(s.initial)) {
        throw ValidationError(std::string("train config: ") + name +
                              " schedule must be positive and non-increasing, or zero");
    }
}

// Zeroed copy of a set's columns, used for Adam moments.
GaussianSet zeros_like(const GaussianSet& g)
{
    GaussianSet z = g;
    for (std::vector<double>* c : {&z.positions, &z.log_scales, &z.rotations, &z.opacity_logits,
                                   &z.appearance.coeffs, &z.semantic.logits}) {
        std::fill(c->begin(), c->end(), 0.0);
    }
    return z;
}

struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-15;
    int step = 0;

    void update(std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                std::vector<double>& v, double lr) const
    {
        const double bc1 = 1.0 - std::pow(beta1, step);
        const double bc2 = 1.0 - std::pow(beta2, step);
        const double step_size = lr / bc1;
        const double root_bc2 = std::sqrt(bc2);
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= step_size * m[i] / (std::sqrt(v[i]) / root_bc2 + epsilon);
        }
    }
};

// Optimizer and densification state of one Gaussian set.
struct SetState {
    GaussianSet m;
    GaussianSet v;
    DensityStats stats;

    void init(const GaussianSet& g)
    {
        m = zeros_like(g);
        v = zeros_like(g);
        stats.reset(g.size());
    }

    void apply(const DensifyPlan& plan)
    {
        for (GaussianSet* s : {&m, &v}) {
            GaussianSet next = s->select(plan.keep);
            GaussianSet fresh = zeros_like(s->select(plan.parents));
            next.append(fresh);
            *s = std::move(next);
        }
        stats.reset(plan.keep.size() + plan.parents.size());
    }
};

struct PoseState {
    std::vector<double> dt_m, dt_v, dy_m, dy_v;
};

std::vector<double> flatten(const std::vector<Vec3>& v)
{
    std::vector<double> out(v.size() * 3);
    for (std::size_t i = 0; i < v.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            out[3 * i + static_cast<std::size_t>(k)] = v[i][k];
        }
    }
    return out;
}

void unflatten(const std::vector<double>& in, std::vector<Vec3>& v)
{
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = Vec3(in[3 * i], in[3 * i + 1], in[3 * i + 2]);
    }
}

double max_scale(const GaussianSet& g, std::size_t i) { return std::exp(g.log_scale(i).maxCoeff()); }

bool all_finite(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace

void LossWeights::validate() const
{
    for (double w : {lambda_ssim, depth, sky, semantic, reg}) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw ValidationError("loss weights must be finite and >= 0");
        }
    }
    if (lambda_ssim > 1.0) {
        throw ValidationError("loss weights: lambda_ssim must lie in [0, 1]");
    }
}

double LrSchedule::at(int iteration, int total) const
{
    if (initial == 0.0) {
        return 0.0;
    }
    const double t = total <= 0 ? 0.0 : std::clamp(static_cast<double>(iteration) / total, 0.0, 1.0);
    return std::exp((1.0 - t) * std::log(initial) + t * std::log(final));
}

void TrainConfig::validate() const
{
    if (iterations <= 0) {
        throw ValidationError("train config: iterations must be positive");
    }
    weights.validate();
    check_schedule(position, "position");
    check_schedule(pose_translation, "pose_translation");
    check_schedule(pose_yaw, "pose_yaw");
    check_schedule(sky, "sky");
    for (double lr : {scale_lr, rotation_lr, opacity_lr, appearance_lr, semantic_lr}) {
        if (!(lr >= 0.0) || !std::isfinite(lr)) {
            throw ValidationError("train config: learning rates must be finite and >= 0");
        }
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0)) {
        throw ValidationError("train config: invalid Adam constants");
    }
    if (densify_interval < 1 || opacity_reset_interval < 1 || split_children < 1 || box_prune_samples < 1) {
        throw ValidationError("train config: intervals and counts must be >= 1");
    }
    if (!(split_factor > 0.0 && percent_dense > 0.0 && background_extent > 0.0 && prune_opacity >= 0.0 &&
          densify_grad_threshold >= 0.0 && max_screen_radius > 0.0)) {
        throw ValidationError("train config: density control thresholds out of range");
    }
    if (test_every < 0 || test_every == 1 || checkpoint_every < 0 || tile_size < 1 || threads < 0) {
        throw ValidationError("train config: test_every must be 0 or >= 2; checkpoint_every, tile_size, "
                              "threads out of range");
    }
}

TrainConfig train_config_from_json(const std::string& text)
{
    TrainConfig c;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("train config: expected a JSON object");
    }
    const std::string w = "train config";
    const auto sched = [&](const json& v, LrSchedule& s, const std::string& key) {
        s.initial = detail::number(detail::field(v, "initial", w + "." + key), w + "." + key + ".initial");
        s.final = detail::number(detail::field(v, "final", w + "." + key), w + "." + key + ".final");
    };
    try {
        for (const auto& [key, v] : j.items()) {
            const std::string where = w + "." + key;
            if (key == "iterations") c.iterations = detail::integer(v, where);
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "lambda_ssim") c.weights.lambda_ssim = detail::number(v, where);
            else if (key == "lambda_depth") c.weights.depth = detail::number(v, where);
            else if (key == "lambda_sky") c.weights.sky = detail::number(v, where);
            else if (key == "lambda_semantic") c.weights.semantic = detail::number(v, where);
            else if (key == "lambda_reg") c.weights.reg = detail::number(v, where);
            else if (key == "position_lr") sched(v, c.position, key);
            else if (key == "scale_lr") c.scale_lr = detail::number(v, where);
            else if (key == "rotation_lr") c.rotation_lr = detail::number(v, where);
            else if (key == "opacity_lr") c.opacity_lr = detail::number(v, where);
            else if (key == "appearance_lr") c.appearance_lr = detail::number(v, where);
            else if (key == "semantic_lr") c.semantic_lr = detail::number(v, where);
            else if (key == "pose_translation_lr") sched(v, c.pose_translation, key);
            else if (key == "pose_yaw_lr") sched(v, c.pose_yaw, key);
            else if (key == "sky_lr") sched(v, c.sky, key);
            else if (key == "adam_beta1") c.adam_beta1 = detail::number(v, where);
            else if (key == "adam_beta2") c.adam_beta2 = detail::number(v, where);
            else if (key == "adam_epsilon") c.adam_epsilon = detail::number(v, where);
            else if (key == "optimize_poses") c.optimize_poses = v.get<bool>();
            else if (key == "densify") c.densify = v.get<bool>();
            else if (key == "densify_from") c.densify_from = detail::integer(v, where);
            else if (key == "densify_until") c.densify_until = detail::integer(v, where);
            else if (key == "densify_interval") c.densify_interval = detail::integer(v, where);
            else if (key == "densify_grad_threshold") c.densify_grad_threshold = detail::number(v, where);
            else if (key == "percent_dense") c.percent_dense = detail::number(v, where);
            else if (key == "split_factor") c.split_factor = detail::number(v, where);
            else if (key == "split_children") c.split_children = detail::integer(v, where);
            else if (key == "prune_opacity") c.prune_opacity = detail::number(v, where);
            else if (key == "max_screen_radius") c.max_screen_radius = detail::number(v, where);
            else if (key == "background_extent") c.background_extent = detail::number(v, where);
            else if (key == "box_prune_samples") c.box_prune_samples = detail::integer(v, where);
            else if (key == "opacity_reset") c.opacity_reset = v.get<bool>();
            else if (key == "opacity_reset_interval") c.opacity_reset_interval = detail::integer(v, where);
            else if (key == "reg_start") c.reg_start = detail::integer(v, where);
            else if (key == "test_every") c.test_every = detail::integer(v, where);
            else if (key == "checkpoint_every") c.checkpoint_every = detail::integer(v, where);
            else if (key == "tile_size") c.tile_size = detail::integer(v, where);
            else if (key == "threads") c.threads = detail::integer(v, where);
            else throw ValidationError("train config: unknown key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& c)
{
    const auto sched = [](const LrSchedule& s) { return ordered{{"initial", s.initial}, {"final", s.final}}; };
    ordered j;
    j["iterations"] = c.iterations;
    j["seed"] = c.seed;
    j["lambda_ssim"] = c.weights.lambda_ssim;
    j["lambda_depth"] = c.weights.depth;
    j["lambda_sky"] = c.weights.sky;
    j["lambda_semantic"] = c.weights.semantic;
    j["lambda_reg"] = c.weights.reg;
    j["position_lr"] = sched(c.position);
    j["scale_lr"] = c.scale_lr;
    j["rotation_lr"] = c.rotation_lr;
    j["opacity_lr"] = c.opacity_lr;
    j["appearance_lr"] = c.appearance_lr;
    j["semantic_lr"] = c.semantic_lr;
    j["pose_translation_lr"] = sched(c.pose_translation);
    j["pose_yaw_lr"] = sched(c.pose_yaw);
    j["sky_lr"] = sched(c.sky);
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_epsilon"] = c.adam_epsilon;
    j["optimize_poses"] = c.optimize_poses;
    j["densify"] = c.densify;
    j["densify_from"] = c.densify_from;
    j["densify_until"] = c.densify_until;
    j["densify_interval"] = c.densify_interval;
    j["densify_grad_threshold"] = c.densify_grad_threshold;
    j["percent_dense"] = c.percent_dense;
    j["split_factor"] = c.split_factor;
    j["split_children"] = c.split_children;
    j["prune_opacity"] = c.prune_opacity;
    j["max_screen_radius"] = c.max_screen_radius;
    j["background_extent"] = c.background_extent;
    j["box_prune_samples"] = c.box_prune_samples;
    j["opacity_reset"] = c.opacity_reset;
    j["opacity_reset_interval"] = c.opacity_reset_interval;
    j["reg_start"] = c.reg_start;
    j["test_every"] = c.test_every;
    j["checkpoint_every"] = c.checkpoint_every;
    j["tile_size"] = c.tile_size;
    j["threads"] = c.threads;
    return j.dump(2) + "\n";
}

std::vector<std::size_t> split_frames(std::size_t frame_count, int test_every, bool test)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < frame_count; ++i) {
        const bool held_out = test_every > 0 && i % static_cast<std::size_t>(test_every) ==
                                                    static_cast<std::size_t>(test_every - 1);
        if (test_every <= 0 || held_out == test) {
            out.push_back(i);
        }
    }
    return out;
}

PoseResidualStats pose_residuals(const SceneGraph& scene, const std::vector<Tracklet>& truth,
                                 const std::vector<int>& timesteps)
{
    std::vector<double> dts, dys;
    for (const Tracklet& clean : truth) {
        const ObjectModel* obj = scene.find_object(clean.id);
        if (!obj) {
            continue;
        }
        std::vector<RigidPose> learned, reference;
        for (int t : timesteps) {
            if (obj->track.is_valid(t) && clean.track.is_valid(t)) {
                learned.push_back(effective_pose(obj->track, t));
                reference.push_back({clean.track.rotations[static_cast<std::size_t>(t)],
                                     clean.track.translations[static_cast<std::size_t>(t)]});
            }
        }
        if (learned.empty()) {
            continue;
        }
        // Gauge: common yaw offset (circular mean) and the object-frame offset
        // d minimizing sum |T'_t - T_t + R'_t d|^2, which is -mean(R'_t^T a_t).
        double s = 0.0, c = 0.0;
        std::vector<double> yaw_err(learned.size());
        Vec3 offset = Vec3::Zero();
        for (std::size_t k = 0; k < learned.size(); ++k) {
            yaw_err[k] = wrap_angle(yaw_of(learned[k].rotation) - yaw_of(reference[k].rotation));
            s += std::sin(yaw_err[k]);
            c += std::cos(yaw_err[k]);
            offset -= learned[k].rotation.transpose() * (learned[k].translation - reference[k].translation);
        }
        const double gauge_yaw = std::atan2(s, c);
        offset /= static_cast<double>(learned.size());
        for (std::size_t k = 0; k < learned.size(); ++k) {
            dys.push_back(std::abs(wrap_angle(yaw_err[k] - gauge_yaw)));
            dts.push_back((learned[k].translation - reference[k].translation + learned[k].rotation * offset).norm());
        }
    }
    PoseResidualStats out;
    out.count = dts.size();
    if (!dts.empty()) {
        out.median_translation = median(dts);
        out.median_yaw = median(dys);
        out.max_translation = *std::max_element(dts.begin(), dts.end());
        out.max_yaw = *std::max_element(dys.begin(), dys.end());
    }
    return out;
}

std::string IterationMetrics::to_json_line() const
{
    ordered j;
    j["iteration"] = iteration;
    j["frame"] = frame;
    j["loss"] = total;
    j["color"] = color;
    const auto opt = [&](const char* key, const std::optional<double>& v) {
        j[key] = v ? ordered(*v) : ordered(nullptr);
    };
    opt("depth", depth);
    opt("sky", sky);
    opt("semantic", semantic);
    opt("reg", reg);
    j["background_points"] = background_points;
    j["object_points"] = object_points;
    if (pose) {
        j["pose_count"] = pose->count;
        j["pose_median_translation"] = pose->median_translation;
        j["pose_median_yaw"] = pose->median_yaw;
        j["pose_max_translation"] = pose->max_translation;
        j["pose_max_yaw"] = pose->max_yaw;
    }
    return j.dump();
}

void DensityStats::reset(std::size_t n)
{
    grad_accum.assign(n, 0.0);
    count.assign(n, 0.0);
    max_radius.assign(n, 0.0);
}

bool gaussian_mean_inside_box(const GaussianSet& set, std::size_t i, const Vec3& box_dims, int samples,
                              std::uint64_t seed)
{
    std::mt19937_64 rng(mix(seed, i));
    std::normal_distribution<double> n(0.0, 1.0);
    const Mat3 r = quaternion_to_rotation(normalize_quaternion(set.rotation(i)));
    const Vec3 s = set.log_scale(i).array().exp().matrix();
    Vec3 sum = Vec3::Zero();
    for (int k = 0; k < samples; ++k) {
        Vec3 z;
        z << n(rng), n(rng), n(rng);
        sum += r * s.cwiseProduct(z);
    }
    return inside_box(set.position(i) + sum / samples, box_dims);
}

DensifyPlan adaptive_control(GaussianSet& set, const DensityStats& stats, const TrainConfig& config,
                             double extent, bool prune_large_on_screen,
                             const std::optional<Vec3>& box_dims, std::uint64_t seed,
                             ControlReport* report)
{
    const std::size_t n = set.size();
    if (stats.grad_accum.size() != n || stats.count.size() != n || stats.max_radius.size() != n) {
        throw ValidationError("adaptive_control: statistics do not match the set");
    }
    ControlReport rep;
    std::vector<std::uint8_t> split(n, 0);
    std::vector<std::size_t> clones;
    for (std::size_t i = 0; i < n; ++i) {
        const double g = stats.count[i] > 0.0 ? stats.grad_accum[i] / stats.count[i] : 0.0;
        if (!(g > 0.0) || g < config.densify_grad_threshold) {
            continue;
        }
        if (max_scale(set, i) <= config.percent_dense * extent) {
            clones.push_back(i);
        } else {
            split[i] = 1;
        }
    }

    // Candidate list: surviving originals, clones, then split children.
    GaussianSet fresh = set.select(clones);
    std::vector<std::size_t> parents = clones;
    std::vector<double> fresh_radius(clones.size(), 0.0);
    std::mt19937_64 rng(mix(seed, 0x5eed));
    std::normal_distribution<double> normal(0.0, 1.0);
    const double shrink = std::log(config.split_factor);
    for (std::size_t i = 0; i < n; ++i) {
        if (!split[i]) {
            continue;
        }
        const std::vector<std::size_t> one(static_cast<std::size_t>(config.split_children), i);
        GaussianSet children = set.select(one);
        const Mat3 r = quaternion_to_rotation(normalize_quaternion(set.rotation(i)));
        const Vec3 s = set.log_scale(i).array().exp().matrix();
        for (std::size_t c = 0; c < children.size(); ++c) {
            Vec3 z;
            z << normal(rng), normal(rng), normal(rng);
            children.set_position(c, set.position(i) + r * s.cwiseProduct(z));
            children.set_log_scale(c, set.log_scale(i) - Vec3::Constant(shrink));
        }
        fresh.append(children);
        parents.insert(parents.end(), one.begin(), one.end());
        fresh_radius.resize(parents.size(), 0.0);
    }
    rep.cloned = clones.size();
    rep.split = static_cast<std::size_t>(std::count(split.begin(), split.end(), 1));

    const auto pruned = [&](const GaussianSet& g, std::size_t i, double radius, std::size_t salt) {
        if (g.opacity(i) < config.prune_opacity) {
            return 1;
        }
        if (prune_large_on_screen && (radius > config.max_screen_radius || max_scale(g, i) > 0.1 * extent)) {
            return 1;
        }
        if (box_dims && !gaussian_mean_inside_box(g, i, *box_dims, config.box_prune_samples, mix(seed, salt))) {
            return 2;
        }
        return 0;
    };
    DensifyPlan plan;
    for (std::size_t i = 0; i < n; ++i) {
        if (split[i]) {
            continue;
        }
        const int p = pruned(set, i, stats.max_radius[i], i);
        if (p == 0) {
            plan.keep.push_back(i);
        } else {
            ++(p == 1 ? rep.pruned : rep.box_pruned);
        }
    }
    std::vector<std::size_t> fresh_keep;
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        const int p = pruned(fresh, k, fresh_radius[k], n + k);
        if (p == 0) {
            fresh_keep.push_back(k);
            plan.parents.push_back(parents[k]);
        } else {
            ++(p == 1 ? rep.pruned : rep.box_pruned);
        }
    }
    GaussianSet next = set.select(plan.keep);
    next.append(fresh.select(fresh_keep));
    set = std::move(next);
    if (report) {
        *report = rep;
    }
    return plan;
}

struct Trainer::Impl {
    const Dataset& dataset;
    SceneGraph scene;
    TrainConfig config;
    std::vector<std::size_t> train_frames;
    std::vector<std::optional<DepthMap>> depth_maps;
    std::vector<int> train_timesteps;
    std::optional<std::vector<Tracklet>> truth;
    std::optional<std::filesystem::path> output_dir;

    Adam adam;
    SetState background;
    std::vector<SetState> objects;
    std::vector<PoseState> poses;
    std::vector<double> sky_m, sky_v;

    int iteration = 0;
    std::vector<std::size_t> order;
    std::size_t order_pos = 0;
    int epoch = 0;

    Impl(const Dataset& ds, SceneGraph s, TrainConfig c) : dataset(ds), scene(std::move(s)), config(c)
    {
        config.validate();
        scene.validate();
        if (scene.num_frames != dataset.num_frames) {
            throw ValidationError("train: scene and dataset disagree on the number of frames");
        }
        train_frames = split_frames(dataset.frames.size(), config.test_every, false);
        if (train_frames.empty()) {
            throw ValidationError("train: no training frames");
        }
        for (std::size_t f : train_frames) {
            train_timesteps.push_back(dataset.frames[f].timestep);
        }
        depth_maps.resize(dataset.frames.size());
        for (std::size_t f = 0; f < dataset.frames.size(); ++f) {
            if (!dataset.frames[f].lidar.positions.empty()) {
                DepthMap d = project_lidar_depth(dataset.frames[f]);
                if (d.hits() > 0) {
                    depth_maps[f] = std::move(d);
                }
            }
        }
        adam.beta1 = config.adam_beta1;
        adam.beta2 = config.adam_beta2;
        adam.epsilon = config.adam_epsilon;
        background.init(scene.background);
        objects.resize(scene.objects.size());
        poses.resize(scene.objects.size());
        for (std::size_t s = 0; s < scene.objects.size(); ++s) {
            objects[s].init(scene.objects[s].gaussians);
            const std::size_t nf = static_cast<std::size_t>(scene.num_frames);
            poses[s] = {std::vector<double>(3 * nf, 0.0), std::vector<double>(3 * nf, 0.0),
                        std::vector<double>(nf, 0.0), std::vector<double>(nf, 0.0)};
        }
        sky_m.assign(scene.sky.texels.size(), 0.0);
        sky_v.assign(scene.sky.texels.size(), 0.0);
    }

    RenderConfig render_config(int timestep) const
    {
        RenderConfig rc;
        rc.tile_size = config.tile_size;
        rc.num_threads = config.threads;
        rc.timestep = timestep;
        return rc;
    }

    std::size_t next_frame()
    {
        if (order_pos >= order.size()) {
            order = train_frames;
            std::mt19937_64 rng(mix(config.seed, static_cast<std::uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
            order_pos = 0;
            ++epoch;
        }
        return order[order_pos++];
    }

    bool reg_active(int it) const
    {
        return config.weights.reg > 0.0 && !scene.objects.empty() && it >= config.reg_start_iteration();
    }

    // Loss terms for one frame; fills upstream gradients when requested.
    IterationMetrics losses(std::size_t f, int it, const RenderOutputs& out, RenderGradients* up) const
    {
        const FrameRecord& frame = dataset.frames[f];
        const LossWeights& w = config.weights;
        IterationMetrics m;
        m.iteration = it;
        m.frame = f;
        const LossValue color = loss_color(out.color, frame.image, w.lambda_ssim);
        m.color = color.value;
        m.total = color.value;
        if (up) {
            up->color = color.grad;
            up->opacity.assign(out.opacity.size(), 0.0);
            up->depth.assign(out.depth.size(), 0.0);
        }
        if (w.depth > 0.0 && depth_maps[f]) {
            const LossValue d = loss_depth(out.depth, *depth_maps[f]);
            m.depth = d.value;
            m.total += w.depth * d.value;
            if (up) {
                for (std::size_t i = 0; i < d.grad.size(); ++i) {
                    up->depth[i] += w.depth * d.grad[i];
                }
            }
        }
        if (w.sky > 0.0 && frame.sky_mask) {
            const LossValue s = loss_sky(out.opacity, *frame.sky_mask);
            m.sky = s.value;
            m.total += w.sky * s.value;
            if (up) {
                for (std::size_t i = 0; i < s.grad.size(); ++i) {
                    up->opacity[i] += w.sky * s.grad[i];
                }
            }
        }
        if (w.semantic > 0.0 && frame.semantic) {
            const LossValue s = loss_semantic(out.semantic, *frame.semantic, scene.num_classes);
            m.semantic = s.value;
            m.total += w.semantic * s.value;
            if (up) {
                up->semantic = s.grad;
                for (double& g : up->semantic) {
                    g *= w.semantic;
                }
            }
        }
        return m;
    }

    void fill_counts(IterationMetrics& m) const
    {
        m.background_points = scene.background.size();
        m.object_points = 0;
        for (const ObjectModel& o : scene.objects) {
            m.object_points += o.gaussians.size();
        }
        if (truth) {
            m.pose = pose_residuals(scene, *truth, train_timesteps);
        }
    }

    IterationMetrics evaluate(std::size_t f) const
    {
        if (f >= dataset.frames.size()) {
            throw ValidationError("evaluate: frame index out of range");
        }
        const FrameRecord& frame = dataset.frames[f];
        const RenderOutputs out = render(scene, frame.camera, render_config(frame.timestep));
        IterationMetrics m = losses(f, iteration, out, nullptr);
        if (reg_active(iteration)) {
            const RenderOutputs obj = render(scene, frame.camera, objects_only(render_config(frame.timestep), scene));
            m.reg = loss_reg(obj.opacity).value;
            m.total += config.weights.reg * *m.reg;
        }
        fill_counts(m);
        return m;
    }

    [[noreturn]] void abort_non_finite(const IterationMetrics& m, const char* what) const
    {
        std::string message = "non-finite " + std::string(what) + " at iteration " + std::to_string(m.iteration) +
                              " (frame " + std::to_string(m.frame) + "): " + m.to_json_line();
        if (output_dir) {
            try {
                std::filesystem::create_directories(*output_dir);
                write_text_file(*output_dir / "diagnostics.json", m.to_json_line() + "\n");
                message += "; diagnostics written to " + (*output_dir / "diagnostics.json").string();
            } catch (const std::exception&) {
                // The original failure is the one worth reporting.
            }
        }
        throw RuntimeError(message);
    }

    void accumulate(const RenderState& state, const ScreenStats& stats)
    {
        const WorldSet& world = state.world;
        for (std::size_t k = 0; k < world.size(); ++k) {
            if (!stats.visible[k]) {
                continue;
            }
            const WorldSet::Source src = world.sources[k];
            DensityStats& d = src.slot < 0 ? background.stats : objects[static_cast<std::size_t>(src.slot)].stats;
            d.grad_accum[src.index] += stats.mean2d_grad_norm[k];
            d.count[src.index] += 1.0;
            d.max_radius[src.index] = std::max(d.max_radius[src.index], stats.radius[k]);
        }
    }

    void update_set(GaussianSet& g, const GaussianSet& grad, SetState& st, double position_lr)
    {
        adam.update(g.positions, grad.positions, st.m.positions, st.v.positions, position_lr);
        adam.update(g.log_scales, grad.log_scales, st.m.log_scales, st.v.log_scales, config.scale_lr);
        adam.update(g.rotations, grad.rotations, st.m.rotations, st.v.rotations, config.rotation_lr);
        adam.update(g.opacity_logits, grad.opacity_logits, st.m.opacity_logits, st.v.opacity_logits,
                    config.opacity_lr);
        adam.update(g.appearance.coeffs, grad.appearance.coeffs, st.m.appearance.coeffs, st.v.appearance.coeffs,
                    config.appearance_lr);
        adam.update(g.semantic.logits, grad.semantic.logits, st.m.semantic.logits, st.v.semantic.logits,
                    config.semantic_lr);
    }

    static double box_extent(const ObjectModel& o) { return o.track.box_dims.norm(); }

    void densify(int step)
    {
        const std::uint64_t seed = mix(config.seed, static_cast<std::uint64_t>(step));
        DensifyPlan plan = adaptive_control(scene.background, background.stats, config, config.background_extent,
                                            step > config.opacity_reset_interval, std::nullopt, seed);
        background.apply(plan);
        for (std::size_t s = 0; s < scene.objects.size(); ++s) {
            ObjectModel& o = scene.objects[s];
            plan = adaptive_control(o.gaussians, objects[s].stats, config, box_extent(o),
                                    step > config.opacity_reset_interval, o.track.box_dims, mix(seed, s + 1));
            objects[s].apply(plan);
        }
    }

    void reset_opacity()
    {
        const double cap = logit(0.01);
        const auto reset = [&](GaussianSet& g, SetState& st) {
            for (double& l : g.opacity_logits) {
                l = std::min(l, cap);
            }
            std::fill(st.m.opacity_logits.begin(), st.m.opacity_logits.end(), 0.0);
            std::fill(st.v.opacity_logits.begin(), st.v.opacity_logits.end(), 0.0);
        };
        reset(scene.background, background);
        for (std::size_t s = 0; s < scene.objects.size(); ++s) {
            reset(scene.objects[s].gaussians, objects[s]);
        }
    }

    IterationMetrics step()
    {
        if (iteration >= config.iterations) {
            throw ValidationError("train: all iterations already ran");
        }
        const int it = iteration;
        const std::size_t f = next_frame();
        const FrameRecord& frame = dataset.frames[f];

        RenderState state;
        const RenderOutputs out = render(scene, frame.camera, render_config(frame.timestep), state);
        RenderGradients up;
        IterationMetrics m = losses(f, it, out, &up);
        if (!std::isfinite(m.total)) {
            fill_counts(m);
            abort_non_finite(m, "loss");
        }
        ScreenStats screen;
        SceneGradients grads = render_backward(scene, state, up, &screen);

        if (reg_active(it)) {
            RenderState obj_state;
            const RenderOutputs obj =
                render(scene, frame.camera, objects_only(render_config(frame.timestep), scene), obj_state);
            const LossValue reg = loss_reg(obj.opacity);
            m.reg = reg.value;
            m.total += config.weights.reg * reg.value;
            RenderGradients reg_up;
            reg_up.opacity = reg.grad;
            for (double& g : reg_up.opacity) {
                g *= config.weights.reg;
            }
            grads.add(render_backward(scene, obj_state, reg_up));
        }
        if (!std::isfinite(m.total) || !std::isfinite(grads.max_abs())) {
            fill_counts(m);
            abort_non_finite(m, std::isfinite(m.total) ? "gradient" : "loss");
        }

        const int step_no = it + 1;
        const bool in_window = config.densify && step_no < config.densify_until;
        if (in_window) {
            accumulate(state, screen);
        }

        ++adam.step;
        const double pos_lr = config.position.at(it, config.iterations);
        update_set(scene.background, grads.background, background, pos_lr * config.background_extent);
        const double dt_lr = config.pose_translation.at(it, config.iterations);
        const double dy_lr = config.pose_yaw.at(it, config.iterations);
        for (std::size_t s = 0; s < scene.objects.size(); ++s) {
            ObjectModel& o = scene.objects[s];
            update_set(o.gaussians, grads.objects[s].gaussians, objects[s], pos_lr * box_extent(o));
            if (config.optimize_poses) {
                std::vector<double> dt = flatten(o.track.delta_translations);
                adam.update(dt, flatten(grads.objects[s].delta_translations), poses[s].dt_m, poses[s].dt_v, dt_lr);
                unflatten(dt, o.track.delta_translations);
                adam.update(o.track.delta_yaws, grads.objects[s].delta_yaws, poses[s].dy_m, poses[s].dy_v, dy_lr);
            }
        }
        adam.update(scene.sky.texels, grads.sky, sky_m, sky_v, config.sky.at(it, config.iterations));

        if (in_window && step_no > config.densify_from && step_no % config.densify_interval == 0) {
            densify(step_no);
        }
        if (in_window && config.opacity_reset && step_no % config.opacity_reset_interval == 0) {
            reset_opacity();
        }
        bool finite = all_finite(scene.background.positions) && all_finite(scene.sky.texels);
        for (const ObjectModel& o : scene.objects) {
            finite = finite && all_finite(o.gaussians.positions);
        }
        if (!finite) {
            fill_counts(m);
            abort_non_finite(m, "parameter");
        }
        iteration = step_no;
        fill_counts(m);
        if (output_dir && config.checkpoint_every > 0 && step_no % config.checkpoint_every == 0 &&
            step_no < config.iterations) {
            char name[32];
            std::snprintf(name, sizeof(name), "iter_%06d", step_no);
            save_checkpoint(scene, *output_dir / name);
        }
        return m;
    }
};

Trainer::Trainer(const Dataset& dataset, SceneGraph scene, TrainConfig config)
    : impl_(std::make_unique<Impl>(dataset, std::move(scene), config))
{
}

Trainer::~Trainer() = default;

void Trainer::set_pose_truth(std::vector<Tracklet> truth) { impl_->truth = std::move(truth); }

void Trainer::set_output_dir(std::filesystem::path dir) { impl_->output_dir = std::move(dir); }

IterationMetrics Trainer::step() { return impl_->step(); }

bool Trainer::done() const { return impl_->iteration >= impl_->config.iterations; }

int Trainer::iteration() const { return impl_->iteration; }

IterationMetrics Trainer::evaluate(std::size_t frame) const { return impl_->evaluate(frame); }

const SceneGraph& Trainer::scene() const { return impl_->scene; }

SceneGraph Trainer::take_scene() { return std::move(impl_->scene); }

SceneGraph train(const Dataset& dataset, SceneGraph scene, const TrainConfig& config,
                 const std::function<void(const IterationMetrics&)>& on_iteration,
                 const std::optional<std::filesystem::path>& output_dir, const std::vector<Tracklet>* pose_truth)
{
    Trainer trainer(dataset, std::move(scene), config);
    if (output_dir) {
        trainer.set_output_dir(*output_dir);
    }
    if (pose_truth) {
        trainer.set_pose_truth(*pose_truth);
    }
    while (!trainer.done()) {
        const IterationMetrics m = trainer.step();
        if (on_iteration) {
            on_iteration(m);
        }
    }
    return trainer.take_scene();
}

} // namespace urbansplat
