// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/rasterizer.hpp"

#include "urbansplat/errors.hpp"
#include "urbansplat/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace urbansplat {

namespace {

constexpr double kMinDeterminant = 1e-12;

bool object_selected(const RenderConfig& config, int id)
{
    if (!config.include_object_ids) {
        return true;
    }
    const auto& ids = *config.include_object_ids;
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

/// Clamped alpha of one Gaussian at a pixel. `falloff` receives the unclamped
/// kernel value so callers can tell whether the clamp was active.
inline double blend_alpha(const ProjectedGaussian& g, double opacity, double px, double py,
                          double clamp, double& falloff, double& dx, double& dy)
{
    dx = px - g.mean2d.x();
    dy = py - g.mean2d.y();
    const double q = g.conic.x() * dx * dx + 2.0 * g.conic.y() * dx * dy + g.conic.z() * dy * dy;
    falloff = std::exp(-0.5 * q);
    return std::min(clamp, opacity * falloff);
}

/// Same value as blend_alpha on a packed entry, or 0 when the exponent is
/// provably below the threshold cut (which skips the exp).
inline double splat_alpha(const TileSplat& g, double px, double py, double clamp, double& falloff,
                          double& dx, double& dy)
{
    dx = px - g.mean_x;
    dy = py - g.mean_y;
    const double q = g.conic_a * dx * dx + 2.0 * g.conic_b * dx * dy + g.conic_c * dy * dy;
    const double power = -0.5 * q;
    if (power < g.min_power) {
        falloff = 0.0;
        return 0.0;
    }
    falloff = std::exp(power);
    return std::min(clamp, g.opacity * falloff);
}

TileSplat pack_splat(const ProjectedGaussian& g, double opacity, const Vec3& color, double threshold)
{
    TileSplat s{};
    s.mean_x = g.mean2d.x();
    s.mean_y = g.mean2d.y();
    s.conic_a = g.conic.x();
    s.conic_b = g.conic.y();
    s.conic_c = g.conic.z();
    s.opacity = opacity;
    // The margin keeps the cut conservative against exp/log rounding.
    s.min_power = opacity > 0.0 ? std::log(threshold / opacity) - 1e-6 : 0.0;
    s.red = color.x();
    s.green = color.y();
    s.blue = color.z();
    s.depth = g.view_depth;
    s.source = static_cast<std::uint32_t>(g.source_index);
    return s;
}

struct Prepared {
    WorldSet world;
    std::vector<Vec3> colors;
    std::vector<ProjectedGaussian> sorted;
    std::vector<double> radius; // per world index
    std::size_t culled = 0;
    std::size_t degenerate = 0;
};

Prepared prepare(const SceneGraph& scene, const Camera& camera, const RenderConfig& config)
{
    config.validate();
    camera.validate();
    Prepared prep;
    prep.world = assemble_world_set(scene, config);
    const WorldSet& world = prep.world;
    const std::size_t n = world.size();
    prep.colors = world_colors(world, camera.center());
    prep.radius.assign(n, 0.0);

    std::vector<std::optional<ProjectedGaussian>> projected(n);
    parallel_for(n, config.num_threads, [&](std::size_t i) {
        projected[i] = project_gaussian(world.means[i], world.covariance(i), camera);
    });

    prep.sorted.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!projected[i]) {
            ++prep.culled;
            continue;
        }
        ProjectedGaussian g = *projected[i];
        const double det = g.cov2d(0, 0) * g.cov2d(1, 1) - g.cov2d(0, 1) * g.cov2d(1, 0);
        if (!(det > kMinDeterminant)) {
            ++prep.degenerate;
            continue;
        }
        g.source_index = static_cast<int>(i);
        prep.sorted.push_back(g);
    }
    std::sort(prep.sorted.begin(), prep.sorted.end(),
              [](const ProjectedGaussian& a, const ProjectedGaussian& b) {
                  if (a.view_depth != b.view_depth) {
                      return a.view_depth < b.view_depth;
                  }
                  return a.source_index < b.source_index;
              });
    return prep;
}

/// Half-extent (px) of the region where opacity * falloff can reach the alpha
/// threshold; 0 if it never does.
Vec2 support_extent(const ProjectedGaussian& g, double opacity, double alpha_threshold)
{
    if (!(opacity >= alpha_threshold)) {
        return Vec2::Zero();
    }
    const double r2 = 2.0 * std::log(opacity / alpha_threshold);
    // Slight inflation keeps the rectangle a strict superset under rounding.
    const double r = std::sqrt(std::max(r2, 0.0)) * (1.0 + 1e-9) + 1e-6;
    return {r * std::sqrt(g.cov2d(0, 0)), r * std::sqrt(g.cov2d(1, 1))};
}

void init_outputs(RenderOutputs& out, const Camera& camera, int num_classes)
{
    out.width = camera.width;
    out.height = camera.height;
    out.num_classes = num_classes;
    const std::size_t px = out.pixel_count();
    out.color.assign(px * 3, 0.0);
    out.opacity.assign(px, 0.0);
    out.depth.assign(px, 0.0);
    out.semantic.assign(px * static_cast<std::size_t>(num_classes), 0.0);
}

void fill_visibility(RenderOutputs& out, const SceneGraph& scene, const Prepared& prep)
{
    out.objects.clear();
    for (const ObjectModel& o : scene.objects) {
        out.objects.push_back({o.id, 0, 0});
    }
    for (std::size_t i = 0; i < prep.world.size(); ++i) {
        const int slot = prep.world.sources[i].slot;
        if (slot >= 0) {
            ++out.objects[static_cast<std::size_t>(slot)].assembled;
        }
    }
    for (const ProjectedGaussian& g : prep.sorted) {
        const int slot = prep.world.sources[static_cast<std::size_t>(g.source_index)].slot;
        if (slot >= 0) {
            ++out.objects[static_cast<std::size_t>(slot)].projected;
        }
    }
    out.culled = prep.culled;
    out.degenerate_skipped = prep.degenerate;
}

void composite_sky(RenderOutputs& out, const SceneGraph& scene, const Camera& camera,
                   std::vector<double>* sky_cache)
{
    const std::size_t px = out.pixel_count();
    if (sky_cache) {
        sky_cache->assign(px * 3, 0.0);
    }
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * out.width + x;
            const Vec3 sky = scene.sky.sample(camera.ray_direction(x + 0.5, y + 0.5));
            const double t = 1.0 - out.opacity[p];
            for (int ch = 0; ch < 3; ++ch) {
                out.color[3 * p + ch] += t * sky[ch];
                if (sky_cache) {
                    (*sky_cache)[3 * p + ch] = sky[ch];
                }
            }
        }
    }
}

} // namespace

void RenderConfig::validate() const
{
    if (tile_size < 1) {
        throw ValidationError("render config: tile_size must be >= 1");
    }
    const auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_unit(alpha_threshold) || !in_unit(alpha_clamp) || !in_unit(saturation_stop)) {
        throw ValidationError("render config: thresholds must lie in (0, 1)");
    }
}

Mat3 WorldSet::covariance(std::size_t i) const
{
    const Mat3 m = rotations[i] * log_scales[i].array().exp().matrix().asDiagonal();
    Mat3 cov;
    for (int r = 0; r < 3; ++r) {
        for (int c = r; c < 3; ++c) {
            cov(r, c) = cov(c, r) = m.row(r).dot(m.row(c));
        }
    }
    return cov;
}

WorldSet assemble_world_set(const SceneGraph& scene, const RenderConfig& config)
{
    if (config.timestep < 0 || config.timestep >= scene.num_frames) {
        throw ValidationError("render: timestep " + std::to_string(config.timestep) +
                              " outside [0, " + std::to_string(scene.num_frames) + ")");
    }
    WorldSet w;
    w.num_classes = scene.num_classes;
    const int t = config.timestep;

    int degree = config.include_background ? scene.background.appearance.sh_degree : 0;
    w.object_poses.resize(scene.objects.size());
    w.object_included.assign(scene.objects.size(), 0);
    std::size_t total = config.include_background ? scene.background.size() : 0;
    for (std::size_t s = 0; s < scene.objects.size(); ++s) {
        const ObjectModel& o = scene.objects[s];
        if (!object_selected(config, o.id) || !o.track.is_valid(t)) {
            continue;
        }
        w.object_included[s] = 1;
        w.object_poses[s] = effective_pose(o.track, t);
        degree = std::max(degree, o.gaussians.appearance.sh_degree);
        total += o.gaussians.size();
    }
    w.sh_degree = degree;
    const std::size_t shw = w.sh_width();
    const auto m = static_cast<std::size_t>(scene.num_classes);

    w.means.reserve(total);
    w.rotations.reserve(total);
    w.log_scales.reserve(total);
    w.opacities.reserve(total);
    w.sh.assign(total * shw, 0.0);
    w.semantic.assign(total * m, 0.0);
    w.sources.reserve(total);

    std::vector<double> scratch;
    const auto push_model = [&](const GaussianSet& g, int slot, const RigidPose* pose) {
        const int basis = g.appearance.basis_count();
        scratch.assign(static_cast<std::size_t>(basis) * 3, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t row = w.means.size();
            const Mat3 r_local = quaternion_to_rotation(normalize_quaternion(g.rotation(i)));
            if (pose) {
                const WorldFrame f = object_to_world(g.position(i), r_local, *pose);
                w.means.push_back(f.mean);
                w.rotations.push_back(f.rotation);
            } else {
                w.means.push_back(g.position(i));
                w.rotations.push_back(r_local);
            }
            w.log_scales.push_back(g.log_scale(i));
            w.opacities.push_back(g.opacity(i));
            eval_fourier_coeffs(g.coeffs(i), g.appearance.fourier_k, basis, t, scene.num_frames,
                                scratch);
            std::copy(scratch.begin(), scratch.end(), w.sh.begin() + static_cast<std::ptrdiff_t>(row * shw));
            const auto sem = g.semantic_logits(i);
            double* dst = w.semantic.data() + row * m;
            if (g.semantic.kind == SemanticKind::BackgroundVector) {
                std::copy(sem.begin(), sem.end(), dst);
            } else {
                dst[scene.vehicle_class] = sem[0];
            }
            w.sources.push_back({slot, i});
        }
    };

    if (config.include_background) {
        push_model(scene.background, -1, nullptr);
    }
    for (std::size_t s = 0; s < scene.objects.size(); ++s) {
        if (w.object_included[s]) {
            push_model(scene.objects[s].gaussians, static_cast<int>(s), &w.object_poses[s]);
        }
    }
    return w;
}

std::vector<Vec3> world_colors(const WorldSet& world, const Vec3& origin)
{
    std::vector<Vec3> colors(world.size());
    const std::size_t shw = world.sh_width();
    for (std::size_t i = 0; i < world.size(); ++i) {
        Vec3 dir = world.means[i] - origin;
        if (!(dir.norm() > 0.0)) {
            dir = Vec3::UnitZ();
        }
        colors[i] = eval_sh_color({world.sh.data() + i * shw, shw}, dir, world.sh_degree);
    }
    return colors;
}

RenderOutputs render(const SceneGraph& scene, const Camera& camera, const RenderConfig& config)
{
    RenderState state;
    return render(scene, camera, config, state);
}

RenderOutputs render(const SceneGraph& scene, const Camera& camera, const RenderConfig& config,
                     RenderState& state)
{
    Prepared prep = prepare(scene, camera, config);
    RenderOutputs out;
    init_outputs(out, camera, scene.num_classes);
    fill_visibility(out, scene, prep);

    const int ts = config.tile_size;
    const int tiles_x = (camera.width + ts - 1) / ts;
    const int tiles_y = (camera.height + ts - 1) / ts;
    const std::size_t num_tiles = static_cast<std::size_t>(tiles_x) * tiles_y;

    // Bin in global depth order so every tile list inherits it.
    std::vector<std::vector<std::uint32_t>> bins(num_tiles);
    for (std::size_t k = 0; k < prep.sorted.size(); ++k) {
        const ProjectedGaussian& g = prep.sorted[k];
        const auto src = static_cast<std::size_t>(g.source_index);
        const Vec2 ext = support_extent(g, prep.world.opacities[src], config.alpha_threshold);
        prep.radius[src] = std::max(ext.x(), ext.y());
        if (ext.x() <= 0.0) {
            continue;
        }
        // Pixel x is sampled at x + 0.5.
        const int x0 = std::max(0, static_cast<int>(std::ceil(g.mean2d.x() - ext.x() - 0.5)));
        const int x1 = std::min(camera.width - 1, static_cast<int>(std::floor(g.mean2d.x() + ext.x() - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(g.mean2d.y() - ext.y() - 0.5)));
        const int y1 = std::min(camera.height - 1, static_cast<int>(std::floor(g.mean2d.y() + ext.y() - 0.5)));
        if (x0 > x1 || y0 > y1) {
            continue;
        }
        for (int ty = y0 / ts; ty <= y1 / ts; ++ty) {
            for (int tx = x0 / ts; tx <= x1 / ts; ++tx) {
                bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(static_cast<std::uint32_t>(k));
            }
        }
    }
    state.tile_offsets.assign(num_tiles + 1, 0);
    for (std::size_t t = 0; t < num_tiles; ++t) {
        state.tile_offsets[t + 1] = state.tile_offsets[t] + bins[t].size();
    }
    state.tile_entries.resize(state.tile_offsets.back());
    for (std::size_t t = 0; t < num_tiles; ++t) {
        std::copy(bins[t].begin(), bins[t].end(),
                  state.tile_entries.begin() + static_cast<std::ptrdiff_t>(state.tile_offsets[t]));
    }
    bins.clear();
    state.tile_splats.resize(state.tile_entries.size());
    for (std::size_t e = 0; e < state.tile_entries.size(); ++e) {
        const ProjectedGaussian& g = prep.sorted[state.tile_entries[e]];
        const auto src = static_cast<std::size_t>(g.source_index);
        state.tile_splats[e] = pack_splat(g, prep.world.opacities[src], prep.colors[src],
                                          config.alpha_threshold);
    }

    const std::size_t px_count = out.pixel_count();
    state.final_transmittance.assign(px_count, 1.0);
    state.contributors.assign(px_count, 0);
    const auto m = static_cast<std::size_t>(scene.num_classes);
    const WorldSet& world = prep.world;
    std::vector<std::size_t> tile_blended(num_tiles, 0), tile_clamped(num_tiles, 0);
    const TileSplat* splats = state.tile_splats.data();

    parallel_for(num_tiles, config.num_threads, [&](std::size_t tile) {
        const int tx = static_cast<int>(tile % static_cast<std::size_t>(tiles_x));
        const int ty = static_cast<int>(tile / static_cast<std::size_t>(tiles_x));
        const std::size_t begin = state.tile_offsets[tile];
        const std::size_t end = state.tile_offsets[tile + 1];
        for (int y = ty * ts; y < std::min(camera.height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(camera.width, (tx + 1) * ts); ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
                const double px = x + 0.5;
                const double py = y + 0.5;
                double t = 1.0;
                double c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0;
                double* sem = out.semantic.data() + p * m;
                std::uint32_t contributors = 0;
                for (std::size_t e = begin; e < end; ++e) {
                    const TileSplat& g = splats[e];
                    double falloff, dx, dy;
                    const double alpha = splat_alpha(g, px, py, config.alpha_clamp, falloff, dx, dy);
                    if (alpha < config.alpha_threshold) {
                        continue;
                    }
                    ++tile_blended[tile];
                    if (alpha >= config.alpha_clamp) {
                        ++tile_clamped[tile];
                    }
                    const double w = alpha * t;
                    const std::size_t src = g.source;
                    c0 += w * g.red;
                    c1 += w * g.green;
                    c2 += w * g.blue;
                    d += w * g.depth;
                    const double* s = world.semantic.data() + src * m;
                    for (std::size_t k = 0; k < m; ++k) {
                        sem[k] += w * s[k];
                    }
                    t *= 1.0 - alpha;
                    contributors = static_cast<std::uint32_t>(e - begin + 1);
                    if (t < config.saturation_stop) {
                        break;
                    }
                }
                out.color[3 * p] = c0;
                out.color[3 * p + 1] = c1;
                out.color[3 * p + 2] = c2;
                out.opacity[p] = 1.0 - t;
                out.depth[p] = d;
                state.final_transmittance[p] = t;
                state.contributors[p] = contributors;
            }
        }
    });

    for (std::size_t t = 0; t < num_tiles; ++t) {
        out.blended += tile_blended[t];
        out.clamped += tile_clamped[t];
    }

    if (config.composite_sky) {
        composite_sky(out, scene, camera, &state.sky_color);
    } else {
        state.sky_color.clear();
    }

    state.camera = camera;
    state.config = config;
    state.tiles_x = tiles_x;
    state.tiles_y = tiles_y;
    state.world = std::move(prep.world);
    state.colors = std::move(prep.colors);
    state.sorted = std::move(prep.sorted);
    state.radius = std::move(prep.radius);
    return out;
}

RenderOutputs render_reference(const SceneGraph& scene, const Camera& camera,
                               const RenderConfig& config)
{
    const Prepared prep = prepare(scene, camera, config);
    RenderOutputs out;
    init_outputs(out, camera, scene.num_classes);
    fill_visibility(out, scene, prep);
    const auto m = static_cast<std::size_t>(scene.num_classes);
    const WorldSet& world = prep.world;

    parallel_for(static_cast<std::size_t>(camera.height), config.num_threads, [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < camera.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
            double t = 1.0;
            double c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0;
            double* sem = out.semantic.data() + p * m;
            for (const ProjectedGaussian& g : prep.sorted) {
                const auto src = static_cast<std::size_t>(g.source_index);
                double falloff, dx, dy;
                const double alpha = blend_alpha(g, world.opacities[src], x + 0.5, y + 0.5,
                                                 config.alpha_clamp, falloff, dx, dy);
                if (alpha < config.alpha_threshold) {
                    continue;
                }
                const double w = alpha * t;
                const Vec3& c = prep.colors[src];
                c0 += w * c.x();
                c1 += w * c.y();
                c2 += w * c.z();
                d += w * g.view_depth;
                const double* s = world.semantic.data() + src * m;
                for (std::size_t k = 0; k < m; ++k) {
                    sem[k] += w * s[k];
                }
                t *= 1.0 - alpha;
            }
            out.color[3 * p] = c0;
            out.color[3 * p + 1] = c1;
            out.color[3 * p + 2] = c2;
            out.opacity[p] = 1.0 - t;
            out.depth[p] = d;
        }
    });
    if (config.composite_sky) {
        composite_sky(out, scene, camera, nullptr);
    }
    return out;
}

SceneGradients SceneGradients::zeros_like(const SceneGraph& scene)
{
    const auto zero_set = [](const GaussianSet& g) {
        GaussianSet z = g;
        std::fill(z.positions.begin(), z.positions.end(), 0.0);
        std::fill(z.log_scales.begin(), z.log_scales.end(), 0.0);
        std::fill(z.rotations.begin(), z.rotations.end(), 0.0);
        std::fill(z.opacity_logits.begin(), z.opacity_logits.end(), 0.0);
        std::fill(z.appearance.coeffs.begin(), z.appearance.coeffs.end(), 0.0);
        std::fill(z.semantic.logits.begin(), z.semantic.logits.end(), 0.0);
        return z;
    };
    SceneGradients g;
    g.background = zero_set(scene.background);
    for (const ObjectModel& o : scene.objects) {
        ObjectGradients og;
        og.gaussians = zero_set(o.gaussians);
        og.delta_translations.assign(o.track.delta_translations.size(), Vec3::Zero());
        og.delta_yaws.assign(o.track.delta_yaws.size(), 0.0);
        g.objects.push_back(std::move(og));
    }
    g.sky.assign(scene.sky.texels.size(), 0.0);
    return g;
}

namespace {

void add_column(std::vector<double>& dst, const std::vector<double>& src, double scale)
{
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += scale * src[i];
    }
}

void add_set(GaussianSet& dst, const GaussianSet& src, double scale)
{
    add_column(dst.positions, src.positions, scale);
    add_column(dst.log_scales, src.log_scales, scale);
    add_column(dst.rotations, src.rotations, scale);
    add_column(dst.opacity_logits, src.opacity_logits, scale);
    add_column(dst.appearance.coeffs, src.appearance.coeffs, scale);
    add_column(dst.semantic.logits, src.semantic.logits, scale);
}

double max_abs_column(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

double max_abs_set(const GaussianSet& g)
{
    return std::max({max_abs_column(g.positions), max_abs_column(g.log_scales),
                     max_abs_column(g.rotations), max_abs_column(g.opacity_logits),
                     max_abs_column(g.appearance.coeffs), max_abs_column(g.semantic.logits)});
}

} // namespace

void SceneGradients::add(const SceneGradients& other, double scale)
{
    add_set(background, other.background, scale);
    for (std::size_t s = 0; s < objects.size(); ++s) {
        add_set(objects[s].gaussians, other.objects[s].gaussians, scale);
        for (std::size_t t = 0; t < objects[s].delta_yaws.size(); ++t) {
            objects[s].delta_translations[t] += scale * other.objects[s].delta_translations[t];
            objects[s].delta_yaws[t] += scale * other.objects[s].delta_yaws[t];
        }
    }
    add_column(sky, other.sky, scale);
}

double SceneGradients::max_abs() const
{
    double m = std::max(max_abs_set(background), max_abs_column(sky));
    for (const ObjectGradients& o : objects) {
        m = std::max(m, max_abs_set(o.gaussians));
        for (std::size_t t = 0; t < o.delta_yaws.size(); ++t) {
            m = std::max({m, std::abs(o.delta_yaws[t]), o.delta_translations[t].cwiseAbs().maxCoeff()});
        }
    }
    return m;
}

SceneGradients render_backward(const SceneGraph& scene, const RenderState& state,
                               const RenderGradients& upstream, ScreenStats* stats)
{
    const Camera& camera = state.camera;
    const RenderConfig& config = state.config;
    const WorldSet& world = state.world;
    const std::size_t px_count = static_cast<std::size_t>(camera.width) * camera.height;
    const auto m = static_cast<std::size_t>(scene.num_classes);

    const auto check = [&](const std::vector<double>& v, std::size_t expected, const char* name) {
        if (!v.empty() && v.size() != expected) {
            throw ValidationError(std::string("render_backward: upstream ") + name +
                                  " gradient has the wrong shape");
        }
    };
    check(upstream.color, px_count * 3, "color");
    check(upstream.opacity, px_count, "opacity");
    check(upstream.depth, px_count, "depth");
    check(upstream.semantic, px_count * m, "semantic");

    SceneGradients grads = SceneGradients::zeros_like(scene);

    // Per-entry record: mean2d(2) conic(3) opacity(1) color(3) depth(1) semantic(m).
    const std::size_t stride = 10 + m;
    const int ts = config.tile_size;
    const std::size_t num_tiles = state.tile_offsets.size() - 1;
    std::vector<std::vector<double>> tile_grads(num_tiles);
    const bool has_c = !upstream.color.empty();
    const bool has_o = !upstream.opacity.empty();
    const bool has_d = !upstream.depth.empty();
    const bool has_s = !upstream.semantic.empty();
    const bool sky = config.composite_sky && !state.sky_color.empty();

    parallel_for(num_tiles, config.num_threads, [&](std::size_t tile) {
        const std::size_t begin = state.tile_offsets[tile];
        const std::size_t end = state.tile_offsets[tile + 1];
        std::vector<double>& rec = tile_grads[tile];
        rec.assign((end - begin) * stride, 0.0);
        const int tx = static_cast<int>(tile % static_cast<std::size_t>(state.tiles_x));
        const int ty = static_cast<int>(tile / static_cast<std::size_t>(state.tiles_x));
        for (int y = ty * ts; y < std::min(camera.height, (ty + 1) * ts); ++y) {
            for (int x = tx * ts; x < std::min(camera.width, (tx + 1) * ts); ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
                const std::uint32_t n = state.contributors[p];
                if (n == 0) {
                    continue;
                }
                const Vec3 gc = has_c ? Vec3(upstream.color[3 * p], upstream.color[3 * p + 1],
                                             upstream.color[3 * p + 2])
                                      : Vec3::Zero();
                const double gd = has_d ? upstream.depth[p] : 0.0;
                const double* gs = has_s ? upstream.semantic.data() + p * m : nullptr;
                const double t_final = state.final_transmittance[p];
                double g_tfinal = has_o ? -upstream.opacity[p] : 0.0;
                if (sky && has_c) {
                    g_tfinal += gc.dot(Vec3(state.sky_color[3 * p], state.sky_color[3 * p + 1],
                                            state.sky_color[3 * p + 2]));
                }
                if (gc.isZero(0.0) && gd == 0.0 && g_tfinal == 0.0 && gs == nullptr) {
                    continue;
                }
                double t = t_final;
                Vec3 acc_c = Vec3::Zero();
                double acc_d = 0.0;
                for (std::size_t k = n; k-- > 0;) {
                    const TileSplat& g = state.tile_splats[begin + k];
                    const double o = g.opacity;
                    double falloff, dx, dy;
                    const double alpha = splat_alpha(g, x + 0.5, y + 0.5, config.alpha_clamp, falloff,
                                                     dx, dy);
                    if (alpha < config.alpha_threshold) {
                        continue;
                    }
                    const double t_i = t / (1.0 - alpha);
                    const double w = alpha * t_i;
                    double* r = rec.data() + k * stride;
                    const Vec3 c(g.red, g.green, g.blue);
                    r[6] += gc.x() * w;
                    r[7] += gc.y() * w;
                    r[8] += gc.z() * w;
                    r[9] += gd * w;
                    if (gs) {
                        for (std::size_t j = 0; j < m; ++j) {
                            r[10 + j] += gs[j] * w;
                        }
                    }
                    const double d_alpha = t_i * (gc.dot(c - acc_c) + gd * (g.depth - acc_d)) -
                                           g_tfinal * t_final / (1.0 - alpha);
                    acc_c = alpha * c + (1.0 - alpha) * acc_c;
                    acc_d = alpha * g.depth + (1.0 - alpha) * acc_d;
                    t = t_i;
                    if (o * falloff >= config.alpha_clamp) {
                        continue;
                    }
                    r[5] += d_alpha * falloff;
                    const double dq = d_alpha * (-0.5 * alpha);
                    r[2] += dq * dx * dx;
                    r[3] += dq * 2.0 * dx * dy;
                    r[4] += dq * dy * dy;
                    // q depends on the mean through d = pixel - mean.
                    r[0] += dq * -2.0 * (g.conic_a * dx + g.conic_b * dy);
                    r[1] += dq * -2.0 * (g.conic_b * dx + g.conic_c * dy);
                }
            }
        }
    });

    // Merge in fixed tile order.
    const std::size_t count = state.sorted.size();
    std::vector<double> acc(count * stride, 0.0);
    for (std::size_t tile = 0; tile < num_tiles; ++tile) {
        const std::size_t begin = state.tile_offsets[tile];
        const std::vector<double>& rec = tile_grads[tile];
        for (std::size_t k = 0; k < state.tile_offsets[tile + 1] - begin; ++k) {
            double* dst = acc.data() + static_cast<std::size_t>(state.tile_entries[begin + k]) * stride;
            const double* src = rec.data() + k * stride;
            for (std::size_t j = 0; j < stride; ++j) {
                dst[j] += src[j];
            }
        }
    }
    tile_grads.clear();

    if (stats) {
        stats->mean2d_grad_norm.assign(world.size(), 0.0);
        stats->radius.assign(world.size(), 0.0);
        stats->visible.assign(world.size(), 0);
    }

    // Per-point chain from image space back to world space.
    const std::size_t n_world = world.size();
    const std::size_t shw = world.sh_width();
    std::vector<Vec3> g_mean(n_world, Vec3::Zero());
    std::vector<Mat3> g_cov(n_world, Mat3::Zero());
    std::vector<double> g_sh(n_world * shw, 0.0);
    std::vector<double> g_opacity(n_world, 0.0);
    std::vector<double> g_sem(n_world * m, 0.0);
    const Vec3 origin = camera.center();

    parallel_for(count, config.num_threads, [&](std::size_t k) {
        const ProjectedGaussian& g = state.sorted[k];
        const auto src = static_cast<std::size_t>(g.source_index);
        const double* r = acc.data() + k * stride;
        const Mat2 conic_m = (Mat2() << g.conic.x(), g.conic.y(), g.conic.y(), g.conic.z()).finished();
        const Mat2 g_conic = (Mat2() << r[2], 0.5 * r[3], 0.5 * r[3], r[4]).finished();
        const Mat2 g_cov2d = -conic_m * g_conic * conic_m;
        Vec3 gm;
        Mat3 gcov;
        project_gaussian_backward(world.means[src], world.covariance(src), camera, Vec2(r[0], r[1]),
                                  g_cov2d, r[9], gm, gcov);
        Vec3 dir = world.means[src] - origin;
        if (!(dir.norm() > 0.0)) {
            dir = Vec3::UnitZ();
        } else {
            gm += eval_sh_color_backward({world.sh.data() + src * shw, shw}, dir, world.sh_degree,
                                         Vec3(r[6], r[7], r[8]), {g_sh.data() + src * shw, shw});
        }
        g_mean[src] = gm;
        g_cov[src] = gcov;
        g_opacity[src] = r[5];
        for (std::size_t j = 0; j < m; ++j) {
            g_sem[src * m + j] = r[10 + j];
        }
        if (stats) {
            const double gx = r[0] * 0.5 * camera.width;
            const double gy = r[1] * 0.5 * camera.height;
            stats->mean2d_grad_norm[src] = std::sqrt(gx * gx + gy * gy);
            stats->radius[src] = state.radius[src];
            stats->visible[src] = state.radius[src] > 0.0 ? 1 : 0;
        }
    });

    // World space back to model parameters.
    const int t = config.timestep;
    std::vector<Mat3> g_pose_rot(n_world, Mat3::Zero());
    parallel_for(n_world, config.num_threads, [&](std::size_t i) {
        const WorldSet::Source s = world.sources[i];
        const GaussianSet& model = s.slot < 0 ? scene.background
                                              : scene.objects[static_cast<std::size_t>(s.slot)].gaussians;
        GaussianSet& gmodel = s.slot < 0 ? grads.background
                                         : grads.objects[static_cast<std::size_t>(s.slot)].gaussians;
        const std::size_t li = s.index;
        Vec3 g_local_mean = g_mean[i];
        Mat3 g_local_cov = g_cov[i];
        if (s.slot >= 0) {
            const RigidPose& pose = world.object_poses[static_cast<std::size_t>(s.slot)];
            const Mat3 local_cov = build_covariance(model.log_scale(li), model.rotation(li));
            g_local_mean = pose.rotation.transpose() * g_mean[i];
            g_local_cov = pose.rotation.transpose() * g_cov[i] * pose.rotation;
            g_pose_rot[i] = g_mean[i] * model.position(li).transpose() +
                            2.0 * g_cov[i] * pose.rotation * local_cov;
        }
        gmodel.set_position(li, g_local_mean);
        Vec3 g_ls;
        Vec4 g_q;
        build_covariance_backward(model.log_scale(li), model.rotation(li), g_local_cov, g_ls, g_q);
        gmodel.set_log_scale(li, g_ls);
        gmodel.set_rotation(li, g_q);
        const double o = world.opacities[i];
        gmodel.opacity_logits[li] = g_opacity[i] * o * (1.0 - o);

        const int basis = model.appearance.basis_count();
        auto gc = gmodel.coeffs(li);
        const std::size_t width = static_cast<std::size_t>(basis) * 3;
        for (int f = 0; f < model.appearance.fourier_k; ++f) {
            const double wgt = fourier_weight(f, t, scene.num_frames);
            for (std::size_t j = 0; j < width; ++j) {
                gc[static_cast<std::size_t>(f) * width + j] = g_sh[i * shw + j] * wgt;
            }
        }
        auto gs = gmodel.semantic_logits(li);
        if (model.semantic.kind == SemanticKind::BackgroundVector) {
            for (std::size_t j = 0; j < m; ++j) {
                gs[j] = g_sem[i * m + j];
            }
        } else {
            gs[0] = g_sem[i * m + static_cast<std::size_t>(scene.vehicle_class)];
        }
    });

    // Pose corrections: sequential sum in point order.
    for (std::size_t slot = 0; slot < scene.objects.size(); ++slot) {
        if (!world.object_included[slot]) {
            continue;
        }
        Mat3 g_r = Mat3::Zero();
        Vec3 g_tr = Vec3::Zero();
        for (std::size_t i = 0; i < n_world; ++i) {
            if (world.sources[i].slot == static_cast<int>(slot)) {
                g_r += g_pose_rot[i];
                g_tr += g_mean[i];
            }
        }
        const PoseTrack& track = scene.objects[slot].track;
        const auto ti = static_cast<std::size_t>(t);
        const Mat3 d_rot = track.rotations[ti] * rotation_z_derivative(track.delta_yaws[ti]);
        grads.objects[slot].delta_yaws[ti] = g_r.cwiseProduct(d_rot).sum();
        grads.objects[slot].delta_translations[ti] = g_tr;
    }

    // Sky texels.
    if (sky && has_c) {
        for (int y = 0; y < camera.height; ++y) {
            for (int x = 0; x < camera.width; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
                const double tr = state.final_transmittance[p];
                const double vis = 1.0 - (1.0 - tr);
                const auto fp = scene.sky.footprint(camera.ray_direction(x + 0.5, y + 0.5));
                for (const auto& tap : fp.taps) {
                    for (int ch = 0; ch < 3; ++ch) {
                        grads.sky[tap.texel + static_cast<std::size_t>(ch)] +=
                            upstream.color[3 * p + static_cast<std::size_t>(ch)] * vis * tap.weight;
                    }
                }
            }
        }
    }
    return grads;
}

RenderConfig objects_only(const RenderConfig& config, const SceneGraph& scene)
{
    RenderConfig c = config;
    c.include_background = false;
    std::vector<int> ids;
    for (const ObjectModel& o : scene.objects) {
        if (object_selected(config, o.id)) {
            ids.push_back(o.id);
        }
    }
    c.include_object_ids = ids;
    c.composite_sky = false;
    return c;
}

DecomposedOutputs render_decomposed(const SceneGraph& scene, const Camera& camera,
                                    const RenderConfig& config, const DecomposeTarget& target)
{
    RenderConfig c = config;
    switch (target.kind) {
    case DecomposeTarget::Kind::All:
        break;
    case DecomposeTarget::Kind::Background:
        c.include_background = true;
        c.include_object_ids = std::vector<int>{};
        break;
    case DecomposeTarget::Kind::Object:
        if (!scene.find_object(target.object_id)) {
            throw ValidationError("render_decomposed: unknown object id " +
                                  std::to_string(target.object_id));
        }
        c.include_background = false;
        c.include_object_ids = std::vector<int>{target.object_id};
        break;
    }
    DecomposedOutputs out;
    out.render = render(scene, camera, c);
    RenderConfig all_objects = config;
    all_objects.include_object_ids.reset();
    out.object_opacity = render(scene, camera, objects_only(all_objects, scene)).opacity;
    return out;
}

} // namespace urbansplat
