// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/init.hpp"

#include "json_util.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/geometry.hpp"
#include "urbansplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

namespace urbansplat {

namespace {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const
    {
        std::size_t h = static_cast<std::size_t>(k.x) * 73856093u;
        h ^= static_cast<std::size_t>(k.y) * 19349663u;
        h ^= static_cast<std::size_t>(k.z) * 83492791u;
        return h;
    }
};

CellKey cell_of(const Vec3& p, double size)
{
    return {static_cast<std::int64_t>(std::floor(p.x() / size)),
            static_cast<std::int64_t>(std::floor(p.y() / size)),
            static_cast<std::int64_t>(std::floor(p.z() / size))};
}

bool in_any_box(const Dataset& ds, int frame, const Vec3& world)
{
    for (const Tracklet& t : ds.tracklets) {
        if (!t.track.is_valid(frame)) {
            continue;
        }
        const auto f = static_cast<std::size_t>(frame);
        const Vec3 local = t.track.rotations[f].transpose() * (world - t.track.translations[f]);
        if (inside_box(local, t.track.box_dims)) {
            return true;
        }
    }
    return false;
}

Vec3 pixel_color(const FrameRecord& frame, const Vec3& world)
{
    const Camera& cam = frame.camera;
    const Vec3 p = cam.to_camera(world);
    const int x = std::clamp(static_cast<int>(std::floor(cam.fx * p.x() / p.z() + cam.cx)), 0, cam.width - 1);
    const int y = std::clamp(static_cast<int>(std::floor(cam.fy * p.y() / p.z() + cam.cy)), 0, cam.height - 1);
    return {frame.image.at(x, y, 0), frame.image.at(x, y, 1), frame.image.at(x, y, 2)};
}

} // namespace

PointCloud collect_object_points(const Dataset& ds, int object_id, std::uint64_t seed)
{
    const Tracklet* t = ds.find_tracklet(object_id);
    if (!t) {
        throw ValidationError("collect_object_points: unknown object id " + std::to_string(object_id));
    }
    PointCloud out;
    for (const FrameRecord& frame : ds.frames) {
        if (!t->track.is_valid(frame.timestep)) {
            continue;
        }
        const auto f = static_cast<std::size_t>(frame.timestep);
        const Mat3 rt = t->track.rotations[f].transpose();
        for (const Vec3& w : frame.lidar.positions) {
            const Vec3 local = rt * (w - t->track.translations[f]);
            if (inside_box(local, t->track.box_dims)) {
                out.positions.push_back(local);
            }
        }
    }
    if (out.size() < kObjectMinPoints) {
        out.positions.clear();
        std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(object_id + 1)));
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        const Vec3& d = t->track.box_dims;
        out.positions.reserve(kObjectFallbackPoints);
        for (std::size_t i = 0; i < kObjectFallbackPoints; ++i) {
            const double x = u(rng), y = u(rng), z = u(rng);
            out.positions.emplace_back(x * d.x(), y * d.y(), z * d.z());
        }
    }
    return out;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size)
{
    if (!(voxel_size > 0.0)) {
        throw ValidationError("voxel size must be positive");
    }
    std::unordered_map<CellKey, std::size_t, CellHash> index;
    std::vector<Vec3> sums;
    std::vector<Vec3> color_sums;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto [it, inserted] = index.try_emplace(cell_of(cloud.positions[i], voxel_size), sums.size());
        if (inserted) {
            sums.push_back(Vec3::Zero());
            counts.push_back(0);
            if (cloud.has_colors()) {
                color_sums.push_back(Vec3::Zero());
            }
        }
        sums[it->second] += cloud.positions[i];
        if (cloud.has_colors()) {
            color_sums[it->second] += cloud.colors[i];
        }
        ++counts[it->second];
    }
    PointCloud out;
    out.positions.resize(sums.size());
    for (std::size_t v = 0; v < sums.size(); ++v) {
        out.positions[v] = sums[v] / static_cast<double>(counts[v]);
    }
    if (cloud.has_colors()) {
        out.colors.resize(sums.size());
        for (std::size_t v = 0; v < sums.size(); ++v) {
            out.colors[v] = color_sums[v] / static_cast<double>(counts[v]);
        }
    }
    return out;
}

PointCloud init_background(const Dataset& ds, double voxel_size)
{
    PointCloud lidar;
    for (const FrameRecord& frame : ds.frames) {
        for (const Vec3& w : frame.lidar.positions) {
            if (!in_any_box(ds, frame.timestep, w)) {
                lidar.positions.push_back(w);
            }
        }
    }
    const PointCloud down = voxel_downsample(lidar, voxel_size);
    PointCloud out;
    for (const Vec3& p : down.positions) {
        for (const FrameRecord& frame : ds.frames) {
            if (in_view(frame.camera, p)) {
                out.positions.push_back(p);
                break;
            }
        }
    }
    if (ds.sfm_points) {
        out.positions.insert(out.positions.end(), ds.sfm_points->positions.begin(),
                             ds.sfm_points->positions.end());
    }
    if (out.positions.empty()) {
        throw ValidationError("no background points");
    }
    return out;
}

PointCloud colorize(const PointCloud& points, const Dataset& ds)
{
    PointCloud out;
    out.positions = points.positions;
    out.colors.assign(points.size(), Vec3::Constant(0.5));
    parallel_for(points.size(), 0, [&](std::size_t i) {
        for (const FrameRecord& frame : ds.frames) {
            if (in_view(frame.camera, points.positions[i])) {
                out.colors[i] = pixel_color(frame, points.positions[i]);
                return;
            }
        }
    });
    return out;
}

PointCloud colorize_object(const PointCloud& points, const Dataset& ds, const PoseTrack& track)
{
    PointCloud out;
    out.positions = points.positions;
    out.colors.assign(points.size(), Vec3::Constant(0.5));
    parallel_for(points.size(), 0, [&](std::size_t i) {
        for (const FrameRecord& frame : ds.frames) {
            if (!track.is_valid(frame.timestep)) {
                continue;
            }
            const auto f = static_cast<std::size_t>(frame.timestep);
            const Vec3 w = track.rotations[f] * points.positions[i] + track.translations[f];
            if (in_view(frame.camera, w)) {
                out.colors[i] = pixel_color(frame, w);
                return;
            }
        }
    });
    return out;
}

std::vector<double> knn_mean_distance(const std::vector<Vec3>& points, int k)
{
    const std::size_t n = points.size();
    std::vector<double> out(n, 0.0);
    if (n < 2 || k < 1) {
        return out;
    }
    Vec3 lo = points[0], hi = points[0];
    for (const Vec3& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 extent = (hi - lo).cwiseMax(1e-9);
    // About two points per cell for uniformly spread data.
    double cell = std::cbrt(extent.prod() * 2.0 / static_cast<double>(n));
    cell = std::max({cell, extent.maxCoeff() / 1024.0, 1e-6});
    std::unordered_map<CellKey, std::vector<std::uint32_t>, CellHash> grid;
    for (std::size_t i = 0; i < n; ++i) {
        grid[cell_of(points[i], cell)].push_back(static_cast<std::uint32_t>(i));
    }
    const auto kk = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(k), n - 1));
    const std::int64_t max_ring = static_cast<std::int64_t>(std::ceil(extent.maxCoeff() / cell)) + 1;
    parallel_for(n, 0, [&](std::size_t i) {
        const Vec3& p = points[i];
        const CellKey c = cell_of(p, cell);
        std::vector<double> best; // sorted squared distances, size <= kk
        const auto offer = [&](double d2) {
            if (best.size() < kk) {
                best.insert(std::upper_bound(best.begin(), best.end(), d2), d2);
            } else if (d2 < best.back()) {
                best.pop_back();
                best.insert(std::upper_bound(best.begin(), best.end(), d2), d2);
            }
        };
        for (std::int64_t r = 0; r <= max_ring; ++r) {
            for (std::int64_t dx = -r; dx <= r; ++dx) {
                for (std::int64_t dy = -r; dy <= r; ++dy) {
                    for (std::int64_t dz = -r; dz <= r; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) {
                            continue;
                        }
                        const auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
                        if (it == grid.end()) {
                            continue;
                        }
                        for (std::uint32_t j : it->second) {
                            if (j != i) {
                                offer((points[j] - p).squaredNorm());
                            }
                        }
                    }
                }
            }
            // Every unvisited point is at least r * cell away.
            const double reach = static_cast<double>(r) * cell;
            if (best.size() == kk && best.back() <= reach * reach) {
                break;
            }
        }
        double sum = 0.0;
        for (double d2 : best) {
            sum += std::sqrt(d2);
        }
        out[i] = best.empty() ? 0.0 : sum / static_cast<double>(best.size());
    });
    return out;
}

void InitConfig::validate() const
{
    if (!(voxel_size > 0.0) || sh_degree < 0 || sh_degree > kMaxShDegree || object_fourier_k < 1 ||
        !(initial_opacity > 0.0 && initial_opacity < 1.0) || sky_resolution < 1) {
        throw ValidationError("invalid initialization config");
    }
}

InitConfig init_config_from_json(const std::string& text)
{
    detail::json j;
    try {
        j = detail::json::parse(text);
    } catch (const detail::json::exception& e) {
        throw ValidationError(std::string("init config: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("init config: expected a JSON object");
    }
    InitConfig c;
    for (const auto& [key, v] : j.items()) {
        const std::string where = "init config." + key;
        if (key == "voxel_size") c.voxel_size = detail::number(v, where);
        else if (key == "sh_degree") c.sh_degree = detail::integer(v, where);
        else if (key == "object_fourier_k") c.object_fourier_k = detail::integer(v, where);
        else if (key == "initial_opacity") c.initial_opacity = detail::number(v, where);
        else if (key == "sky_resolution") c.sky_resolution = detail::integer(v, where);
        else if (key == "sky_value") c.sky_value = detail::number(v, where);
        else if (key == "seed") {
            if (!v.is_number_unsigned()) {
                throw ValidationError(where + ": expected a non-negative integer");
            }
            c.seed = v.get<std::uint64_t>();
        } else {
            throw ValidationError("init config: unknown key '" + key + "'");
        }
    }
    c.validate();
    return c;
}

std::string init_config_to_json(const InitConfig& c)
{
    nlohmann::ordered_json j;
    j["voxel_size"] = c.voxel_size;
    j["sh_degree"] = c.sh_degree;
    j["object_fourier_k"] = c.object_fourier_k;
    j["initial_opacity"] = c.initial_opacity;
    j["sky_resolution"] = c.sky_resolution;
    j["sky_value"] = c.sky_value;
    j["seed"] = c.seed;
    return j.dump(2) + "\n";
}

GaussianSet gaussians_from_points(const PointCloud& points, const InitConfig& config, AppearanceMode mode,
                                  int fourier_k, SemanticKind kind, int num_classes)
{
    GaussianSet g = GaussianSet::make(points.size(), mode, config.sh_degree, fourier_k, kind, num_classes);
    const std::vector<double> dist = knn_mean_distance(points.positions, 3);
    const double y00 = 0.5 / std::sqrt(kPi);
    const double logit0 = logit(config.initial_opacity);
    for (std::size_t i = 0; i < points.size(); ++i) {
        g.set_position(i, points.positions[i]);
        // Coincident points would give a zero scale.
        const double d = dist[i] > 0.0 ? std::max(dist[i], 1e-4) : config.voxel_size;
        g.set_log_scale(i, Vec3::Constant(std::log(d)));
        g.set_rotation(i, Vec4(1, 0, 0, 0));
        g.opacity_logits[i] = logit0;
        const Vec3 c = points.has_colors() ? points.colors[i] : Vec3::Constant(0.5);
        auto coeffs = g.coeffs(i);
        for (int ch = 0; ch < 3; ++ch) {
            coeffs[static_cast<std::size_t>(ch)] = (c[ch] - kShColorOffset) / y00;
        }
    }
    return g;
}

SceneGraph init_scene(const Dataset& ds, const InitConfig& config)
{
    config.validate();
    ds.validate();
    SceneGraph scene;
    scene.num_classes = ds.num_classes();
    scene.vehicle_class = ds.vehicle_class;
    scene.num_frames = ds.num_frames;
    const PointCloud bg = colorize(init_background(ds, config.voxel_size), ds);
    scene.background = gaussians_from_points(bg, config, AppearanceMode::Static, 1,
                                             SemanticKind::BackgroundVector, scene.num_classes);
    for (const Tracklet& t : ds.tracklets) {
        ObjectModel o;
        o.id = t.id;
        o.track = t.track;
        const PointCloud pts = colorize_object(collect_object_points(ds, t.id, config.seed), ds, t.track);
        const int k = config.object_fourier_k;
        o.gaussians = gaussians_from_points(pts, config, k > 1 ? AppearanceMode::Fourier4D : AppearanceMode::Static,
                                            k, SemanticKind::ObjectScalar, scene.num_classes);
        scene.objects.push_back(std::move(o));
    }
    scene.sky = SkyCubemap::make(config.sky_resolution, config.sky_value);
    for (const FrameRecord& f : ds.frames) {
        scene.views.push_back({f.camera, f.timestep});
    }
    scene.validate();
    return scene;
}

} // namespace urbansplat
