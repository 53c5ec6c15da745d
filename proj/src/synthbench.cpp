// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/synthbench.hpp"

#include "json_util.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/geometry.hpp"
#include "urbansplat/parallel.hpp"
#include "urbansplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace urbansplat {

namespace {

constexpr double kBodyFraction = 0.92;

using detail::json;
using ordered = nlohmann::ordered_json;

const double kY00 = 0.5 / std::sqrt(kPi);
constexpr int kRoadClass = 1;
constexpr int kBuildingClass = 3;
constexpr int kSkyClass = 0;
constexpr double kLogitScale = 6.0;

struct PointSpec {
    Vec3 position;
    Vec3 log_scale;
    Vec4 rotation{1.0, 0.0, 0.0, 0.0};
    Vec3 color;
    double opacity = 0.95;
};

// Appends points to a static degree-0 set; `label` < 0 marks object scalars.
void append_points(GaussianSet& set, const std::vector<PointSpec>& points, int label)
{
    GaussianSet add = GaussianSet::make(points.size(), set.appearance.mode, set.appearance.sh_degree,
                                        set.appearance.fourier_k, set.semantic.kind, set.semantic.num_classes);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const PointSpec& p = points[i];
        add.set_position(i, p.position);
        add.set_log_scale(i, p.log_scale);
        add.set_rotation(i, p.rotation);
        add.opacity_logits[i] = logit(p.opacity);
        const auto c = add.coeffs(i);
        for (int k = 0; k < 3; ++k) {
            c[static_cast<std::size_t>(k)] = (p.color[k] - 0.5) / kY00;
        }
        const auto s = add.semantic_logits(i);
        if (label >= 0) {
            s[static_cast<std::size_t>(label)] = kLogitScale;
        } else {
            s[0] = kLogitScale;
        }
    }
    set.append(add);
}

Vec3 clamp_color(const Vec3& c) { return c.cwiseMax(0.02).cwiseMin(0.98); }

// Points scattered over the side and top faces of a box in its own frame.
std::vector<PointSpec> box_surface(const Vec3& dims, int count, double point_scale, std::mt19937_64& rng,
                                   const std::function<Vec3(const Vec3&, int)>& color)
{
    // Faces: +x, -x, +y, -y, +z.
    const double ax = dims.y() * dims.z(), ay = dims.x() * dims.z(), az = dims.x() * dims.y();
    const double areas[5] = {ax, ax, ay, ay, az};
    std::discrete_distribution<int> pick(std::begin(areas), std::end(areas));
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<PointSpec> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int n = 0; n < count; ++n) {
        const int f = pick(rng);
        Vec3 p(u(rng) * dims.x(), u(rng) * dims.y(), u(rng) * dims.z());
        Vec3 ls = Vec3::Constant(std::log(point_scale));
        switch (f) {
        case 0: p.x() = 0.5 * dims.x(); ls.x() = std::log(0.25 * point_scale); break;
        case 1: p.x() = -0.5 * dims.x(); ls.x() = std::log(0.25 * point_scale); break;
        case 2: p.y() = 0.5 * dims.y(); ls.y() = std::log(0.25 * point_scale); break;
        case 3: p.y() = -0.5 * dims.y(); ls.y() = std::log(0.25 * point_scale); break;
        default: p.z() = 0.5 * dims.z(); ls.z() = std::log(0.25 * point_scale); break;
        }
        out.push_back({p, ls, Vec4(1.0, 0.0, 0.0, 0.0), clamp_color(color(p, f)), 0.95});
    }
    return out;
}

// Direction through the center of cubemap texel (face, row, col).
Vec3 texel_direction(int face, int row, int col, int r)
{
    const double sc = 2.0 * (col + 0.5) / r - 1.0;
    const double tc = 2.0 * (row + 0.5) / r - 1.0;
    switch (face) {
    case 0: return {1.0, -tc, -sc};
    case 1: return {-1.0, -tc, sc};
    case 2: return {sc, 1.0, tc};
    case 3: return {sc, -1.0, -tc};
    case 4: return {sc, -tc, 1.0};
    default: return {-sc, -tc, -1.0};
    }
}

SkyCubemap gradient_sky(int resolution)
{
    SkyCubemap sky = SkyCubemap::make(resolution, 0.0);
    const Vec3 horizon(0.86, 0.89, 0.93), zenith(0.32, 0.52, 0.84), below(0.55, 0.55, 0.58);
    for (int f = 0; f < 6; ++f) {
        for (int row = 0; row < resolution; ++row) {
            for (int col = 0; col < resolution; ++col) {
                const Vec3 d = texel_direction(f, row, col, resolution).normalized();
                const Vec3 c = d.z() >= 0.0 ? horizon + (zenith - horizon) * std::sqrt(d.z())
                                            : horizon + (below - horizon) * std::min(1.0, -4.0 * d.z());
                const std::size_t i =
                    ((static_cast<std::size_t>(f) * resolution + static_cast<std::size_t>(row)) * resolution +
                     static_cast<std::size_t>(col)) * 3;
                for (int k = 0; k < 3; ++k) {
                    sky.texels[i + static_cast<std::size_t>(k)] = c[k];
                }
            }
        }
    }
    return sky;
}

// Kept out of line: GCC 11 at -O3 vectorizes an inlined double-float-double
// round trip on Eigen vectors into a plain copy.
[[gnu::noinline]] double float_round(double v) { return static_cast<float>(v); }

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

Trajectory parse_trajectory(const std::string& s)
{
    if (s == "linear") return Trajectory::Linear;
    if (s == "arc") return Trajectory::Arc;
    throw ValidationError("synth spec: trajectory must be 'linear' or 'arc'");
}

CameraPath parse_path(const std::string& s)
{
    if (s == "orbit") return CameraPath::Orbit;
    if (s == "ego") return CameraPath::EgoForward;
    throw ValidationError("synth spec: camera_path must be 'orbit' or 'ego'");
}

} // namespace

void SynthSpec::validate() const
{
    if (frames < 1 || width < 1 || height < 1 || !(focal > 0.0)) {
        throw ValidationError("synth spec: frames, image size and focal must be positive");
    }
    if (static_boxes < 0 || box_points < 1 || objects < 0 || object_points < 1) {
        throw ValidationError("synth spec: counts out of range");
    }
    if (!(ground_size > 0.0 && ground_spacing > 0.0 && ground_size / ground_spacing <= 4000.0)) {
        throw ValidationError("synth spec: ground_size and ground_spacing must be positive");
    }
    if (!(object_dims.minCoeff() > 0.0) || !(orbit_radius > 0.0) || lidar_rays_x < 0 || lidar_rays_y < 0 ||
        !(lidar_depth_sigma >= 0.0) || sky_resolution < 1) {
        throw ValidationError("synth spec: object dims, orbit radius, lidar and sky settings out of range");
    }
}

SynthSpec synth_spec_from_json(const std::string& text)
{
    SynthSpec s;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("synth spec: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("synth spec: expected a JSON object");
    }
    try {
        for (const auto& [key, v] : j.items()) {
            const std::string w = "synth spec." + key;
            if (key == "seed") s.seed = v.get<std::uint64_t>();
            else if (key == "frames") s.frames = detail::integer(v, w);
            else if (key == "width") s.width = detail::integer(v, w);
            else if (key == "height") s.height = detail::integer(v, w);
            else if (key == "focal") s.focal = detail::number(v, w);
            else if (key == "camera_path") s.camera_path = parse_path(v.get<std::string>());
            else if (key == "orbit_radius") s.orbit_radius = detail::number(v, w);
            else if (key == "orbit_height") s.orbit_height = detail::number(v, w);
            else if (key == "orbit_arc_degrees") s.orbit_arc_degrees = detail::number(v, w);
            else if (key == "ego_speed") s.ego_speed = detail::number(v, w);
            else if (key == "ground_size") s.ground_size = detail::number(v, w);
            else if (key == "ground_spacing") s.ground_spacing = detail::number(v, w);
            else if (key == "static_boxes") s.static_boxes = detail::integer(v, w);
            else if (key == "box_points") s.box_points = detail::integer(v, w);
            else if (key == "objects") s.objects = detail::integer(v, w);
            else if (key == "object_dims") s.object_dims = detail::vec3_from(v, w);
            else if (key == "object_points") s.object_points = detail::integer(v, w);
            else if (key == "trajectory") s.trajectory = parse_trajectory(v.get<std::string>());
            else if (key == "object_speed") s.object_speed = detail::number(v, w);
            else if (key == "arc_rate") s.arc_rate = detail::number(v, w);
            else if (key == "lidar_rays_x") s.lidar_rays_x = detail::integer(v, w);
            else if (key == "lidar_rays_y") s.lidar_rays_y = detail::integer(v, w);
            else if (key == "lidar_depth_sigma") s.lidar_depth_sigma = detail::number(v, w);
            else if (key == "sky_resolution") s.sky_resolution = detail::integer(v, w);
            else throw ValidationError("synth spec: unknown key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::string synth_spec_to_json(const SynthSpec& s)
{
    ordered j;
    j["seed"] = s.seed;
    j["frames"] = s.frames;
    j["width"] = s.width;
    j["height"] = s.height;
    j["focal"] = s.focal;
    j["camera_path"] = s.camera_path == CameraPath::Orbit ? "orbit" : "ego";
    j["orbit_radius"] = s.orbit_radius;
    j["orbit_height"] = s.orbit_height;
    j["orbit_arc_degrees"] = s.orbit_arc_degrees;
    j["ego_speed"] = s.ego_speed;
    j["ground_size"] = s.ground_size;
    j["ground_spacing"] = s.ground_spacing;
    j["static_boxes"] = s.static_boxes;
    j["box_points"] = s.box_points;
    j["objects"] = s.objects;
    j["object_dims"] = {s.object_dims.x(), s.object_dims.y(), s.object_dims.z()};
    j["object_points"] = s.object_points;
    j["trajectory"] = s.trajectory == Trajectory::Linear ? "linear" : "arc";
    j["object_speed"] = s.object_speed;
    j["arc_rate"] = s.arc_rate;
    j["lidar_rays_x"] = s.lidar_rays_x;
    j["lidar_rays_y"] = s.lidar_rays_y;
    j["lidar_depth_sigma"] = s.lidar_depth_sigma;
    j["sky_resolution"] = s.sky_resolution;
    return j.dump(2) + "\n";
}

SynthResult generate(const SynthSpec& spec)
{
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int num_classes = static_cast<int>(default_class_names().size());

    SceneGraph scene;
    scene.num_frames = spec.frames;
    scene.num_classes = num_classes;
    scene.vehicle_class = kDefaultVehicleClass;
    scene.background =
        GaussianSet::make(0, AppearanceMode::Static, 0, 1, SemanticKind::BackgroundVector, num_classes);
    scene.sky = gradient_sky(spec.sky_resolution);

    // Ground: flat Gaussians with a smooth two-tone texture and lane stripes.
    const double p1 = 2.0 * kPi * u01(rng), p2 = 2.0 * kPi * u01(rng);
    const int cells = static_cast<int>(std::floor(spec.ground_size / spec.ground_spacing));
    std::vector<PointSpec> ground;
    const double flat = std::log(0.6 * spec.ground_spacing);
    for (int iy = 0; iy <= cells; ++iy) {
        for (int ix = 0; ix <= cells; ++ix) {
            const double x = -0.5 * spec.ground_size + ix * spec.ground_spacing;
            const double y = -0.5 * spec.ground_size + iy * spec.ground_spacing;
            const double wave = std::sin(0.45 * x + p1) * std::cos(0.35 * y + p2);
            Vec3 c = Vec3(0.42, 0.41, 0.40) + 0.12 * wave * Vec3(1.0, 0.9, 0.7);
            if (std::abs(std::fmod(std::abs(y), 7.0) - 3.5) < 0.25) {
                c = Vec3(0.85, 0.82, 0.6);
            }
            ground.push_back({Vec3(x, y, 0.0), Vec3(flat, flat, -4.0), Vec4(1.0, 0.0, 0.0, 0.0), clamp_color(c), 0.97});
        }
    }
    append_points(scene.background, ground, kRoadClass);

    // Static boxes around the scene center.
    for (int b = 0; b < spec.static_boxes; ++b) {
        const double angle = 2.0 * kPi * (b + u01(rng)) / std::max(1, spec.static_boxes);
        const double radius = 8.0 + 4.0 * u01(rng);
        const Vec3 dims(2.0 + 2.0 * u01(rng), 2.0 + 2.0 * u01(rng), 2.0 + 3.0 * u01(rng));
        const double yaw = 2.0 * kPi * u01(rng);
        const Vec3 base(0.3 + 0.5 * u01(rng), 0.3 + 0.5 * u01(rng), 0.3 + 0.5 * u01(rng));
        std::vector<PointSpec> pts = box_surface(dims, spec.box_points, 0.35, rng, [&](const Vec3& p, int face) {
            const double shade = face == 4 ? 0.85 : (face < 2 ? 1.0 : 0.92);
            return Vec3(base * shade + Vec3::Constant(0.08 * std::sin(3.0 * p.z())));
        });
        const Mat3 r = rotation_z(yaw);
        const Vec3 center(radius * std::cos(angle), radius * std::sin(angle), 0.5 * dims.z());
        for (PointSpec& p : pts) {
            const Mat3 local = quaternion_to_rotation(p.rotation);
            p.position = r * p.position + center;
            p.rotation = rotation_to_quaternion(r * local);
        }
        append_points(scene.background, pts, kBuildingClass);
    }

    // Vehicles on parallel lanes sharing one heading.
    const double heading = 2.0 * kPi * u01(rng);
    const Vec3 forward(std::cos(heading), std::sin(heading), 0.0);
    const Vec3 lateral(-forward.y(), forward.x(), 0.0);
    for (int o = 0; o < spec.objects; ++o) {
        ObjectModel obj;
        obj.id = o + 1;
        obj.gaussians = GaussianSet::make(0, AppearanceMode::Static, 0, 1, SemanticKind::ObjectScalar, num_classes);
        const Vec3 body(0.25 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng), 0.2 + 0.6 * u01(rng));
        const Vec3& dims = spec.object_dims;
        // Lighter nose, darker tail and roof so the heading is visible.
        const auto paint = [&](const Vec3& p, int face) {
            Vec3 c = body;
            if (face == 0 || p.x() > 0.3 * dims.x()) c += Vec3::Constant(0.22);
            if (face == 1) c -= Vec3::Constant(0.15);
            if (face == 4) c = 0.55 * body + Vec3::Constant(0.05);
            return c;
        };
        // The tracked box encloses the body with a small margin, so LiDAR hits
        // on the surface land strictly inside it.
        append_points(obj.gaussians, box_surface(kBodyFraction * dims, spec.object_points, 0.22, rng, paint), -1);
        obj.track = PoseTrack::make(spec.frames, dims);
        const double lane = (o - 0.5 * (spec.objects - 1)) * 4.5;
        const double half = 0.5 * (spec.frames - 1);
        Vec3 pos = Vec3::Zero();
        double yaw = heading;
        std::vector<Vec3> path(static_cast<std::size_t>(spec.frames));
        std::vector<double> yaws(static_cast<std::size_t>(spec.frames));
        for (int t = 0; t < spec.frames; ++t) {
            if (spec.trajectory == Trajectory::Arc) {
                yaw = heading + spec.arc_rate * (t - half);
            }
            if (t > 0) {
                pos += spec.object_speed * Vec3(std::cos(yaw), std::sin(yaw), 0.0);
            }
            path[static_cast<std::size_t>(t)] = pos;
            yaws[static_cast<std::size_t>(t)] = yaw;
        }
        const Vec3 mid = 0.5 * (path.front() + path.back());
        for (int t = 0; t < spec.frames; ++t) {
            const auto ti = static_cast<std::size_t>(t);
            obj.track.rotations[ti] = rotation_z(yaws[ti]);
            obj.track.translations[ti] = path[ti] - mid + lane * lateral + Vec3(0.0, 0.0, 0.5 * dims.z());
        }
        scene.objects.push_back(std::move(obj));
    }

    // Cameras.
    const double phase = 2.0 * kPi * u01(rng);
    std::vector<Camera> cameras;
    for (int t = 0; t < spec.frames; ++t) {
        const double s = spec.frames > 1 ? static_cast<double>(t) / (spec.frames - 1) - 0.5 : 0.0;
        Vec3 eye, target;
        if (spec.camera_path == CameraPath::Orbit) {
            const double a = phase + s * spec.orbit_arc_degrees * kPi / 180.0;
            eye = Vec3(spec.orbit_radius * std::cos(a), spec.orbit_radius * std::sin(a), spec.orbit_height);
            target = Vec3(0.0, 0.0, 0.5);
        } else {
            eye = forward * (s * spec.ego_speed * (spec.frames - 1) - spec.orbit_radius) + Vec3(0.0, 0.0, 1.8) -
                  4.5 * lateral;
            target = eye + 10.0 * forward - Vec3(0.0, 0.0, 1.6);
        }
        cameras.push_back(look_at(spec.width, spec.height, spec.focal, eye, target));
        scene.views.push_back({cameras.back(), t});
    }

    Dataset ds;
    ds.num_frames = spec.frames;
    ds.vehicle_class = scene.vehicle_class;
    ds.frames.resize(static_cast<std::size_t>(spec.frames));
    for (const ObjectModel& o : scene.objects) {
        ds.tracklets.push_back({o.id, o.track});
    }
    parallel_for(ds.frames.size(), 0, [&](std::size_t t) {
        FrameRecord& f = ds.frames[t];
        f.timestep = static_cast<int>(t);
        f.camera = cameras[t];
        RenderConfig rc;
        rc.timestep = f.timestep;
        rc.num_threads = 1;
        const RenderOutputs out = render_reference(scene, f.camera, rc);
        f.image = Image::make(spec.width, spec.height, 3);
        for (std::size_t i = 0; i < out.color.size(); ++i) {
            f.image.data[i] = quantize8(out.color[i]);
        }
        const std::size_t pixels = out.pixel_count();
        const auto m = static_cast<std::size_t>(num_classes);
        f.sky_mask = LabelMap{spec.width, spec.height, std::vector<std::uint16_t>(pixels, 0)};
        f.semantic = LabelMap{spec.width, spec.height, std::vector<std::uint16_t>(pixels, kSkyClass)};
        for (std::size_t p = 0; p < pixels; ++p) {
            if (out.opacity[p] < 0.5) {
                f.sky_mask->labels[p] = 1;
                continue;
            }
            const double* z = out.semantic.data() + p * m;
            f.semantic->labels[p] = static_cast<std::uint16_t>(std::max_element(z, z + m) - z);
        }
        // LiDAR: opacity-normalized depth sampled on a sparse pixel grid.
        std::mt19937_64 noise_rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * (t + 1)));
        std::normal_distribution<double> noise(0.0, 1.0);
        const Mat3 rt = f.camera.rotation.transpose();
        for (int ry = 0; ry < spec.lidar_rays_y; ++ry) {
            for (int rx = 0; rx < spec.lidar_rays_x; ++rx) {
                const int px = std::min(spec.width - 1, (2 * rx + 1) * spec.width / (2 * spec.lidar_rays_x));
                const int py = std::min(spec.height - 1, (2 * ry + 1) * spec.height / (2 * spec.lidar_rays_y));
                const std::size_t p = static_cast<std::size_t>(py) * spec.width + px;
                if (out.opacity[p] < 0.5) {
                    continue;
                }
                double z = out.depth[p] / out.opacity[p];
                if (spec.lidar_depth_sigma > 0.0) {
                    z += spec.lidar_depth_sigma * noise(noise_rng);
                }
                if (!(z > f.camera.near_clip)) {
                    continue;
                }
                const Vec3 cam((px + 0.5 - f.camera.cx) / f.camera.fx * z, (py + 0.5 - f.camera.cy) / f.camera.fy * z, z);
                const Vec3 w = rt * (cam - f.camera.translation);
                f.lidar.positions.emplace_back(float_round(w.x()), float_round(w.y()), float_round(w.z()));
            }
        }
    });
    ds.validate();
    scene.validate();
    return {std::move(scene), std::move(ds)};
}

PerturbResult perturb(const Dataset& dataset, double sigma_translation, double sigma_yaw, std::uint64_t seed,
                      bool perturb_z)
{
    if (!(sigma_translation >= 0.0) || !(sigma_yaw >= 0.0)) {
        throw ValidationError("perturb: sigmas must be >= 0");
    }
    PerturbResult out;
    out.dataset = dataset;
    out.dataset.truth_tracklets = dataset.truth_tracklets.empty() ? dataset.tracklets : dataset.truth_tracklets;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Tracklet& t : out.dataset.tracklets) {
        for (int f = 0; f < t.track.frame_count(); ++f) {
            if (!t.track.is_valid(f)) {
                continue;
            }
            const auto fi = static_cast<std::size_t>(f);
            PoseNoise pn;
            pn.id = t.id;
            pn.frame = f;
            Vec3 eps(n(rng), n(rng), n(rng));
            if (!perturb_z) {
                eps.z() = 0.0;
            }
            const double yaw = n(rng);
            if (sigma_translation > 0.0) {
                const Vec3 before = t.track.translations[fi];
                t.track.translations[fi] = before + sigma_translation * eps;
                pn.delta_translation = t.track.translations[fi] - before;
            }
            if (sigma_yaw > 0.0) {
                pn.delta_yaw = sigma_yaw * yaw;
                t.track.rotations[fi] = t.track.rotations[fi] * rotation_z(pn.delta_yaw);
            }
            out.noise.push_back(pn);
        }
    }
    return out;
}

} // namespace urbansplat
