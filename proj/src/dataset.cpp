// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/dataset.hpp"

#include "json_util.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/parallel.hpp"

#include <cmath>
#include <cstdio>

namespace urbansplat {

namespace {

using detail::json;

std::string frame_file(const char* dir, std::size_t index, const char* ext)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/%04zu.%s", dir, index, ext);
    return buf;
}

void check_dims(const std::string& what, int w, int h, const Camera& cam)
{
    if (w != cam.width || h != cam.height) {
        throw ValidationError(what + ": size " + std::to_string(w) + "x" + std::to_string(h) +
                              " does not match camera " + std::to_string(cam.width) + "x" +
                              std::to_string(cam.height));
    }
}

std::vector<Tracklet> tracklets_from_json(const json& list, int num_frames, const std::string& where)
{
    std::vector<Tracklet> out;
    if (!list.is_array()) {
        throw ValidationError(where + ": expected an array");
    }
    for (const json& tj : list) {
        Tracklet t;
        t.id = detail::integer(detail::field(tj, "id", where), where + ".id");
        const std::string tw = where + "[" + std::to_string(t.id) + "]";
        t.track = PoseTrack::make(num_frames, detail::vec3_from(detail::field(tj, "box_dims", tw), tw));
        std::fill(t.track.valid.begin(), t.track.valid.end(), 0);
        for (const json& pj : detail::field(tj, "poses", tw)) {
            const int frame = detail::integer(detail::field(pj, "frame", tw), tw + ".frame");
            if (frame < 0 || frame >= num_frames) {
                throw ValidationError(tw + ": frame " + std::to_string(frame) + " outside [0, " +
                                      std::to_string(num_frames) + ")");
            }
            const auto fi = static_cast<std::size_t>(frame);
            t.track.rotations[fi] = detail::mat3_from(detail::field(pj, "R", tw), tw + ".R");
            t.track.translations[fi] = detail::vec3_from(detail::field(pj, "T", tw), tw + ".T");
            t.track.valid[fi] = 1;
        }
        for (const Tracklet& other : out) {
            if (other.id == t.id) {
                throw ValidationError(tw + ": duplicate tracklet id");
            }
        }
        out.push_back(std::move(t));
    }
    return out;
}

json tracklets_to_json(const std::vector<Tracklet>& list)
{
    json out = json::array();
    for (const Tracklet& t : list) {
        json poses = json::array();
        for (int f = 0; f < t.track.frame_count(); ++f) {
            if (!t.track.is_valid(f)) {
                continue;
            }
            const auto fi = static_cast<std::size_t>(f);
            poses.push_back({{"frame", f},
                             {"R", detail::to_json(t.track.rotations[fi])},
                             {"T", detail::to_json(t.track.translations[fi])}});
        }
        out.push_back({{"id", t.id}, {"box_dims", detail::to_json(t.track.box_dims)}, {"poses", poses}});
    }
    return out;
}

} // namespace

const Tracklet* Dataset::find_tracklet(int id) const
{
    for (const Tracklet& t : tracklets) {
        if (t.id == id) {
            return &t;
        }
    }
    return nullptr;
}

void Dataset::validate() const
{
    if (num_frames < 1) {
        throw ValidationError("dataset: num_frames must be positive");
    }
    if (class_names.empty() || vehicle_class < 0 || vehicle_class >= num_classes()) {
        throw ValidationError("dataset: vehicle_class must index class_names");
    }
    int previous = -1;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const FrameRecord& f = frames[i];
        const std::string where = "dataset frame " + std::to_string(i);
        if (f.timestep <= previous) {
            throw ValidationError(where + ": timesteps must be strictly increasing");
        }
        if (f.timestep >= num_frames) {
            throw ValidationError(where + ": timestep outside [0, num_frames)");
        }
        previous = f.timestep;
        f.camera.validate();
        check_dims(where + " image", f.image.width, f.image.height, f.camera);
        if (f.sky_mask) {
            check_dims(where + " sky mask", f.sky_mask->width, f.sky_mask->height, f.camera);
        }
        if (f.semantic) {
            check_dims(where + " semantic map", f.semantic->width, f.semantic->height, f.camera);
            for (std::uint16_t l : f.semantic->labels) {
                if (l != kIgnoreLabel && l >= num_classes()) {
                    throw ValidationError(where + ": semantic label " + std::to_string(l) +
                                          " >= number of classes");
                }
            }
        }
    }
    for (const std::vector<Tracklet>* list : {&tracklets, &truth_tracklets}) {
        for (const Tracklet& t : *list) {
            const std::string where = "tracklet " + std::to_string(t.id);
            if (t.track.frame_count() != num_frames) {
                throw ValidationError(where + ": pose track must span num_frames");
            }
            t.track.validate();
            if (!(t.track.box_dims.minCoeff() > 0.0)) {
                throw ValidationError(where + ": box dims must be positive");
            }
        }
    }
}

Dataset load_dataset(const std::filesystem::path& root)
{
    const std::filesystem::path scene_path = root / "scene.json";
    const std::string where = scene_path.string();
    json j;
    try {
        j = json::parse(read_text_file(scene_path));
    } catch (const json::exception& e) {
        throw ValidationError(where + ": " + e.what());
    }
    Dataset ds;
    ds.root = root;
    try {
        const json& frames = detail::field(j, "frames", where);
        if (!frames.is_array() || frames.empty()) {
            throw ValidationError(where + ": 'frames' must be a non-empty array");
        }
        ds.num_frames = j.contains("num_frames") ? detail::integer(j.at("num_frames"), where + ".num_frames")
                                                 : static_cast<int>(frames.size());
        if (j.contains("class_names")) {
            ds.class_names = j.at("class_names").get<std::vector<std::string>>();
        }
        if (j.contains("vehicle_class")) {
            ds.vehicle_class = detail::integer(j.at("vehicle_class"), where + ".vehicle_class");
        }
        ds.frames.resize(frames.size());
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const json& fj = frames[i];
            const std::string fw = where + ".frames[" + std::to_string(i) + "]";
            FrameRecord& f = ds.frames[i];
            f.timestep = fj.contains("timestep") ? detail::integer(fj.at("timestep"), fw + ".timestep")
                                                 : static_cast<int>(i);
            f.camera = detail::camera_from_json(detail::field(fj, "camera", fw), fw + ".camera");
            f.image_name = detail::field(fj, "image", fw).get<std::string>();
        }
        // File decoding is independent per frame.
        std::vector<std::string> errors(frames.size());
        parallel_for(frames.size(), 0, [&](std::size_t i) {
            const json& fj = frames[i];
            FrameRecord& f = ds.frames[i];
            try {
                f.image = read_png(root / f.image_name, true);
                if (fj.contains("lidar")) {
                    f.lidar = read_ply(root / fj.at("lidar").get<std::string>());
                }
                if (fj.contains("sky")) {
                    f.sky_mask = read_label_png(root / fj.at("sky").get<std::string>());
                }
                if (fj.contains("semantic")) {
                    f.semantic = read_label_png(root / fj.at("semantic").get<std::string>());
                }
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });
        for (const std::string& e : errors) {
            if (!e.empty()) {
                throw ValidationError(e);
            }
        }
        if (j.contains("tracklets")) {
            ds.tracklets = tracklets_from_json(j.at("tracklets"), ds.num_frames, where + ".tracklets");
        }
        if (j.contains("truth_tracklets")) {
            ds.truth_tracklets = tracklets_from_json(j.at("truth_tracklets"), ds.num_frames,
                                                     where + ".truth_tracklets");
        }
        if (j.contains("sfm")) {
            ds.sfm_points = read_ply(root / j.at("sfm").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ValidationError(where + ": " + e.what());
    }
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& root)
{
    ds.validate();
    for (const char* sub : {"images", "lidar", "sky", "sem"}) {
        std::error_code ec;
        std::filesystem::create_directories(root / sub, ec);
        if (ec) {
            throw RuntimeError("cannot create " + (root / sub).string() + ": " + ec.message());
        }
    }
    json j;
    j["num_frames"] = ds.num_frames;
    j["class_names"] = ds.class_names;
    j["vehicle_class"] = ds.vehicle_class;
    json frames = json::array();
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        const FrameRecord& f = ds.frames[i];
        json fj;
        fj["timestep"] = f.timestep;
        fj["camera"] = detail::camera_to_json(f.camera);
        fj["image"] = frame_file("images", i, "png");
        write_png(root / fj["image"].get<std::string>(), f.image, 8);
        fj["lidar"] = frame_file("lidar", i, "ply");
        write_ply(root / fj["lidar"].get<std::string>(), f.lidar);
        if (f.sky_mask) {
            fj["sky"] = frame_file("sky", i, "png");
            write_label_png(root / fj["sky"].get<std::string>(), *f.sky_mask);
        }
        if (f.semantic) {
            fj["semantic"] = frame_file("sem", i, "png");
            write_label_png(root / fj["semantic"].get<std::string>(), *f.semantic);
        }
        frames.push_back(fj);
    }
    j["frames"] = frames;
    j["tracklets"] = tracklets_to_json(ds.tracklets);
    if (!ds.truth_tracklets.empty()) {
        j["truth_tracklets"] = tracklets_to_json(ds.truth_tracklets);
    }
    if (ds.sfm_points) {
        j["sfm"] = "sfm.ply";
        write_ply(root / "sfm.ply", *ds.sfm_points);
    }
    write_text_file(root / "scene.json", j.dump(2) + "\n");
}

std::size_t DepthMap::hits() const
{
    std::size_t n = 0;
    for (double d : depth) {
        n += d > 0.0 ? 1 : 0;
    }
    return n;
}

bool inside_box(const Vec3& p, const Vec3& dims)
{
    return std::abs(p.x()) <= 0.5 * dims.x() && std::abs(p.y()) <= 0.5 * dims.y() &&
           std::abs(p.z()) <= 0.5 * dims.z();
}

bool in_view(const Camera& camera, const Vec3& world)
{
    const Vec3 p = camera.to_camera(world);
    if (!(p.z() > camera.near_clip)) {
        return false;
    }
    const double u = camera.fx * p.x() / p.z() + camera.cx;
    const double v = camera.fy * p.y() / p.z() + camera.cy;
    return u >= 0.0 && u < camera.width && v >= 0.0 && v < camera.height;
}

DepthMap project_lidar_depth(const FrameRecord& frame)
{
    const Camera& cam = frame.camera;
    DepthMap map;
    map.width = cam.width;
    map.height = cam.height;
    map.depth.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
    for (const Vec3& w : frame.lidar.positions) {
        if (!in_view(cam, w)) {
            continue;
        }
        const Vec3 p = cam.to_camera(w);
        const auto x = static_cast<int>(std::floor(cam.fx * p.x() / p.z() + cam.cx));
        const auto y = static_cast<int>(std::floor(cam.fy * p.y() / p.z() + cam.cy));
        if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) {
            continue;
        }
        double& d = map.depth[static_cast<std::size_t>(y) * cam.width + x];
        if (d == 0.0 || p.z() < d) {
            d = p.z();
        }
    }
    return map;
}

} // namespace urbansplat
