// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/checkpoint.hpp"

#include "json_util.hpp"
#include "urbansplat/errors.hpp"
#include "urbansplat/io.hpp"

#include <cmath>
#include <cstring>

namespace urbansplat {

namespace {

using detail::json;

constexpr double kQuaternionTolerance = 1e-6;

Vec4 storage_quaternion(const Vec4& q)
{
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ValidationError("non-finite or zero quaternion");
    }
    return std::abs(n - 1.0) > kQuaternionTolerance ? Vec4(q / n) : q;
}

std::string mode_name(AppearanceMode m) { return m == AppearanceMode::Static ? "static" : "fourier4d"; }

AppearanceMode mode_from(const std::string& s, const std::string& where)
{
    if (s == "static") {
        return AppearanceMode::Static;
    }
    if (s == "fourier4d") {
        return AppearanceMode::Fourier4D;
    }
    throw ValidationError(where + ": unknown appearance mode '" + s + "'");
}

std::size_t floats_per_point(const GaussianSet& g)
{
    return 3 + 3 + 4 + 1 + g.appearance.stride() + static_cast<std::size_t>(g.semantic.width());
}

void append_column(std::string& out, const std::vector<double>& values)
{
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto f = static_cast<float>(values[i]);
        std::memcpy(out.data() + start + 4 * i, &f, 4);
    }
}

void write_points(const std::filesystem::path& path, const GaussianSet& g)
{
    std::vector<double> rotations(g.rotations.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec4 q = storage_quaternion(g.rotation(i));
        for (int k = 0; k < 4; ++k) {
            rotations[4 * i + static_cast<std::size_t>(k)] = q[k];
        }
    }
    std::string out;
    out.reserve(g.size() * floats_per_point(g) * 4);
    append_column(out, g.positions);
    append_column(out, g.log_scales);
    append_column(out, rotations);
    append_column(out, g.opacity_logits);
    append_column(out, g.appearance.coeffs);
    append_column(out, g.semantic.logits);
    write_text_file(path, out);
}

void read_points(const std::filesystem::path& path, GaussianSet& g)
{
    const std::string bytes = read_text_file(path);
    const std::size_t expected = g.size() * floats_per_point(g) * 4;
    if (bytes.size() != expected) {
        throw ValidationError("shape mismatch: " + path.string() + " holds " +
                              std::to_string(bytes.size()) + " bytes, layout needs " +
                              std::to_string(expected));
    }
    std::size_t offset = 0;
    const auto take = [&](std::vector<double>& column) {
        for (double& v : column) {
            float f;
            std::memcpy(&f, bytes.data() + offset, 4);
            offset += 4;
            if (!std::isfinite(f)) {
                throw ValidationError("non-finite value in " + path.string());
            }
            v = f;
        }
    };
    take(g.positions);
    take(g.log_scales);
    take(g.rotations);
    take(g.opacity_logits);
    take(g.appearance.coeffs);
    take(g.semantic.logits);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g.set_rotation(i, storage_quaternion(g.rotation(i)));
    }
}

json layout_json(const GaussianSet& g)
{
    return {{"count", g.size()},
            {"appearance_mode", mode_name(g.appearance.mode)},
            {"sh_degree", g.appearance.sh_degree},
            {"fourier_k", g.appearance.fourier_k}};
}

GaussianSet layout_from(const json& j, SemanticKind kind, int num_classes, const std::string& where)
{
    const auto count = detail::field(j, "count", where).get<std::int64_t>();
    if (count < 0) {
        throw ValidationError(where + ": negative point count");
    }
    const int degree = detail::integer(detail::field(j, "sh_degree", where), where + ".sh_degree");
    const int k = detail::integer(detail::field(j, "fourier_k", where), where + ".fourier_k");
    const AppearanceMode mode =
        mode_from(detail::field(j, "appearance_mode", where).get<std::string>(), where);
    if (degree < 0 || degree > 3 || k < 1 || (mode == AppearanceMode::Static) != (k == 1)) {
        throw ValidationError(where + ": invalid appearance layout");
    }
    return GaussianSet::make(static_cast<std::size_t>(count), mode, degree, k, kind, num_classes);
}

json track_json(const PoseTrack& t)
{
    json rotations = json::array(), translations = json::array(), dts = json::array();
    for (int f = 0; f < t.frame_count(); ++f) {
        const auto i = static_cast<std::size_t>(f);
        rotations.push_back(detail::to_json(t.rotations[i]));
        translations.push_back(detail::to_json(t.translations[i]));
        dts.push_back(detail::to_json(t.delta_translations[i]));
    }
    json valid = json::array();
    for (std::uint8_t v : t.valid) {
        valid.push_back(v != 0);
    }
    return {{"rotations", rotations},     {"translations", translations},
            {"delta_translations", dts},  {"delta_yaws", t.delta_yaws},
            {"box_dims", detail::to_json(t.box_dims)}, {"valid", valid}};
}

PoseTrack track_from(const json& j, const std::string& where)
{
    const json& rot = detail::field(j, "rotations", where);
    const json& tr = detail::field(j, "translations", where);
    const json& dt = detail::field(j, "delta_translations", where);
    const json& dy = detail::field(j, "delta_yaws", where);
    const json& valid = detail::field(j, "valid", where);
    const std::size_t n = rot.size();
    if (!rot.is_array() || tr.size() != n || dt.size() != n || dy.size() != n || valid.size() != n) {
        throw ValidationError("shape mismatch: " + where + " per-frame arrays differ in length");
    }
    PoseTrack t = PoseTrack::make(static_cast<int>(n),
                                  detail::vec3_from(detail::field(j, "box_dims", where), where));
    for (std::size_t i = 0; i < n; ++i) {
        const std::string w = where + "[" + std::to_string(i) + "]";
        t.rotations[i] = detail::mat3_from(rot[i], w + ".rotation");
        t.translations[i] = detail::vec3_from(tr[i], w + ".translation");
        t.delta_translations[i] = detail::vec3_from(dt[i], w + ".delta_translation");
        t.delta_yaws[i] = detail::number(dy[i], w + ".delta_yaw");
        t.valid[i] = valid[i].get<bool>() ? 1 : 0;
    }
    return t;
}

std::filesystem::path face_path(const std::filesystem::path& dir, int f)
{
    return dir / ("sky_face_" + std::to_string(f) + ".png");
}

} // namespace

void save_checkpoint(const SceneGraph& scene, const std::filesystem::path& dir)
{
    scene.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw RuntimeError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    }
    json meta;
    meta["schema_version"] = kCheckpointSchemaVersion;
    meta["columns"] = json::array({json::array({"position", 3}), json::array({"log_scale", 3}),
                                   json::array({"rotation_wxyz", 4}), json::array({"opacity_logit", 1}),
                                   json::array({"appearance", "k*(l+1)^2*3"}),
                                   json::array({"semantic", "M or 1"})});
    meta["dtype"] = "float32_le";
    meta["num_classes"] = scene.num_classes;
    meta["vehicle_class"] = scene.vehicle_class;
    meta["num_frames"] = scene.num_frames;
    meta["background"] = layout_json(scene.background);
    meta["sky"] = {{"resolution", scene.sky.resolution}, {"bit_depth", 16}};
    json objects = json::array();
    for (const ObjectModel& o : scene.objects) {
        json entry = layout_json(o.gaussians);
        entry["id"] = o.id;
        entry["track"] = track_json(o.track);
        objects.push_back(entry);
    }
    meta["objects"] = objects;
    json views = json::array();
    for (const View& v : scene.views) {
        json entry = detail::camera_to_json(v.camera);
        entry["timestep"] = v.timestep;
        views.push_back(entry);
    }
    meta["views"] = views;

    write_points(dir / "background.bin", scene.background);
    for (const ObjectModel& o : scene.objects) {
        write_points(dir / ("object_" + std::to_string(o.id) + ".bin"), o.gaussians);
    }
    const int r = scene.sky.resolution;
    const std::size_t face_size = static_cast<std::size_t>(r) * r * 3;
    for (int f = 0; f < 6; ++f) {
        Image face = Image::make(r, r, 3);
        std::copy_n(scene.sky.texels.begin() + static_cast<std::ptrdiff_t>(face_size * f), face_size,
                    face.data.begin());
        write_png(face_path(dir, f), face, 16);
    }
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");
}

SceneGraph load_checkpoint(const std::filesystem::path& dir)
{
    const std::filesystem::path meta_path = dir / "meta.json";
    json meta;
    try {
        meta = json::parse(read_text_file(meta_path));
    } catch (const json::exception& e) {
        throw ValidationError(meta_path.string() + ": " + e.what());
    }
    const std::string where = meta_path.string();
    try {
        const int version = detail::integer(detail::field(meta, "schema_version", where), where);
        if (version != kCheckpointSchemaVersion) {
            throw ValidationError(where + ": unsupported schema_version " + std::to_string(version));
        }
        SceneGraph scene;
        scene.num_classes = detail::integer(detail::field(meta, "num_classes", where), where);
        scene.vehicle_class = detail::integer(detail::field(meta, "vehicle_class", where), where);
        scene.num_frames = detail::integer(detail::field(meta, "num_frames", where), where);
        if (scene.num_classes < 1) {
            throw ValidationError(where + ": num_classes must be positive");
        }
        scene.background = layout_from(detail::field(meta, "background", where),
                                       SemanticKind::BackgroundVector, scene.num_classes,
                                       where + ".background");
        read_points(dir / "background.bin", scene.background);
        for (const json& entry : detail::field(meta, "objects", where)) {
            ObjectModel o;
            o.id = detail::integer(detail::field(entry, "id", where), where + ".objects.id");
            const std::string ow = where + ".objects[" + std::to_string(o.id) + "]";
            o.gaussians = layout_from(entry, SemanticKind::ObjectScalar, scene.num_classes, ow);
            read_points(dir / ("object_" + std::to_string(o.id) + ".bin"), o.gaussians);
            o.track = track_from(detail::field(entry, "track", ow), ow + ".track");
            scene.objects.push_back(std::move(o));
        }
        if (meta.contains("views")) {
            for (const json& v : meta.at("views")) {
                View view;
                view.camera = detail::camera_from_json(v, where + ".views");
                view.timestep = detail::integer(detail::field(v, "timestep", where), where + ".views");
                scene.views.push_back(view);
            }
        }
        const int r = detail::integer(detail::field(detail::field(meta, "sky", where), "resolution", where),
                                      where + ".sky.resolution");
        if (r < 1) {
            throw ValidationError(where + ": sky resolution must be positive");
        }
        scene.sky = SkyCubemap::make(r, 0.0);
        const std::size_t face_size = static_cast<std::size_t>(r) * r * 3;
        for (int f = 0; f < 6; ++f) {
            const Image face = read_png(face_path(dir, f), true);
            if (face.width != r || face.height != r) {
                throw ValidationError("shape mismatch: " + face_path(dir, f).string() +
                                      " does not match the sky resolution");
            }
            std::copy(face.data.begin(), face.data.end(),
                      scene.sky.texels.begin() + static_cast<std::ptrdiff_t>(face_size * f));
        }
        scene.validate();
        return scene;
    } catch (const json::exception& e) {
        throw ValidationError(where + ": " + e.what());
    }
}

} // namespace urbansplat
