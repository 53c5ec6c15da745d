// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/edit.hpp"

#include "json_util.hpp"
#include "urbansplat/errors.hpp"

#include <utility>

namespace urbansplat {

namespace {

using detail::json;

FrameRange range_from(const json& e, const std::string& where)
{
    FrameRange r;
    if (!e.contains("frames")) {
        return r;
    }
    const json& f = e.at("frames");
    if (!f.is_array() || f.size() != 2) {
        throw ValidationError(where + ".frames: expected [first, last]");
    }
    if (!f[0].is_null()) {
        r.first = detail::integer(f[0], where + ".frames");
    }
    if (!f[1].is_null()) {
        r.last = detail::integer(f[1], where + ".frames");
    }
    return r;
}

json range_to(const FrameRange& r)
{
    return json::array({r.first ? json(*r.first) : json(nullptr), r.last ? json(*r.last) : json(nullptr)});
}

void check_keys(const json& e, std::initializer_list<const char*> allowed, const std::string& where)
{
    for (const auto& [key, value] : e.items()) {
        bool ok = false;
        for (const char* a : allowed) {
            ok = ok || key == a;
        }
        if (!ok) {
            throw ValidationError(where + ": unknown key '" + key + "'");
        }
    }
}

ObjectModel& object_or_throw(SceneGraph& scene, int id)
{
    ObjectModel* o = scene.find_object(id);
    if (!o) {
        throw ValidationError("edit: unknown object id " + std::to_string(id));
    }
    return *o;
}

// Resolved inclusive frame bounds.
std::pair<int, int> resolve(const FrameRange& r, const PoseTrack& track)
{
    const int n = track.frame_count();
    const int first = r.first.value_or(0);
    const int last = r.last.value_or(n - 1);
    if (first < 0 || last >= n || first > last) {
        throw ValidationError("edit: frame range [" + std::to_string(first) + ", " + std::to_string(last) +
                              "] outside 0.." + std::to_string(n - 1));
    }
    return {first, last};
}

} // namespace

EditScript edit_script_from_json(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("edit script: ") + e.what());
    }
    if (!j.is_object() || !j.contains("edits") || !j.at("edits").is_array()) {
        throw ValidationError("edit script: expected {\"edits\": [...]}");
    }
    check_keys(j, {"edits"}, "edit script");
    EditScript script;
    std::size_t index = 0;
    for (const json& e : j.at("edits")) {
        const std::string where = "edit script: edits[" + std::to_string(index++) + "]";
        if (!e.is_object() || !e.contains("op") || !e.at("op").is_string()) {
            throw ValidationError(where + ": missing \"op\"");
        }
        const std::string op = e.at("op").get<std::string>();
        if (op == "translate") {
            check_keys(e, {"op", "object", "delta", "frames"}, where);
            script.edits.emplace_back(TranslateEdit{detail::integer(detail::field(e, "object", where), where),
                                                    detail::vec3_from(detail::field(e, "delta", where), where),
                                                    range_from(e, where)});
        } else if (op == "rotate_yaw") {
            check_keys(e, {"op", "object", "angle", "frames"}, where);
            script.edits.emplace_back(RotateYawEdit{detail::integer(detail::field(e, "object", where), where),
                                                    detail::number(detail::field(e, "angle", where), where),
                                                    range_from(e, where)});
        } else if (op == "swap") {
            check_keys(e, {"op", "objects"}, where);
            const json& ids = detail::field(e, "objects", where);
            if (!ids.is_array() || ids.size() != 2) {
                throw ValidationError(where + ": swap needs two object ids");
            }
            script.edits.emplace_back(SwapEdit{detail::integer(ids[0], where), detail::integer(ids[1], where)});
        } else {
            throw ValidationError(where + ": unknown op '" + op + "'");
        }
    }
    return script;
}

std::string edit_script_to_json(const EditScript& script)
{
    json edits = json::array();
    for (const Edit& edit : script.edits) {
        if (const auto* t = std::get_if<TranslateEdit>(&edit)) {
            edits.push_back({{"op", "translate"}, {"object", t->object_id}, {"delta", detail::to_json(t->delta)},
                             {"frames", range_to(t->frames)}});
        } else if (const auto* r = std::get_if<RotateYawEdit>(&edit)) {
            edits.push_back({{"op", "rotate_yaw"}, {"object", r->object_id}, {"angle", r->angle},
                             {"frames", range_to(r->frames)}});
        } else {
            const auto& s = std::get<SwapEdit>(edit);
            edits.push_back({{"op", "swap"}, {"objects", {s.object_a, s.object_b}}});
        }
    }
    return json{{"edits", edits}}.dump(2) + "\n";
}

SceneGraph apply_edit(const SceneGraph& scene, const EditScript& script)
{
    SceneGraph out = scene;
    for (const Edit& edit : script.edits) {
        if (const auto* t = std::get_if<TranslateEdit>(&edit)) {
            PoseTrack& track = object_or_throw(out, t->object_id).track;
            const auto [first, last] = resolve(t->frames, track);
            for (int f = first; f <= last; ++f) {
                track.translations[static_cast<std::size_t>(f)] += t->delta;
            }
        } else if (const auto* r = std::get_if<RotateYawEdit>(&edit)) {
            PoseTrack& track = object_or_throw(out, r->object_id).track;
            const auto [first, last] = resolve(r->frames, track);
            const Mat3 rz = rotation_z(r->angle);
            for (int f = first; f <= last; ++f) {
                Mat3& rot = track.rotations[static_cast<std::size_t>(f)];
                rot = rot * rz;
            }
        } else {
            const auto& s = std::get<SwapEdit>(edit);
            ObjectModel& a = object_or_throw(out, s.object_a);
            ObjectModel& b = object_or_throw(out, s.object_b);
            std::swap(a.gaussians, b.gaussians);
        }
    }
    out.validate();
    return out;
}

} // namespace urbansplat
