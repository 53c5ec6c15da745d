// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

// JSON conversions shared by the checkpoint and dataset readers. Matrices are
// row-major nested arrays.

#pragma once

#include "urbansplat/camera.hpp"
#include "urbansplat/errors.hpp"

#include <json.hpp>

#include <string>

namespace urbansplat::detail {

using json = nlohmann::json;

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json to_json(const Mat3& m)
{
    json rows = json::array();
    for (int r = 0; r < 3; ++r) {
        rows.push_back(json::array({m(r, 0), m(r, 1), m(r, 2)}));
    }
    return rows;
}

inline double number(const json& j, const std::string& where)
{
    if (!j.is_number()) {
        throw ValidationError(where + ": expected a number");
    }
    return j.get<double>();
}

inline Vec3 vec3_from(const json& j, const std::string& where)
{
    if (!j.is_array() || j.size() != 3) {
        throw ValidationError(where + ": expected a 3-vector");
    }
    return {number(j[0], where), number(j[1], where), number(j[2], where)};
}

/// Accepts [[r00,r01,r02],[...],[...]] or a flat row-major array of 9.
inline Mat3 mat3_from(const json& j, const std::string& where)
{
    Mat3 m;
    if (j.is_array() && j.size() == 9) {
        for (int i = 0; i < 9; ++i) {
            m(i / 3, i % 3) = number(j[static_cast<std::size_t>(i)], where);
        }
        return m;
    }
    if (!j.is_array() || j.size() != 3) {
        throw ValidationError(where + ": expected a 3x3 matrix");
    }
    for (int r = 0; r < 3; ++r) {
        const Vec3 row = vec3_from(j[static_cast<std::size_t>(r)], where);
        m.row(r) = row.transpose();
    }
    return m;
}

inline const json& field(const json& j, const std::string& key, const std::string& where)
{
    if (!j.is_object() || !j.contains(key)) {
        throw ValidationError(where + ": missing field '" + key + "'");
    }
    return j.at(key);
}

inline int integer(const json& j, const std::string& where)
{
    if (!j.is_number_integer()) {
        throw ValidationError(where + ": expected an integer");
    }
    return j.get<int>();
}

/// {"K": 3x3, "R": 3x3, "t": 3, "width", "height", "near_clip"?}
inline json camera_to_json(const Camera& c)
{
    Mat3 k = Mat3::Identity();
    k(0, 0) = c.fx;
    k(1, 1) = c.fy;
    k(0, 2) = c.cx;
    k(1, 2) = c.cy;
    return {{"K", to_json(k)},          {"R", to_json(c.rotation)}, {"t", to_json(c.translation)},
            {"width", c.width},         {"height", c.height},       {"near_clip", c.near_clip}};
}

inline Camera camera_from_json(const json& j, const std::string& where)
{
    Camera c;
    const Mat3 k = mat3_from(field(j, "K", where), where + ".K");
    c.fx = k(0, 0);
    c.fy = k(1, 1);
    c.cx = k(0, 2);
    c.cy = k(1, 2);
    c.rotation = mat3_from(field(j, "R", where), where + ".R");
    c.translation = vec3_from(field(j, "t", where), where + ".t");
    c.width = integer(field(j, "width", where), where + ".width");
    c.height = integer(field(j, "height", where), where + ".height");
    if (j.contains("near_clip")) {
        c.near_clip = number(j.at("near_clip"), where + ".near_clip");
    }
    try {
        c.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(where + ": " + e.what());
    }
    return c;
}

} // namespace urbansplat::detail
