// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/scene.hpp"

#include "urbansplat/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace urbansplat {

namespace {

bool all_finite(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void append_column(std::vector<double>& dst, const std::vector<double>& src)
{
    dst.insert(dst.end(), src.begin(), src.end());
}

void select_column(const std::vector<double>& src, std::size_t width,
                   std::span<const std::size_t> indices, std::vector<double>& dst)
{
    dst.resize(indices.size() * width);
    for (std::size_t j = 0; j < indices.size(); ++j) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[j] * width), width,
                    dst.begin() + static_cast<std::ptrdiff_t>(j * width));
    }
}

} // namespace

GaussianSet GaussianSet::make(std::size_t count, AppearanceMode mode, int sh_degree, int fourier_k,
                              SemanticKind kind, int num_classes)
{
    if (mode == AppearanceMode::Static && fourier_k != 1) {
        throw ValidationError("static appearance requires fourier_k == 1");
    }
    GaussianSet g;
    g.appearance.mode = mode;
    g.appearance.sh_degree = sh_degree;
    g.appearance.fourier_k = fourier_k;
    g.semantic.kind = kind;
    g.semantic.num_classes = num_classes;
    g.positions.assign(3 * count, 0.0);
    g.log_scales.assign(3 * count, 0.0);
    g.rotations.assign(4 * count, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        g.rotations[4 * i] = 1.0;
    }
    g.opacity_logits.assign(count, 0.0);
    g.appearance.coeffs.assign(count * g.appearance.stride(), 0.0);
    g.semantic.logits.assign(count * static_cast<std::size_t>(g.semantic.width()), 0.0);
    return g;
}

GaussianSet GaussianSet::select(std::span<const std::size_t> indices) const
{
    GaussianSet out;
    out.appearance.mode = appearance.mode;
    out.appearance.sh_degree = appearance.sh_degree;
    out.appearance.fourier_k = appearance.fourier_k;
    out.semantic.kind = semantic.kind;
    out.semantic.num_classes = semantic.num_classes;
    select_column(positions, 3, indices, out.positions);
    select_column(log_scales, 3, indices, out.log_scales);
    select_column(rotations, 4, indices, out.rotations);
    select_column(opacity_logits, 1, indices, out.opacity_logits);
    select_column(appearance.coeffs, appearance.stride(), indices, out.appearance.coeffs);
    select_column(semantic.logits, static_cast<std::size_t>(semantic.width()), indices,
                  out.semantic.logits);
    return out;
}

bool GaussianSet::same_layout(const GaussianSet& other) const
{
    return appearance.mode == other.appearance.mode &&
           appearance.sh_degree == other.appearance.sh_degree &&
           appearance.fourier_k == other.appearance.fourier_k &&
           semantic.kind == other.semantic.kind && semantic.num_classes == other.semantic.num_classes;
}

void GaussianSet::append(const GaussianSet& other)
{
    if (!same_layout(other)) {
        throw ValidationError("cannot append Gaussian sets with different layouts");
    }
    append_column(positions, other.positions);
    append_column(log_scales, other.log_scales);
    append_column(rotations, other.rotations);
    append_column(opacity_logits, other.opacity_logits);
    append_column(appearance.coeffs, other.appearance.coeffs);
    append_column(semantic.logits, other.semantic.logits);
}

void GaussianSet::validate() const
{
    const std::size_t n = size();
    if (appearance.sh_degree < 0 || appearance.sh_degree > 3) {
        throw ValidationError("shape mismatch: sh_degree must be in [0, 3]");
    }
    if (appearance.fourier_k < 1 ||
        (appearance.mode == AppearanceMode::Static) != (appearance.fourier_k == 1)) {
        throw ValidationError("shape mismatch: fourier_k must be 1 exactly for static appearance");
    }
    if (semantic.num_classes < 1) {
        throw ValidationError("shape mismatch: num_classes must be positive");
    }
    if (positions.size() != 3 * n || log_scales.size() != 3 * n || rotations.size() != 4 * n ||
        appearance.coeffs.size() != n * appearance.stride() ||
        semantic.logits.size() != n * static_cast<std::size_t>(semantic.width())) {
        throw ValidationError("shape mismatch: Gaussian columns disagree on point count");
    }
    if (!all_finite(positions) || !all_finite(log_scales) || !all_finite(rotations) ||
        !all_finite(opacity_logits) || !all_finite(appearance.coeffs) ||
        !all_finite(semantic.logits)) {
        throw ValidationError("non-finite value in Gaussian parameters");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(rotation(i).norm() > 0.0)) {
            throw ValidationError("zero quaternion at point " + std::to_string(i));
        }
        const Vec3 s = log_scale(i).array().exp();
        if (!s.allFinite() || (s.array() <= 0.0).any()) {
            throw ValidationError("activated scale not finite and positive at point " +
                                  std::to_string(i));
        }
    }
}

PoseTrack PoseTrack::make(int frame_count, const Vec3& box_dims)
{
    PoseTrack t;
    const auto n = static_cast<std::size_t>(frame_count);
    t.rotations.assign(n, Mat3::Identity());
    t.translations.assign(n, Vec3::Zero());
    t.delta_translations.assign(n, Vec3::Zero());
    t.delta_yaws.assign(n, 0.0);
    t.valid.assign(n, 1);
    t.box_dims = box_dims;
    return t;
}

void PoseTrack::validate() const
{
    const std::size_t n = rotations.size();
    if (translations.size() != n || delta_translations.size() != n || delta_yaws.size() != n ||
        valid.size() != n) {
        throw ValidationError("shape mismatch: pose track columns disagree on frame count");
    }
    if (!box_dims.allFinite() || (box_dims.array() <= 0.0).any()) {
        throw ValidationError("box dimensions must be finite and positive");
    }
    for (std::size_t t = 0; t < n; ++t) {
        if (!is_rotation(rotations[t])) {
            throw ValidationError("invalid rotation at frame " + std::to_string(t));
        }
        if (!translations[t].allFinite() || !delta_translations[t].allFinite() ||
            !std::isfinite(delta_yaws[t])) {
            throw ValidationError("non-finite pose value at frame " + std::to_string(t));
        }
    }
}

SkyCubemap SkyCubemap::make(int resolution, double fill)
{
    SkyCubemap sky;
    sky.resolution = resolution;
    sky.texels.assign(6 * static_cast<std::size_t>(resolution) * resolution * 3, fill);
    return sky;
}

SkyCubemap::Footprint SkyCubemap::footprint(const Vec3& d) const
{
    const double ax = std::abs(d.x()), ay = std::abs(d.y()), az = std::abs(d.z());
    int face = 0;
    double sc = 0.0, tc = 0.0, ma = 1.0;
    if (ax >= ay && ax >= az) {
        ma = ax;
        if (d.x() >= 0.0) {
            face = 0;
            sc = -d.z();
            tc = -d.y();
        } else {
            face = 1;
            sc = d.z();
            tc = -d.y();
        }
    } else if (ay >= az) {
        ma = ay;
        if (d.y() >= 0.0) {
            face = 2;
            sc = d.x();
            tc = d.z();
        } else {
            face = 3;
            sc = d.x();
            tc = -d.z();
        }
    } else {
        ma = az;
        if (d.z() >= 0.0) {
            face = 4;
            sc = d.x();
            tc = -d.y();
        } else {
            face = 5;
            sc = -d.x();
            tc = -d.y();
        }
    }
    const int r = resolution;
    // Texel centers sit at (i + 0.5) / r on [0, 1].
    const double u = 0.5 * (sc / ma + 1.0) * r - 0.5;
    const double v = 0.5 * (tc / ma + 1.0) * r - 0.5;
    const double uc = std::clamp(u, 0.0, static_cast<double>(r - 1));
    const double vc = std::clamp(v, 0.0, static_cast<double>(r - 1));
    const int u0 = std::min(static_cast<int>(std::floor(uc)), r - 1);
    const int v0 = std::min(static_cast<int>(std::floor(vc)), r - 1);
    const int u1 = std::min(u0 + 1, r - 1);
    const int v1 = std::min(v0 + 1, r - 1);
    const double fu = uc - u0;
    const double fv = vc - v0;

    const auto idx = [&](int row, int col) {
        return ((static_cast<std::size_t>(face) * r + static_cast<std::size_t>(row)) * r +
                static_cast<std::size_t>(col)) *
               3;
    };
    Footprint fp;
    fp.taps[0] = {idx(v0, u0), (1.0 - fu) * (1.0 - fv)};
    fp.taps[1] = {idx(v0, u1), fu * (1.0 - fv)};
    fp.taps[2] = {idx(v1, u0), (1.0 - fu) * fv};
    fp.taps[3] = {idx(v1, u1), fu * fv};
    return fp;
}

Vec3 SkyCubemap::sample(const Vec3& direction) const
{
    const Footprint fp = footprint(direction);
    Vec3 c = Vec3::Zero();
    for (const Tap& tap : fp.taps) {
        c.x() += tap.weight * texels[tap.texel];
        c.y() += tap.weight * texels[tap.texel + 1];
        c.z() += tap.weight * texels[tap.texel + 2];
    }
    return c;
}

const ObjectModel* SceneGraph::find_object(int id) const
{
    for (const ObjectModel& o : objects) {
        if (o.id == id) {
            return &o;
        }
    }
    return nullptr;
}

ObjectModel* SceneGraph::find_object(int id)
{
    for (ObjectModel& o : objects) {
        if (o.id == id) {
            return &o;
        }
    }
    return nullptr;
}

std::size_t SceneGraph::total_gaussians() const
{
    std::size_t n = background.size();
    for (const ObjectModel& o : objects) {
        n += o.gaussians.size();
    }
    return n;
}

void SceneGraph::validate() const
{
    if (num_classes < 1 || vehicle_class < 0 || vehicle_class >= num_classes) {
        throw ValidationError("vehicle class index must lie in [0, num_classes)");
    }
    if (num_frames < 1) {
        throw ValidationError("num_frames must be positive");
    }
    if (sky.resolution < 1 ||
        sky.texels.size() != 6 * static_cast<std::size_t>(sky.resolution) * sky.resolution * 3) {
        throw ValidationError("shape mismatch: sky cubemap texel count");
    }
    background.validate();
    if (background.semantic.kind != SemanticKind::BackgroundVector ||
        background.semantic.num_classes != num_classes) {
        throw ValidationError("background semantic field must be an M-vector");
    }
    std::set<int> ids;
    for (const ObjectModel& o : objects) {
        if (!ids.insert(o.id).second) {
            throw ValidationError("duplicate object id " + std::to_string(o.id));
        }
        o.gaussians.validate();
        o.track.validate();
        if (o.gaussians.semantic.kind != SemanticKind::ObjectScalar) {
            throw ValidationError("object semantic field must be a scalar");
        }
        if (o.track.frame_count() != num_frames) {
            throw ValidationError("shape mismatch: pose track of object " + std::to_string(o.id) +
                                  " does not cover num_frames");
        }
    }
    for (const View& v : views) {
        v.camera.validate();
    }
}

} // namespace urbansplat
