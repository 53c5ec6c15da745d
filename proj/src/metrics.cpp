// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/metrics.hpp"

#include "urbansplat/errors.hpp"
#include "urbansplat/geometry.hpp"
#include "urbansplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace urbansplat {

namespace {

void check_pair(const Image& a, const Image& b, const char* what)
{
    if (a.width != b.width || a.height != b.height || a.channels != b.channels || a.data.size() != b.data.size()) {
        throw ValidationError(std::string(what) + ": image dimensions differ");
    }
    if (a.data.empty()) {
        throw ValidationError(std::string(what) + ": empty image");
    }
}

double psnr_from_mse(double mse)
{
    return mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : std::numeric_limits<double>::infinity();
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b)
{
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Box corners in front of the near plane plus the points where box edges
// cross it. The hull of their projections is the visible box outline.
std::vector<Vec2> clipped_projection(const std::array<Vec3, 8>& corners, const Camera& camera)
{
    std::array<Vec3, 8> cam;
    for (std::size_t i = 0; i < 8; ++i) {
        cam[i] = camera.to_camera(corners[i]);
    }
    std::vector<Vec3> kept;
    for (const Vec3& c : cam) {
        if (c.z() >= camera.near_clip) {
            kept.push_back(c);
        }
    }
    // Corner i has bit 0 = +x, bit 1 = +y, bit 2 = +z; edges flip one bit.
    for (std::size_t i = 0; i < 8; ++i) {
        for (std::size_t bit : {1u, 2u, 4u}) {
            const std::size_t j = i ^ bit;
            if (j < i) {
                continue;
            }
            const double zi = cam[i].z() - camera.near_clip, zj = cam[j].z() - camera.near_clip;
            if ((zi < 0.0) != (zj < 0.0)) {
                const double s = zi / (zi - zj);
                Vec3 p = cam[i] + s * (cam[j] - cam[i]);
                p.z() = camera.near_clip;
                kept.push_back(p);
            }
        }
    }
    std::vector<Vec2> out;
    out.reserve(kept.size());
    for (const Vec3& c : kept) {
        out.emplace_back(camera.fx * c.x() / c.z() + camera.cx, camera.fy * c.y() / c.z() + camera.cy);
    }
    return out;
}

} // namespace

double psnr(const Image& image, const Image& reference)
{
    check_pair(image, reference, "psnr");
    double sum = 0.0;
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        const double d = image.data[i] - reference.data[i];
        sum += d * d;
    }
    return psnr_from_mse(sum / static_cast<double>(image.data.size()));
}

double ssim_metric(const Image& image, const Image& reference)
{
    check_pair(image, reference, "ssim");
    return ssim(image.data, reference.data, image.width, image.height, image.channels);
}

std::vector<Vec2> convex_hull(std::vector<Vec2> points)
{
    std::sort(points.begin(), points.end(), [](const Vec2& a, const Vec2& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    points.erase(std::unique(points.begin(), points.end()), points.end());
    if (points.size() < 3) {
        return points;
    }
    // Monotone chain.
    std::vector<Vec2> hull(2 * points.size());
    std::size_t k = 0;
    for (const Vec2& p : points) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) {
            --k;
        }
        hull[k++] = p;
    }
    const std::size_t lower = k + 1;
    for (auto it = points.rbegin() + 1; it != points.rend(); ++it) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0.0) {
            --k;
        }
        hull[k++] = *it;
    }
    hull.resize(k - 1);
    return hull;
}

std::vector<std::uint8_t> box_mask(const std::vector<Tracklet>& tracklets, const Camera& camera, int t,
                                   double expansion)
{
    camera.validate();
    const int w = camera.width, h = camera.height;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h, 0);
    for (const Tracklet& tr : tracklets) {
        if (!tr.track.is_valid(t)) {
            continue;
        }
        const RigidPose pose = effective_pose(tr.track, t);
        const Vec3 half(0.5 * expansion * tr.track.box_dims.x(), 0.5 * expansion * tr.track.box_dims.y(),
                        0.5 * tr.track.box_dims.z());
        std::array<Vec3, 8> corners;
        for (std::size_t i = 0; i < 8; ++i) {
            const Vec3 local((i & 1u) ? half.x() : -half.x(), (i & 2u) ? half.y() : -half.y(),
                             (i & 4u) ? half.z() : -half.z());
            corners[i] = pose.rotation * local + pose.translation;
        }
        const std::vector<Vec2> hull = convex_hull(clipped_projection(corners, camera));
        if (hull.size() < 3) {
            continue;
        }
        double x_lo = hull[0].x(), x_hi = x_lo, y_lo = hull[0].y(), y_hi = y_lo;
        for (const Vec2& p : hull) {
            x_lo = std::min(x_lo, p.x());
            x_hi = std::max(x_hi, p.x());
            y_lo = std::min(y_lo, p.y());
            y_hi = std::max(y_hi, p.y());
        }
        // Pixel centers sit at +0.5.
        const int x0 = std::max(0, static_cast<int>(std::floor(x_lo - 0.5)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(x_hi - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(y_lo - 0.5)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(y_hi - 0.5)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Vec2 p(x + 0.5, y + 0.5);
                bool inside = true;
                for (std::size_t e = 0; e < hull.size() && inside; ++e) {
                    inside = cross(hull[e], hull[(e + 1) % hull.size()], p) >= 0.0;
                }
                if (inside) {
                    mask[static_cast<std::size_t>(y) * w + x] = 1;
                }
            }
        }
    }
    return mask;
}

std::optional<double> masked_psnr(const Image& image, const Image& reference, const std::vector<std::uint8_t>& mask)
{
    check_pair(image, reference, "psnr_star");
    if (mask.size() != image.pixel_count()) {
        throw ValidationError("psnr_star: mask size differs from the image");
    }
    const auto c = static_cast<std::size_t>(image.channels);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) {
            continue;
        }
        for (std::size_t k = 0; k < c; ++k) {
            const double d = image.data[p * c + k] - reference.data[p * c + k];
            sum += d * d;
        }
        count += c;
    }
    if (count == 0) {
        return std::nullopt;
    }
    return psnr_from_mse(sum / static_cast<double>(count));
}

std::optional<double> psnr_star(const Image& image, const Image& reference, const std::vector<Tracklet>& tracklets,
                                const Camera& camera, int t)
{
    if (image.width != camera.width || image.height != camera.height) {
        throw ValidationError("psnr_star: camera and image sizes differ");
    }
    return masked_psnr(image, reference, box_mask(tracklets, camera, t));
}

IouResult miou(const LabelMap& prediction, const LabelMap& reference, int num_classes)
{
    if (num_classes <= 0) {
        throw ValidationError("miou: number of classes must be positive");
    }
    if (prediction.width != reference.width || prediction.height != reference.height ||
        prediction.labels.size() != reference.labels.size()) {
        throw ValidationError("miou: label map dimensions differ");
    }
    const auto m = static_cast<std::size_t>(num_classes);
    std::vector<std::size_t> inter(m, 0), pred_count(m, 0), ref_count(m, 0);
    for (std::size_t i = 0; i < reference.labels.size(); ++i) {
        const std::uint16_t r = reference.labels[i];
        if (r == kIgnoreLabel) {
            continue;
        }
        const std::uint16_t p = prediction.labels[i];
        if (r >= num_classes || p >= num_classes) {
            throw ValidationError("miou: label out of range");
        }
        ++ref_count[r];
        ++pred_count[p];
        if (p == r) {
            ++inter[r];
        }
    }
    IouResult out;
    out.per_class.resize(m);
    std::size_t present = 0;
    for (std::size_t c = 0; c < m; ++c) {
        if (ref_count[c] == 0) {
            continue;
        }
        const double iou = static_cast<double>(inter[c]) /
                           static_cast<double>(ref_count[c] + pred_count[c] - inter[c]);
        out.per_class[c] = iou;
        out.mean += iou;
        ++present;
    }
    out.mean = present ? out.mean / static_cast<double>(present) : 0.0;
    return out;
}

LabelMap argmax_labels(const std::vector<double>& logits, int width, int height, int num_classes)
{
    const std::size_t px = static_cast<std::size_t>(width) * height;
    const auto m = static_cast<std::size_t>(num_classes);
    if (num_classes <= 0 || logits.size() != px * m) {
        throw ValidationError("argmax_labels: shape mismatch");
    }
    LabelMap out{width, height, std::vector<std::uint16_t>(px, 0)};
    for (std::size_t i = 0; i < px; ++i) {
        const double* z = logits.data() + i * m;
        out.labels[i] = static_cast<std::uint16_t>(std::max_element(z, z + m) - z);
    }
    return out;
}

} // namespace urbansplat
