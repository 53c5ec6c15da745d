// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/camera.hpp"
#include "urbansplat/dataset.hpp"
#include "urbansplat/io.hpp"

#include <optional>
#include <vector>

namespace urbansplat {

/// 10 log10(1 / MSE) over all channels of [0, 1] images; +inf when equal.
double psnr(const Image& image, const Image& reference);

/// Mean SSIM with the training kernel (11x11 Gaussian, sigma 1.5).
double ssim_metric(const Image& image, const Image& reference);

/// Length and width scale applied to tracked boxes before projection.
constexpr double kBoxMaskExpansion = 1.5;

/// Pixels covered by the projected box of each valid tracklet at timestep t,
/// with length and width scaled by `expansion` (height kept). One byte per
/// pixel; the union over boxes.
std::vector<std::uint8_t> box_mask(const std::vector<Tracklet>& tracklets, const Camera& camera, int t,
                                   double expansion = kBoxMaskExpansion);

/// Convex hull (counter-clockwise, no collinear points) of 2D points.
std::vector<Vec2> convex_hull(std::vector<Vec2> points);

/// PSNR restricted to `mask`; absent when the mask is empty.
std::optional<double> masked_psnr(const Image& image, const Image& reference,
                                  const std::vector<std::uint8_t>& mask);

/// PSNR over the expanded projected boxes; absent when no box is visible.
std::optional<double> psnr_star(const Image& image, const Image& reference,
                                const std::vector<Tracklet>& tracklets, const Camera& camera, int t);

struct IouResult {
    double mean = 0.0;
    /// Per class; absent for classes missing from the reference.
    std::vector<std::optional<double>> per_class;
};

/// Mean IoU over classes present in `reference`. Reference pixels equal to
/// the ignore label are skipped.
IouResult miou(const LabelMap& prediction, const LabelMap& reference, int num_classes);

/// Argmax over H*W*M logits (lowest index on ties).
LabelMap argmax_labels(const std::vector<double>& logits, int width, int height, int num_classes);

} // namespace urbansplat
