// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/dataset.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace urbansplat {

/// Scalar loss plus its gradient with respect to the rendered input.
struct LossValue {
    double value = 0.0;
    std::vector<double> grad;
};

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean SSIM over all pixels and channels of two interleaved H*W*C images.
/// Gaussian window 11x11, sigma 1.5, zero padding at the borders.
double ssim(const std::vector<double>& a, const std::vector<double>& b, int width, int height,
            int channels);

/// SSIM and its gradient with respect to `a`.
LossValue ssim_with_gradient(const std::vector<double>& a, const std::vector<double>& b, int width,
                             int height, int channels);

/// (1 - lambda_ssim) * L1 + lambda_ssim * (1 - SSIM), on H*W*3 images.
LossValue loss_color(const std::vector<double>& render, const Image& target, double lambda_ssim);

/// L1 over the 95% of LiDAR hits with the smallest error. Zero without hits.
LossValue loss_depth(const std::vector<double>& render, const DepthMap& target);

/// Clamp applied to opacities before taking logs.
constexpr double kProbabilityClamp = 1e-6;

/// Binary cross entropy between rendered opacity and the sky mask
/// (mask value 1 marks sky, which should be transparent).
LossValue loss_sky(const std::vector<double>& opacity, const LabelMap& sky_mask);

/// Softmax cross entropy over non-ignored pixels. `logits` is H*W*M.
LossValue loss_semantic(const std::vector<double>& logits, const LabelMap& labels, int num_classes);

/// Binary entropy of the objects-only opacity.
LossValue loss_reg(const std::vector<double>& object_opacity);

} // namespace urbansplat
