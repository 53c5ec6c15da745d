// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/dataset.hpp"
#include "urbansplat/io.hpp"
#include "urbansplat/rasterizer.hpp"
#include "urbansplat/scene.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace urbansplat {

struct FrameMetrics {
    std::size_t frame = 0;
    int timestep = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> psnr_star;
    std::optional<double> miou;
};

struct EvalReport {
    std::vector<FrameMetrics> frames;
    double psnr = 0.0; // mean of per-frame values; inf when any frame is inf
    double ssim = 0.0;
    std::optional<double> psnr_star; // mean over frames with a visible box
    std::optional<double> miou;      // mean over frames with labels

    /// Infinite PSNR values are written as the string "inf".
    std::string to_json() const;
};

struct EvalOptions {
    /// When set, each rendered frame is written here as NNNN.png.
    std::optional<std::filesystem::path> image_dir;
    int threads = 0;
};

/// Rendered color of `camera` at timestep `t`, rounded to 8-bit codes so it
/// equals what write_png stores.
Image render_image(const SceneGraph& scene, const Camera& camera, int t, int threads = 0);
Image render_image(const SceneGraph& scene, const Camera& camera, const RenderConfig& config);

/// Renders the listed dataset frames and scores them against the recorded
/// images. PSNR* boxes come from the clean tracks when the dataset has them,
/// otherwise from its tracklets.
EvalReport evaluate(const SceneGraph& scene, const Dataset& dataset, const std::vector<std::size_t>& frames,
                    const EvalOptions& options = {});

} // namespace urbansplat
