// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/evaluate.hpp"

#include "urbansplat/errors.hpp"
#include "urbansplat/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace urbansplat {

namespace {

using json = nlohmann::ordered_json;

json number_or_inf(double v)
{
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    return v;
}

json optional_number(const std::optional<double>& v)
{
    return v ? number_or_inf(*v) : json(nullptr);
}

std::string frame_file(std::size_t frame)
{
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", frame);
    return name;
}

Image quantized_color(const RenderOutputs& out)
{
    Image image = Image::make(out.width, out.height, 3);
    for (std::size_t i = 0; i < out.color.size(); ++i) {
        image.data[i] = std::round(std::clamp(out.color[i], 0.0, 1.0) * 255.0) / 255.0;
    }
    return image;
}

} // namespace

std::string EvalReport::to_json() const
{
    json per = json::array();
    for (const FrameMetrics& f : frames) {
        json e;
        e["frame"] = f.frame;
        e["timestep"] = f.timestep;
        e["image"] = frame_file(f.frame);
        e["psnr"] = number_or_inf(f.psnr);
        e["ssim"] = f.ssim;
        e["psnr_star"] = optional_number(f.psnr_star);
        e["miou"] = optional_number(f.miou);
        per.push_back(std::move(e));
    }
    json agg;
    agg["frame_count"] = frames.size();
    agg["psnr"] = number_or_inf(psnr);
    agg["ssim"] = ssim;
    agg["psnr_star"] = optional_number(psnr_star);
    agg["miou"] = optional_number(miou);
    json out;
    out["aggregate"] = std::move(agg);
    out["frames"] = std::move(per);
    return out.dump(2) + "\n";
}

Image render_image(const SceneGraph& scene, const Camera& camera, int t, int threads)
{
    RenderConfig config;
    config.timestep = t;
    config.num_threads = threads;
    return render_image(scene, camera, config);
}

Image render_image(const SceneGraph& scene, const Camera& camera, const RenderConfig& config)
{
    return quantized_color(render(scene, camera, config));
}

EvalReport evaluate(const SceneGraph& scene, const Dataset& dataset, const std::vector<std::size_t>& frames,
                    const EvalOptions& options)
{
    if (frames.empty()) {
        throw ValidationError("evaluate: no frames selected");
    }
    const std::vector<Tracklet>& boxes = dataset.truth_tracklets.empty() ? dataset.tracklets : dataset.truth_tracklets;
    if (options.image_dir) {
        std::filesystem::create_directories(*options.image_dir);
    }
    EvalReport report;
    double star_sum = 0.0, miou_sum = 0.0;
    std::size_t star_count = 0, miou_count = 0;
    for (std::size_t idx : frames) {
        if (idx >= dataset.frames.size()) {
            throw ValidationError("evaluate: frame " + std::to_string(idx) + " out of range");
        }
        const FrameRecord& rec = dataset.frames[idx];
        RenderConfig config;
        config.timestep = rec.timestep;
        config.num_threads = options.threads;
        const RenderOutputs out = render(scene, rec.camera, config);
        const Image image = quantized_color(out);
        if (options.image_dir) {
            write_png(*options.image_dir / frame_file(idx), image);
        }
        FrameMetrics m;
        m.frame = idx;
        m.timestep = rec.timestep;
        m.psnr = psnr(image, rec.image);
        m.ssim = ssim_metric(image, rec.image);
        m.psnr_star = psnr_star(image, rec.image, boxes, rec.camera, rec.timestep);
        if (rec.semantic) {
            const LabelMap pred = argmax_labels(out.semantic, out.width, out.height, scene.num_classes);
            m.miou = miou(pred, *rec.semantic, scene.num_classes).mean;
        }
        report.psnr += m.psnr;
        report.ssim += m.ssim;
        if (m.psnr_star) {
            star_sum += *m.psnr_star;
            ++star_count;
        }
        if (m.miou) {
            miou_sum += *m.miou;
            ++miou_count;
        }
        report.frames.push_back(m);
    }
    const auto n = static_cast<double>(frames.size());
    report.psnr /= n;
    report.ssim /= n;
    if (star_count) {
        report.psnr_star = star_sum / static_cast<double>(star_count);
    }
    if (miou_count) {
        report.miou = miou_sum / static_cast<double>(miou_count);
    }
    return report;
}

} // namespace urbansplat
