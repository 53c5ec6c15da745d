// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/losses.hpp"

#include "urbansplat/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace urbansplat {

namespace {

using Kernel = std::array<double, kSsimWindow>;

const Kernel& gaussian_kernel()
{
    static const Kernel k = [] {
        Kernel w{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kSsimWindow / 2;
            w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += w[static_cast<std::size_t>(i)];
        }
        for (double& v : w) {
            v /= sum;
        }
        return w;
    }();
    return k;
}

// Separable zero-padded Gaussian filter of one plane. The kernel is
// symmetric, so the filter is its own adjoint.
std::vector<double> blur(const std::vector<double>& in, int width, int height)
{
    const Kernel& k = gaussian_kernel();
    const int r = kSsimWindow / 2;
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int y = 0; y < height; ++y) {
        const double* row = in.data() + static_cast<std::size_t>(y) * width;
        double* dst = tmp.data() + static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            double s = 0.0;
            for (int d = std::max(-r, -x); d <= std::min(r, width - 1 - x); ++d) {
                s += k[static_cast<std::size_t>(d + r)] * row[x + d];
            }
            dst[x] = s;
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double s = 0.0;
            for (int d = std::max(-r, -y); d <= std::min(r, height - 1 - y); ++d) {
                s += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(y + d) * width + x];
            }
            out[static_cast<std::size_t>(y) * width + x] = s;
        }
    }
    return out;
}

std::vector<double> plane(const std::vector<double>& img, std::size_t pixels, int channels, int c)
{
    std::vector<double> p(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        p[i] = img[i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
    }
    return p;
}

void check_image(const std::vector<double>& a, const std::vector<double>& b, int width, int height,
                 int channels)
{
    if (width <= 0 || height <= 0 || channels <= 0) {
        throw ValidationError("ssim: image dimensions must be positive");
    }
    const std::size_t n = static_cast<std::size_t>(width) * height * channels;
    if (a.size() != n || b.size() != n) {
        throw ValidationError("ssim: shape mismatch");
    }
}

double ssim_impl(const std::vector<double>& a, const std::vector<double>& b, int width, int height,
                 int channels, std::vector<double>* grad)
{
    check_image(a, b, width, height, channels);
    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    const double norm = 1.0 / static_cast<double>(pixels * static_cast<std::size_t>(channels));
    if (grad) {
        grad->assign(a.size(), 0.0);
    }
    double total = 0.0;
    for (int c = 0; c < channels; ++c) {
        const std::vector<double> pa = plane(a, pixels, channels, c);
        const std::vector<double> pb = plane(b, pixels, channels, c);
        std::vector<double> aa(pixels), bb(pixels), ab(pixels);
        for (std::size_t i = 0; i < pixels; ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const std::vector<double> mu_a = blur(pa, width, height);
        const std::vector<double> mu_b = blur(pb, width, height);
        const std::vector<double> e_aa = blur(aa, width, height);
        const std::vector<double> e_bb = blur(bb, width, height);
        const std::vector<double> e_ab = blur(ab, width, height);
        std::vector<double> d_mu(grad ? pixels : 0), d_aa(grad ? pixels : 0), d_ab(grad ? pixels : 0);
        for (std::size_t i = 0; i < pixels; ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double saa = e_aa[i] - ma * ma;
            const double sbb = e_bb[i] - mb * mb;
            const double sab = e_ab[i] - ma * mb;
            const double a1 = 2.0 * ma * mb + kSsimC1;
            const double a2 = 2.0 * sab + kSsimC2;
            const double b1 = ma * ma + mb * mb + kSsimC1;
            const double b2 = saa + sbb + kSsimC2;
            // Written as ratios so identical inputs give exactly s = 1 and a zero gradient.
            const double r1 = a1 / b1;
            const double r2 = a2 / b2;
            const double s = r1 * r2;
            total += s;
            if (grad) {
                const double ds_saa = -s / b2;
                const double ds_sab = 2.0 * r1 / b2;
                d_mu[i] = norm * ((2.0 / b1) * (mb * r2 - ma * s) + (2.0 / b2) * (ma * s - mb * r1));
                d_aa[i] = norm * ds_saa;
                d_ab[i] = norm * ds_sab;
            }
        }
        if (grad) {
            const std::vector<double> g_mu = blur(d_mu, width, height);
            const std::vector<double> g_aa = blur(d_aa, width, height);
            const std::vector<double> g_ab = blur(d_ab, width, height);
            for (std::size_t i = 0; i < pixels; ++i) {
                (*grad)[i * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)] =
                    g_mu[i] + 2.0 * pa[i] * g_aa[i] + pb[i] * g_ab[i];
            }
        }
    }
    return total / static_cast<double>(pixels * static_cast<std::size_t>(channels));
}

double clamp_probability(double p)
{
    return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

bool clamped(double p) { return p < kProbabilityClamp || p > 1.0 - kProbabilityClamp; }

} // namespace

double ssim(const std::vector<double>& a, const std::vector<double>& b, int width, int height,
            int channels)
{
    return ssim_impl(a, b, width, height, channels, nullptr);
}

LossValue ssim_with_gradient(const std::vector<double>& a, const std::vector<double>& b, int width,
                             int height, int channels)
{
    LossValue out;
    out.value = ssim_impl(a, b, width, height, channels, &out.grad);
    return out;
}

LossValue loss_color(const std::vector<double>& render, const Image& target, double lambda_ssim)
{
    if (target.channels != 3 || render.size() != target.data.size()) {
        throw ValidationError("loss_color: shape mismatch");
    }
    if (!(lambda_ssim >= 0.0 && lambda_ssim <= 1.0)) {
        throw ValidationError("loss_color: lambda_ssim must lie in [0, 1]");
    }
    const double inv_n = 1.0 / static_cast<double>(render.size());
    LossValue out;
    out.grad.assign(render.size(), 0.0);
    double l1 = 0.0;
    for (std::size_t i = 0; i < render.size(); ++i) {
        const double d = render[i] - target.data[i];
        l1 += std::abs(d);
        out.grad[i] = (1.0 - lambda_ssim) * inv_n * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    out.value = (1.0 - lambda_ssim) * l1 * inv_n;
    if (lambda_ssim > 0.0) {
        const LossValue s = ssim_with_gradient(render, target.data, target.width, target.height, 3);
        out.value += lambda_ssim * (1.0 - s.value);
        for (std::size_t i = 0; i < render.size(); ++i) {
            out.grad[i] -= lambda_ssim * s.grad[i];
        }
    }
    return out;
}

LossValue loss_depth(const std::vector<double>& render, const DepthMap& target)
{
    if (render.size() != target.depth.size()) {
        throw ValidationError("loss_depth: shape mismatch");
    }
    LossValue out;
    out.grad.assign(render.size(), 0.0);
    std::vector<std::size_t> hits;
    for (std::size_t i = 0; i < target.depth.size(); ++i) {
        if (target.depth[i] > 0.0) {
            hits.push_back(i);
        }
    }
    if (hits.empty()) {
        return out;
    }
    const auto err = [&](std::size_t i) { return std::abs(render[i] - target.depth[i]); };
    // Stable order keeps ties deterministic.
    std::stable_sort(hits.begin(), hits.end(), [&](std::size_t a, std::size_t b) { return err(a) < err(b); });
    const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.95 * hits.size())));
    const double inv = 1.0 / static_cast<double>(keep);
    for (std::size_t k = 0; k < keep; ++k) {
        const std::size_t i = hits[k];
        const double d = render[i] - target.depth[i];
        out.value += std::abs(d) * inv;
        out.grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return out;
}

LossValue loss_sky(const std::vector<double>& opacity, const LabelMap& sky_mask)
{
    if (opacity.size() != sky_mask.labels.size()) {
        throw ValidationError("loss_sky: shape mismatch");
    }
    LossValue out;
    out.grad.assign(opacity.size(), 0.0);
    if (opacity.empty()) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(opacity.size());
    for (std::size_t i = 0; i < opacity.size(); ++i) {
        const std::uint16_t m = sky_mask.labels[i];
        if (m > 1) {
            throw ValidationError("loss_sky: mask must be binary");
        }
        const double o = clamp_probability(opacity[i]);
        if (m == 0) {
            out.value -= std::log(o) * inv;
            out.grad[i] = clamped(opacity[i]) ? 0.0 : -inv / o;
        } else {
            out.value -= std::log(1.0 - o) * inv;
            out.grad[i] = clamped(opacity[i]) ? 0.0 : inv / (1.0 - o);
        }
    }
    return out;
}

LossValue loss_semantic(const std::vector<double>& logits, const LabelMap& labels, int num_classes)
{
    const std::size_t pixels = labels.labels.size();
    const auto m = static_cast<std::size_t>(num_classes);
    if (num_classes <= 0 || logits.size() != pixels * m) {
        throw ValidationError("loss_semantic: shape mismatch");
    }
    LossValue out;
    out.grad.assign(logits.size(), 0.0);
    std::size_t valid = 0;
    for (std::uint16_t l : labels.labels) {
        if (l == kIgnoreLabel) {
            continue;
        }
        if (l >= num_classes) {
            throw ValidationError("loss_semantic: label " + std::to_string(l) + " >= number of classes");
        }
        ++valid;
    }
    if (valid == 0) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(valid);
    std::vector<double> p(m);
    for (std::size_t i = 0; i < pixels; ++i) {
        const std::uint16_t l = labels.labels[i];
        if (l == kIgnoreLabel) {
            continue;
        }
        const double* z = logits.data() + i * m;
        const double zmax = *std::max_element(z, z + m);
        double sum = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            p[c] = std::exp(z[c] - zmax);
            sum += p[c];
        }
        out.value += (std::log(sum) + zmax - z[l]) * inv;
        for (std::size_t c = 0; c < m; ++c) {
            out.grad[i * m + c] = (p[c] / sum - (c == l ? 1.0 : 0.0)) * inv;
        }
    }
    return out;
}

LossValue loss_reg(const std::vector<double>& object_opacity)
{
    LossValue out;
    out.grad.assign(object_opacity.size(), 0.0);
    if (object_opacity.empty()) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(object_opacity.size());
    for (std::size_t i = 0; i < object_opacity.size(); ++i) {
        const double raw = object_opacity[i];
        const double o = clamp_probability(raw);
        // The value uses 0 log 0 = 0 so both endpoints give exactly zero.
        const double e = std::clamp(raw, 0.0, 1.0);
        out.value -= (xlogx(e) + xlogx(1.0 - e)) * inv;
        out.grad[i] = clamped(raw) ? 0.0 : -std::log(o / (1.0 - o)) * inv;
    }
    return out;
}

} // namespace urbansplat
