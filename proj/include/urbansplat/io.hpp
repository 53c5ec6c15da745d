// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "urbansplat/math.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace urbansplat {

/// Interleaved floating-point image, row-major, values nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    static Image make(int width, int height, int channels, double fill = 0.0);
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    double& at(int x, int y, int c)
    {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c) const
    {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Single-channel integer map (class labels, binary masks).
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<std::uint16_t> labels;
};

/// Reads an 8- or 16-bit gray/RGB(A) PNG into [0, 1]. Alpha is dropped and
/// gray is expanded to three channels when `rgb` is set.
Image read_png(const std::filesystem::path& path, bool rgb = true);

/// Writes values clamped to [0, 1] and rounded to the nearest code.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

/// Reads raw integer codes of a single-channel (or first channel of a
/// multi-channel) PNG.
LabelMap read_label_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);

/// Lossless float dump: a little-endian uint32 header length, a JSON header
/// {"width", "height", "channels", "dtype": "float64"}, then the samples as
/// little-endian float64 in row-major interleaved order.
void write_float_dump(const std::filesystem::path& path, const Image& image);
Image read_float_dump(const std::filesystem::path& path);

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors; // empty or one per position, [0, 1]

    std::size_t size() const { return positions.size(); }
    bool has_colors() const { return !colors.empty(); }
};

/// Reads vertex x/y/z (float or double) and optional red/green/blue (uchar or
/// float) from ASCII or binary little-endian PLY.
PointCloud read_ply(const std::filesystem::path& path);

/// Writes binary little-endian PLY with float32 xyz and, when present, uchar rgb.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

/// Whole-file helpers that raise ValidationError with the path on failure.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace urbansplat
