// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/io.hpp"

#include "urbansplat/errors.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace urbansplat {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_for_read(const std::filesystem::path& path)
{
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) {
        throw ValidationError("cannot open " + path.string());
    }
    return f;
}

FilePtr open_for_write(const std::filesystem::path& path)
{
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) {
        throw RuntimeError("cannot write " + path.string());
    }
    return f;
}

/// Raw decoded PNG: codes per channel, 8 or 16 bit.
struct RawPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> codes;
};

RawPng decode_png(const std::filesystem::path& path)
{
    FilePtr f = open_for_read(path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw ValidationError(path.string() + ": not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw RuntimeError("libpng initialization failed");
    }
    RawPng out;
    std::vector<png_byte> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError(path.string() + ": corrupt PNG data");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (depth == 16) {
        png_set_swap(png); // host order
    }
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bit_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    buffer.resize(rowbytes * static_cast<std::size_t>(out.height));
    rows.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) {
        rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
    out.codes.resize(n);
    if (out.bit_depth == 16) {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            out.codes[i] = v;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            out.codes[i] = buffer[i];
        }
    }
    return out;
}

void encode_png(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
                const std::vector<std::uint16_t>& codes)
{
    if (width <= 0 || height <= 0) {
        throw ValidationError("write_png: empty image for " + path.string());
    }
    int color = 0;
    switch (channels) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 2: color = PNG_COLOR_TYPE_GRAY_ALPHA; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGB_ALPHA; break;
    default: throw ValidationError("write_png: unsupported channel count");
    }
    if (bit_depth != 8 && bit_depth != 16) {
        throw ValidationError("write_png: bit depth must be 8 or 16");
    }
    FilePtr f = open_for_write(path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw RuntimeError("libpng initialization failed");
    }
    const std::size_t bytes = static_cast<std::size_t>(bit_depth / 8);
    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bytes;
    std::vector<png_byte> buffer(rowbytes * static_cast<std::size_t>(height));
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (bytes == 2) {
            buffer[2 * i] = static_cast<png_byte>(codes[i] >> 8);
            buffer[2 * i + 1] = static_cast<png_byte>(codes[i] & 0xff);
        } else {
            buffer[i] = static_cast<png_byte>(codes[i]);
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * static_cast<std::size_t>(y);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw RuntimeError("failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No timestamps or text chunks, so identical pixels give identical files.
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace

Image Image::make(int width, int height, int channels, double fill)
{
    Image img;
    img.width = width;
    img.height = height;
    img.channels = channels;
    img.data.assign(static_cast<std::size_t>(width) * height * channels, fill);
    return img;
}

Image read_png(const std::filesystem::path& path, bool rgb)
{
    const RawPng raw = decode_png(path);
    const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
    const int color_channels = raw.channels >= 3 ? 3 : 1;
    const int out_channels = rgb ? 3 : color_channels;
    Image img = Image::make(raw.width, raw.height, out_channels);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        for (int c = 0; c < out_channels; ++c) {
            const int src = color_channels == 1 ? 0 : c;
            img.data[p * static_cast<std::size_t>(out_channels) + static_cast<std::size_t>(c)] =
                raw.codes[p * static_cast<std::size_t>(raw.channels) + static_cast<std::size_t>(src)] / scale;
        }
    }
    return img;
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth)
{
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    std::vector<std::uint16_t> codes(image.data.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const double v = std::isfinite(image.data[i]) ? std::clamp(image.data[i], 0.0, 1.0) : 0.0;
        codes[i] = static_cast<std::uint16_t>(std::lround(v * scale));
    }
    encode_png(path, image.width, image.height, image.channels, bit_depth, codes);
}

LabelMap read_label_png(const std::filesystem::path& path)
{
    const RawPng raw = decode_png(path);
    LabelMap map;
    map.width = raw.width;
    map.height = raw.height;
    map.labels.resize(static_cast<std::size_t>(raw.width) * raw.height);
    for (std::size_t p = 0; p < map.labels.size(); ++p) {
        map.labels[p] = raw.codes[p * static_cast<std::size_t>(raw.channels)];
    }
    return map;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels)
{
    const bool wide = std::any_of(labels.labels.begin(), labels.labels.end(),
                                  [](std::uint16_t v) { return v > 255; });
    encode_png(path, labels.width, labels.height, 1, wide ? 16 : 8, labels.labels);
}

void write_float_dump(const std::filesystem::path& path, const Image& image)
{
    const nlohmann::json header = {{"width", image.width},
                                   {"height", image.height},
                                   {"channels", image.channels},
                                   {"dtype", "float64"}};
    const std::string text = header.dump();
    const auto len = static_cast<std::uint32_t>(text.size());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw RuntimeError("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(image.data.data()),
              static_cast<std::streamsize>(image.data.size() * sizeof(double)));
    if (!out) {
        throw RuntimeError("failed writing " + path.string());
    }
}

Image read_float_dump(const std::filesystem::path& path)
{
    const std::string bytes = read_text_file(path);
    std::uint32_t len = 0;
    if (bytes.size() < 4) {
        throw ValidationError(path.string() + ": truncated float dump");
    }
    std::memcpy(&len, bytes.data(), 4);
    if (bytes.size() < 4 + static_cast<std::size_t>(len)) {
        throw ValidationError(path.string() + ": truncated float dump header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(4, len));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": bad header: " + e.what());
    }
    if (header.value("dtype", "") != "float64") {
        throw ValidationError(path.string() + ": unsupported dtype");
    }
    Image img = Image::make(header.at("width").get<int>(), header.at("height").get<int>(),
                            header.at("channels").get<int>());
    const std::size_t payload = img.data.size() * sizeof(double);
    if (bytes.size() != 4 + len + payload) {
        throw ValidationError(path.string() + ": payload size does not match header");
    }
    std::memcpy(img.data.data(), bytes.data() + 4 + len, payload);
    return img;
}

namespace {

struct PlyProperty {
    std::string name;
    std::string type;
};

std::size_t ply_type_size(const std::string& t)
{
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") {
        return 1;
    }
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") {
        return 2;
    }
    if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") {
        return 4;
    }
    if (t == "double" || t == "float64") {
        return 8;
    }
    return 0;
}

template <typename T>
double load_as(const char* p)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
}

double ply_read_binary(const std::string& t, const char* p)
{
    if (t == "char" || t == "int8") return load_as<std::int8_t>(p);
    if (t == "uchar" || t == "uint8") return load_as<std::uint8_t>(p);
    if (t == "short" || t == "int16") return load_as<std::int16_t>(p);
    if (t == "ushort" || t == "uint16") return load_as<std::uint16_t>(p);
    if (t == "int" || t == "int32") return load_as<std::int32_t>(p);
    if (t == "uint" || t == "uint32") return load_as<std::uint32_t>(p);
    if (t == "float" || t == "float32") return load_as<float>(p);
    return load_as<double>(p);
}

bool is_integer_type(const std::string& t)
{
    return t != "float" && t != "float32" && t != "double" && t != "float64";
}

} // namespace

PointCloud read_ply(const std::filesystem::path& path)
{
    const std::string bytes = read_text_file(path);
    const std::string where = path.string() + ": ";
    const std::size_t end_tag = bytes.find("end_header");
    if (bytes.rfind("ply", 0) != 0 || end_tag == std::string::npos) {
        throw ValidationError(where + "not a PLY file");
    }
    std::size_t body = bytes.find('\n', end_tag);
    if (body == std::string::npos) {
        throw ValidationError(where + "truncated header");
    }
    ++body;
    std::istringstream header(bytes.substr(0, end_tag));
    std::string line, format;
    std::size_t vertex_count = 0;
    bool in_vertex = false, vertex_seen = false, after_vertex = false;
    std::vector<PlyProperty> props;
    while (std::getline(header, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            ls >> format;
        } else if (word == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            if (vertex_seen) {
                after_vertex = true;
            }
            in_vertex = name == "vertex";
            if (in_vertex) {
                if (after_vertex) {
                    throw ValidationError(where + "vertex element must come first");
                }
                vertex_count = count;
                vertex_seen = true;
            }
        } else if (word == "property" && in_vertex) {
            std::string type, name;
            ls >> type;
            if (type == "list") {
                throw ValidationError(where + "list properties on vertices are not supported");
            }
            ls >> name;
            if (ply_type_size(type) == 0) {
                throw ValidationError(where + "unknown property type " + type);
            }
            props.push_back({name, type});
        }
    }
    if (!vertex_seen) {
        throw ValidationError(where + "no vertex element");
    }
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (std::size_t i = 0; i < props.size(); ++i) {
        const std::string& n = props[i].name;
        const int idx = static_cast<int>(i);
        if (n == "x") ix = idx;
        if (n == "y") iy = idx;
        if (n == "z") iz = idx;
        if (n == "red" || n == "r") ir = idx;
        if (n == "green" || n == "g") ig = idx;
        if (n == "blue" || n == "b") ib = idx;
    }
    if (ix < 0 || iy < 0 || iz < 0) {
        throw ValidationError(where + "vertex element lacks x/y/z");
    }
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;
    PointCloud cloud;
    cloud.positions.resize(vertex_count);
    if (has_color) {
        cloud.colors.resize(vertex_count);
    }
    std::vector<double> values(props.size());
    const auto store = [&](std::size_t v) {
        cloud.positions[v] = Vec3(values[static_cast<std::size_t>(ix)], values[static_cast<std::size_t>(iy)],
                                  values[static_cast<std::size_t>(iz)]);
        if (!cloud.positions[v].allFinite()) {
            throw ValidationError(where + "non-finite vertex " + std::to_string(v));
        }
        if (has_color) {
            Vec3 c;
            const int idx[3] = {ir, ig, ib};
            for (int k = 0; k < 3; ++k) {
                const PlyProperty& p = props[static_cast<std::size_t>(idx[k])];
                const double raw = values[static_cast<std::size_t>(idx[k])];
                c[k] = is_integer_type(p.type) ? raw / 255.0 : raw;
            }
            cloud.colors[v] = c;
        }
    };
    if (format == "ascii") {
        std::istringstream in(bytes.substr(body));
        for (std::size_t v = 0; v < vertex_count; ++v) {
            for (double& x : values) {
                if (!(in >> x)) {
                    throw ValidationError(where + "truncated ASCII vertex data");
                }
            }
            store(v);
        }
    } else if (format == "binary_little_endian") {
        std::size_t stride = 0;
        for (const PlyProperty& p : props) {
            stride += ply_type_size(p.type);
        }
        if (bytes.size() < body + stride * vertex_count) {
            throw ValidationError(where + "truncated binary vertex data");
        }
        const char* cur = bytes.data() + body;
        for (std::size_t v = 0; v < vertex_count; ++v) {
            for (std::size_t i = 0; i < props.size(); ++i) {
                values[i] = ply_read_binary(props[i].type, cur);
                cur += ply_type_size(props[i].type);
            }
            store(v);
        }
    } else {
        throw ValidationError(where + "unsupported PLY format '" + format + "'");
    }
    return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud)
{
    if (cloud.has_colors() && cloud.colors.size() != cloud.positions.size()) {
        throw ValidationError("write_ply: color count does not match position count");
    }
    std::ostringstream head;
    head << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.size()
         << "\nproperty float x\nproperty float y\nproperty float z\n";
    if (cloud.has_colors()) {
        head << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    head << "end_header\n";
    std::string out = head.str();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            const auto f = static_cast<float>(cloud.positions[i][k]);
            char b[4];
            std::memcpy(b, &f, 4);
            out.append(b, 4);
        }
        if (cloud.has_colors()) {
            for (int k = 0; k < 3; ++k) {
                const double c = std::clamp(cloud.colors[i][k], 0.0, 1.0);
                out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(c * 255.0))));
            }
        }
    }
    write_text_file(path, out);
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw RuntimeError("cannot write " + path.string());
    }
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) {
        throw RuntimeError("failed writing " + path.string());
    }
}

} // namespace urbansplat
