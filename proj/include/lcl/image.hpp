#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lcl/error.hpp"

namespace lcl {

/// Single-channel image, row-major, values in [0,1] with ink near 1.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}

    float& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    bool square() const { return width == height; }
    std::span<const float> view() const { return pixels; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear resize to size x size with corner-aligned sampling (the corner
/// pixels of source and destination coincide). Output is clamped to [0,1].
inline Image resize(const Image& src, std::size_t size) {
    if (src.width == 0 || src.height == 0 || size == 0) {
        throw ContractError("resize: empty image or target size");
    }
    if (src.width == size && src.height == size) {
        Image out = src;
        for (auto& v : out.pixels) {
            v = std::clamp(v, 0.0f, 1.0f);
        }
        return out;
    }
    Image out(size, size);
    const double sx = size > 1 ? static_cast<double>(src.width - 1) / static_cast<double>(size - 1) : 0.0;
    const double sy = size > 1 ? static_cast<double>(src.height - 1) / static_cast<double>(size - 1) : 0.0;
    for (std::size_t y = 0; y < size; ++y) {
        const double fy = static_cast<double>(y) * sy;
        const auto y0 = static_cast<std::size_t>(std::floor(fy));
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < size; ++x) {
            const double fx = static_cast<double>(x) * sx;
            const auto x0 = static_cast<std::size_t>(std::floor(fx));
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = (1.0 - wx) * src.at(x0, y0) + wx * src.at(x1, y0);
            const double bottom = (1.0 - wx) * src.at(x0, y1) + wx * src.at(x1, y1);
            out.at(x, y) = static_cast<float>(std::clamp((1.0 - wy) * top + wy * bottom, 0.0, 1.0));
        }
    }
    return out;
}

/// Exact clockwise rotation by quarter_turns * 90 degrees of a square image.
inline Image rotate90(const Image& src, int quarter_turns = 1) {
    if (!src.square()) {
        throw ContractError("rotate90: image must be square");
    }
    const int k = ((quarter_turns % 4) + 4) % 4;
    Image out = src;
    const std::size_t n = src.width;
    for (int t = 0; t < k; ++t) {
        Image next(n, n);
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                next.at(n - 1 - y, x) = out.at(x, y);
            }
        }
        out = std::move(next);
    }
    return out;
}

/// Reads an 8-bit (or lower depth) grayscale PNG. Pixel values are scaled to
/// [0,1]; when the border is mostly bright the image is inverted so that ink
/// is near 1 and background near 0.
inline Image read_png_grayscale(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw DataError("cannot read image " + path.string() + ": " + img.message);
    }
    if (img.format & PNG_FORMAT_FLAG_COLOR) {
        png_image_free(&img);
        throw DataError("image is not grayscale: " + path.string());
    }
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw DataError("cannot decode image " + path.string() + ": " + msg);
    }
    Image out(img.width, img.height);
    for (std::size_t i = 0; i < buf.size(); ++i) {
        out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
    }
    double border = 0.0;
    std::size_t count = 0;
    for (std::size_t x = 0; x < out.width; ++x) {
        border += out.at(x, 0) + out.at(x, out.height - 1);
        count += 2;
    }
    for (std::size_t y = 0; y < out.height; ++y) {
        border += out.at(0, y) + out.at(out.width - 1, y);
        count += 2;
    }
    if (border / static_cast<double>(count) > 0.5) {
        for (auto& v : out.pixels) {
            v = 1.0f - v;
        }
    }
    return out;
}

/// Writes an 8-bit grayscale PNG, storing values as-is (no polarity flip).
inline void write_png_grayscale(const std::filesystem::path& path, const Image& image) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(image.pixels.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
    }
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, buf.data(), 0, nullptr)) {
        throw DataError("cannot write image " + path.string() + ": " + img.message);
    }
}

} // namespace lcl
