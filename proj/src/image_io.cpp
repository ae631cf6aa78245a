#include "rim/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "rim/errors.hpp"

namespace rim::io {

namespace {

struct PngImage {
    png_image image{};
    PngImage() {
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> read_pixels(const std::filesystem::path& path, png_uint_32 format,
                                      data::Size2& size) {
    PngImage png;
    if (png_image_begin_read_from_file(&png.image, path.c_str()) == 0) {
        throw IoError("cannot read PNG '" + path.string() + "': " + png.image.message);
    }
    png.image.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
    if (png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr) == 0) {
        throw IoError("cannot decode PNG '" + path.string() + "': " + png.image.message);
    }
    size = {static_cast<int>(png.image.height), static_cast<int>(png.image.width)};
    return buffer;
}

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_pixels(const std::filesystem::path& path, png_uint_32 format, data::Size2 size,
                  const std::vector<std::uint8_t>& pixels) {
    PngImage png;
    png.image.width = static_cast<png_uint_32>(size.width);
    png.image.height = static_cast<png_uint_32>(size.height);
    png.image.format = format;
    if (png_image_write_to_file(&png.image, path.c_str(), 0, pixels.data(), 0, nullptr) == 0) {
        throw IoError("cannot write PNG '" + path.string() + "': " + png.image.message);
    }
}

}  // namespace

data::ImageTensor read_png_rgb(const std::filesystem::path& path) {
    data::Size2 size;
    const auto pixels = read_pixels(path, PNG_FORMAT_RGB, size);
    data::ImageTensor img(3, size.height, size.width);
    for (int y = 0; y < size.height; ++y) {
        for (int x = 0; x < size.width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * size.width + x) * 3;
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = static_cast<double>(pixels[base + c]) / 255.0;
            }
        }
    }
    return img;
}

data::ParsingMap read_png_labels(const std::filesystem::path& path, int class_count) {
    data::Size2 size;
    auto pixels = read_pixels(path, PNG_FORMAT_GRAY, size);
    for (const auto label : pixels) {
        if (label >= class_count) {
            throw ValidationError("parsing label " + std::to_string(label) + " in '" + path.string() +
                                  "' exceeds class count " + std::to_string(class_count));
        }
    }
    return {class_count, size.height, size.width, std::move(pixels)};
}

data::Size2 read_png_size(const std::filesystem::path& path) {
    PngImage png;
    if (png_image_begin_read_from_file(&png.image, path.c_str()) == 0) {
        throw IoError("cannot read PNG '" + path.string() + "': " + png.image.message);
    }
    return {static_cast<int>(png.image.height), static_cast<int>(png.image.width)};
}

void write_png(const std::filesystem::path& path, const data::ImageTensor& img) {
    const int channels = img.channels();
    if (channels != 1 && channels != 3) {
        throw std::invalid_argument("write_png expects 1 or 3 channels, got " + std::to_string(channels));
    }
    std::vector<std::uint8_t> pixels(img.size());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < channels; ++c) {
                pixels[(static_cast<std::size_t>(y) * img.width() + x) * channels + c] = quantize(img.at(c, y, x));
            }
        }
    }
    write_pixels(path, channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, img.size2(), pixels);
}

void write_png_labels(const std::filesystem::path& path, const data::ParsingMap& parsing) {
    const auto labels = parsing.labels();
    write_pixels(path, PNG_FORMAT_GRAY, {parsing.height(), parsing.width()},
                 std::vector<std::uint8_t>(labels.begin(), labels.end()));
}

}  // namespace rim::io
