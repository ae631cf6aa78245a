#pragma once

#include <filesystem>

#include "rim/data.hpp"

namespace rim::io {

/// Reads any PNG as 3-channel [0,1] floats.
data::ImageTensor read_png_rgb(const std::filesystem::path& path);

/// Reads an 8-bit grayscale PNG as raw labels.
data::ParsingMap read_png_labels(const std::filesystem::path& path, int class_count);

/// Image size from the PNG header without decoding pixels.
data::Size2 read_png_size(const std::filesystem::path& path);

/// Writes a 1- or 3-channel tensor as 8-bit PNG (values rounded from [0,1]).
void write_png(const std::filesystem::path& path, const data::ImageTensor& img);

void write_png_labels(const std::filesystem::path& path, const data::ParsingMap& parsing);

}  // namespace rim::io
