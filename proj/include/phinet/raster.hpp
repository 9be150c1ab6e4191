#pragma once

// Binary PNM (P5 grey / P6 RGB, 8-bit) reading and writing. Lossless for
// frames whose values sit on the 1/255 grid and for label grids < 256.

#include <filesystem>

#include "phinet/frame.hpp"

namespace phinet {

void write_frame(const Frame& frame, const std::filesystem::path& path);
Frame read_frame(const std::filesystem::path& path);

void write_labels(const LabelGrid& labels, const std::filesystem::path& path);
LabelGrid read_labels(const std::filesystem::path& path);

// Writes an RGB image given as three planes with values in [0, 1].
void write_rgb(const Frame& frame, const std::filesystem::path& path);

}  // namespace phinet
