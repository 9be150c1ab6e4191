#pragma once

// Minimal figure output: SVG line charts and PPM mask strips.

#include <filesystem>
#include <string>
#include <vector>

#include "phinet/frame.hpp"

namespace phinet {

struct Series {
  std::string name;
  std::vector<double> y;
};

void write_line_chart_svg(const std::string& title, const std::vector<double>& x, const std::vector<Series>& series,
                          const std::filesystem::path& path);

// Frame indices shown in a strip: the reference, then 25%, 75% and 100% of the sequence.
std::vector<int> strip_frames(int length);

// One row of panels; each panel is `masks[i]` overlaid on `frames[i]`
// (grey background when `frames` is empty), nearest-upscaled to `size`.
Frame render_mask_strip(const std::vector<LabelGrid>& masks, const std::vector<Frame>& frames, int size);

}  // namespace phinet
