#pragma once

#include <Eigen/Dense>

#include <vector>

namespace phinet {

// Channel-planar image. Pixel values lie in [0, 1] before normalisation.
struct Frame {
  std::vector<Eigen::MatrixXf> planes;  // one (rows = y, cols = x) plane per channel

  Frame() = default;
  Frame(int channels, int size) : planes(channels, Eigen::MatrixXf::Zero(size, size)) {}

  int channels() const { return static_cast<int>(planes.size()); }
  int height() const { return planes.empty() ? 0 : static_cast<int>(planes.front().rows()); }
  int width() const { return planes.empty() ? 0 : static_cast<int>(planes.front().cols()); }

  bool operator==(const Frame& other) const {
    if (planes.size() != other.planes.size()) return false;
    for (std::size_t c = 0; c < planes.size(); ++c)
      if (planes[c].rows() != other.planes[c].rows() || planes[c].cols() != other.planes[c].cols() ||
          planes[c] != other.planes[c])
        return false;
    return true;
  }
};

using LabelGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace phinet
