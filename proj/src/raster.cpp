#include "phinet/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "phinet/errors.hpp"

namespace phinet {
namespace {

struct Pnm {
  int channels = 0;
  int width = 0;
  int height = 0;
  std::vector<unsigned char> bytes;
};

void skip_ws_and_comments(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

Pnm read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  in >> magic;
  Pnm img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw IoError("'" + path.string() + "' is not a binary PGM/PPM file");
  int maxval = 0;
  skip_ws_and_comments(in);
  in >> img.width;
  skip_ws_and_comments(in);
  in >> img.height;
  skip_ws_and_comments(in);
  in >> maxval;
  in.get();
  if (!in || img.width <= 0 || img.height <= 0 || maxval != 255)
    throw IoError("'" + path.string() + "': unsupported PNM header (need 8-bit)");
  img.bytes.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (!in) throw IoError("'" + path.string() + "': truncated pixel data");
  return img;
}

void write_pnm(const Pnm& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

unsigned char quantize(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

void write_frame(const Frame& frame, const std::filesystem::path& path) {
  if (frame.channels() != 1 && frame.channels() != 3)
    throw IoError("write_frame: only 1- or 3-channel frames can be stored");
  Pnm img{frame.channels(), frame.width(), frame.height(), {}};
  img.bytes.reserve(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) img.bytes.push_back(quantize(frame.planes[c](y, x)));
  write_pnm(img, path);
}

void write_rgb(const Frame& frame, const std::filesystem::path& path) { write_frame(frame, path); }

Frame read_frame(const std::filesystem::path& path) {
  const Pnm img = read_pnm(path);
  if (img.width != img.height) throw IoError("'" + path.string() + "': frames must be square");
  Frame frame(img.channels, img.width);
  std::size_t k = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) frame.planes[c](y, x) = static_cast<float>(img.bytes[k++]) / 255.0f;
  return frame;
}

void write_labels(const LabelGrid& labels, const std::filesystem::path& path) {
  Pnm img{1, static_cast<int>(labels.cols()), static_cast<int>(labels.rows()), {}};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const int v = labels(y, x);
      if (v < 0 || v > 255) throw IoError("write_labels: label out of 8-bit range");
      img.bytes.push_back(static_cast<unsigned char>(v));
    }
  write_pnm(img, path);
}

LabelGrid read_labels(const std::filesystem::path& path) {
  const Pnm img = read_pnm(path);
  if (img.channels != 1) throw IoError("'" + path.string() + "': label grids must be single-channel PGM");
  LabelGrid labels(img.height, img.width);
  std::size_t k = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) labels(y, x) = img.bytes[k++];
  return labels;
}

}  // namespace phinet
