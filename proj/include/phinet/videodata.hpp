#pragma once

// Synthetic moving-shape videos with ground-truth masks, temporal pair
// sampling and the shared crop/flip augmentation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "phinet/config.hpp"
#include "phinet/frame.hpp"

namespace phinet {

enum class ShapeKind { disk, square, triangle };
enum class BackgroundKind { flat, textured };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::disk;
  double cx = 0.0, cy = 0.0;  // centre at frame 0, pixels
  double size = 4.0;          // radius / half-side, pixels
  double vx = 0.0, vy = 0.0;  // pixels per frame
  std::array<float, 3> color{1.0f, 1.0f, 1.0f};
};

struct SyntheticVideoSpec {
  int n_frames = 64;
  int image_size = 32;
  int channels = 3;
  std::vector<ShapeSpec> shapes;
  BackgroundKind background = BackgroundKind::flat;
  std::array<float, 3> background_color{0.1f, 0.1f, 0.1f};
  std::uint64_t seed = 0;  // drives the background texture
};

struct LabeledVideo {
  std::string id;
  std::vector<Frame> frames;
  std::vector<LabelGrid> masks;  // 0 = background, 1..n_labels = shape ids
  int n_labels = 0;

  int length() const { return static_cast<int>(frames.size()); }
};

struct AugmentRecord {
  int x0 = 0, y0 = 0, width = 0, height = 0;  // crop box in source pixels
  bool flip = false;

  bool operator==(const AugmentRecord&) const = default;
};

struct FramePair {
  Frame x_t;
  Frame x_tk;
  int k = 1;
  int t = 0;  // zero-based index of x_t
  int video = 0;
  AugmentRecord augmentation;
};

// Random spec with between n_shapes_min and n_shapes_max shapes.
SyntheticVideoSpec random_video_spec(std::uint64_t seed, int n_frames, int image_size, int n_shapes_min,
                                     int n_shapes_max);

// Constant-velocity shapes with toroidal wrap, painter's-order masks
// (later shape id wins). Deterministic given the spec.
LabeledVideo generate_video(const SyntheticVideoSpec& spec);

// The standard synthetic set: n_videos videos, video i seeded by (seed, i).
std::vector<LabeledVideo> generate_dataset(const DataConfig& data, int image_size);

// k ~ U{k_min..k_max}, then t ~ U{0..T−1−k}.
FramePair sample_pair(const LabeledVideo& video, int video_index, int k_min, int k_max, std::mt19937_64& rng);

// One random resized crop (area fraction in [crop_min, crop_max], aspect in
// [3/4, 4/3]) plus one flip decision, shared by both frames.
AugmentRecord random_augment(int image_size, double crop_min, double crop_max, double hflip_p,
                             std::mt19937_64& rng);
FramePair augment_pair(FramePair pair, double crop_min, double crop_max, double hflip_p, std::mt19937_64& rng);

// Crop-resize back to `out_size` (bilinear) then optional flip.
Frame apply_augment(const Frame& frame, const AugmentRecord& rec, int out_size);
// Same geometry with nearest-neighbour sampling, for label grids.
LabelGrid apply_augment(const LabelGrid& mask, const AugmentRecord& rec, int out_size);

Frame hflip(const Frame& frame);
LabelGrid hflip(const LabelGrid& mask);

// Per-channel mean and std over every pixel of every frame.
std::pair<std::vector<double>, std::vector<double>> channel_statistics(const std::vector<LabeledVideo>& videos);

// Directory layout: <root>/<video_id>/frame_%06d.ppm (or .pgm for one
// channel) with an optional <root>/<video_id>/masks/frame_%06d.pgm mirror.
void write_video(const LabeledVideo& video, const std::filesystem::path& root);
void write_dataset(const std::vector<LabeledVideo>& videos, const std::filesystem::path& root);
LabeledVideo read_video(const std::filesystem::path& dir);
std::vector<LabeledVideo> read_dataset(const std::filesystem::path& root);

std::string frame_filename(int index, const std::string& extension);

}  // namespace phinet
