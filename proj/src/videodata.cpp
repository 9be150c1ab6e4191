#include "phinet/videodata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "phinet/errors.hpp"
#include "phinet/raster.hpp"
#include "phinet/seeding.hpp"

namespace phinet {
namespace {

float on_byte_grid(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0); }

// Signed toroidal offset of `a` from `b` in [−size/2, size/2).
double wrap_offset(double a, double b, double size) {
  double d = std::fmod(a - b, size);
  if (d < -size / 2) d += size;
  if (d >= size / 2) d -= size;
  return d;
}

bool covers(const ShapeSpec& s, double dx, double dy) {
  switch (s.kind) {
    case ShapeKind::disk:
      return dx * dx + dy * dy <= s.size * s.size;
    case ShapeKind::square:
      return std::abs(dx) <= s.size && std::abs(dy) <= s.size;
    case ShapeKind::triangle:
      // Apex up; the half-width grows linearly from 0 at the top to size at the base.
      return dy >= -s.size && dy <= s.size && std::abs(dx) <= (dy + s.size) / 2.0;
  }
  return false;
}

}  // namespace

SyntheticVideoSpec random_video_spec(std::uint64_t seed, int n_frames, int image_size, int n_shapes_min,
                                     int n_shapes_max) {
  if (n_shapes_min < 1 || n_shapes_max < n_shapes_min) throw ConfigError("need 1 <= n_shapes_min <= n_shapes_max");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SyntheticVideoSpec spec;
  spec.n_frames = n_frames;
  spec.image_size = image_size;
  spec.seed = seed;
  spec.background = u01(rng) < 0.5 ? BackgroundKind::flat : BackgroundKind::textured;
  for (auto& c : spec.background_color) c = on_byte_grid(0.05 + 0.3 * u01(rng));
  const int n = std::uniform_int_distribution<int>(n_shapes_min, n_shapes_max)(rng);
  const double s = image_size;
  for (int i = 0; i < n; ++i) {
    ShapeSpec shape;
    shape.kind = static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
    shape.cx = s * u01(rng);
    shape.cy = s * u01(rng);
    shape.size = s * (0.12 + 0.13 * u01(rng));
    shape.vx = 3.0 * u01(rng) - 1.5;
    shape.vy = 3.0 * u01(rng) - 1.5;
    // Bright colours so every shape stands out against the darker background.
    for (auto& c : shape.color) c = on_byte_grid(0.45 + 0.55 * u01(rng));
    spec.shapes.push_back(shape);
  }
  return spec;
}

LabeledVideo generate_video(const SyntheticVideoSpec& spec) {
  if (spec.n_frames < 2) throw ConfigError("generate_video: a video needs at least 2 frames");
  if (spec.image_size < 1 || (spec.channels != 1 && spec.channels != 3))
    throw ConfigError("generate_video: bad image size or channel count");
  for (const auto& s : spec.shapes)
    if (!(s.size > 0.0)) throw ConfigError("generate_video: shapes must have positive size");
  if (spec.shapes.size() > 255) throw ConfigError("generate_video: at most 255 shapes");

  const int S = spec.image_size;
  Frame background(spec.channels, S);
  std::mt19937_64 rng(spec.seed ^ 0x7465787475726531ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int c = 0; c < spec.channels; ++c) {
    const double base = spec.background_color[c];
    const double fx = 1 + std::floor(3 * u01(rng)), fy = 1 + std::floor(3 * u01(rng));
    const double phase = 2 * std::numbers::pi * u01(rng);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        double v = base;
        if (spec.background == BackgroundKind::textured)
          v += 0.12 * std::sin(2 * std::numbers::pi * (fx * x + fy * y) / S + phase);
        background.planes[c](y, x) = on_byte_grid(v);
      }
  }

  LabeledVideo video;
  video.n_labels = static_cast<int>(spec.shapes.size());
  for (int t = 0; t < spec.n_frames; ++t) {
    Frame frame = background;
    LabelGrid mask = LabelGrid::Zero(S, S);
    for (std::size_t id = 0; id < spec.shapes.size(); ++id) {
      const ShapeSpec& s = spec.shapes[id];
      const double cx = s.cx + s.vx * t, cy = s.cy + s.vy * t;
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
          if (!covers(s, wrap_offset(x + 0.5, cx, S), wrap_offset(y + 0.5, cy, S))) continue;
          mask(y, x) = static_cast<int>(id) + 1;
          for (int c = 0; c < spec.channels; ++c) frame.planes[c](y, x) = s.color[c];
        }
    }
    video.frames.push_back(std::move(frame));
    video.masks.push_back(std::move(mask));
  }
  return video;
}

std::vector<LabeledVideo> generate_dataset(const DataConfig& data, int image_size) {
  if (data.n_videos < 1) throw ConfigError("generate_dataset: need at least one video");
  std::vector<LabeledVideo> videos;
  for (int i = 0; i < data.n_videos; ++i) {
    auto spec = random_video_spec(mix_seed({data.seed, static_cast<std::uint64_t>(i)}), data.frames, image_size,
                                  data.n_shapes_min, data.n_shapes_max);
    if (data.static_scene)
      for (auto& shape : spec.shapes) shape.vx = shape.vy = 0.0;
    auto video = generate_video(spec);
    char id[32];
    std::snprintf(id, sizeof id, "video_%04d", i);
    video.id = id;
    videos.push_back(std::move(video));
  }
  return videos;
}

FramePair sample_pair(const LabeledVideo& video, int video_index, int k_min, int k_max, std::mt19937_64& rng) {
  const int T = video.length();
  if (k_min < 1 || k_max < k_min || k_max > T - 1)
    throw ConfigError("sample_pair: need 1 <= k_min <= k_max <= T-1 (T = " + std::to_string(T) + ")");
  FramePair pair;
  pair.k = std::uniform_int_distribution<int>(k_min, k_max)(rng);
  pair.t = std::uniform_int_distribution<int>(0, T - 1 - pair.k)(rng);
  pair.video = video_index;
  pair.x_t = video.frames[pair.t];
  pair.x_tk = video.frames[pair.t + pair.k];
  const int S = pair.x_t.width();
  pair.augmentation = AugmentRecord{0, 0, S, S, false};
  return pair;
}

AugmentRecord random_augment(int image_size, double crop_min, double crop_max, double hflip_p,
                             std::mt19937_64& rng) {
  if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0))
    throw ConfigError("random_augment: need 0 < crop_min <= crop_max <= 1");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double area = static_cast<double>(image_size) * image_size;
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  AugmentRecord rec{0, 0, image_size, image_size, false};
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * (crop_min + (crop_max - crop_min) * u01(rng));
    const double ratio = std::exp(log_lo + (log_hi - log_lo) * u01(rng));
    const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w > 0 && h > 0 && w <= image_size && h <= image_size) {
      rec.x0 = std::uniform_int_distribution<int>(0, image_size - w)(rng);
      rec.y0 = std::uniform_int_distribution<int>(0, image_size - h)(rng);
      rec.width = w;
      rec.height = h;
      break;
    }
  }
  rec.flip = u01(rng) < hflip_p;
  return rec;
}

FramePair augment_pair(FramePair pair, double crop_min, double crop_max, double hflip_p, std::mt19937_64& rng) {
  const int S = pair.x_t.width();
  pair.augmentation = random_augment(S, crop_min, crop_max, hflip_p, rng);
  pair.x_t = apply_augment(pair.x_t, pair.augmentation, S);
  pair.x_tk = apply_augment(pair.x_tk, pair.augmentation, S);
  return pair;
}

Frame hflip(const Frame& frame) {
  Frame out = frame;
  for (auto& p : out.planes) p = p.rowwise().reverse().eval();
  return out;
}

LabelGrid hflip(const LabelGrid& mask) { return mask.rowwise().reverse(); }

Frame apply_augment(const Frame& frame, const AugmentRecord& rec, int out_size) {
  const int H = frame.height(), W = frame.width();
  Frame out(frame.channels(), out_size);
  const double sx = static_cast<double>(rec.width) / out_size, sy = static_cast<double>(rec.height) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const double fy = std::clamp(rec.y0 + (i + 0.5) * sy - 0.5, 0.0, H - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, H - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int j = 0; j < out_size; ++j) {
      const double fx = std::clamp(rec.x0 + (j + 0.5) * sx - 0.5, 0.0, W - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, W - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < frame.channels(); ++c) {
        const auto& p = frame.planes[c];
        if (wx == 0.0f && wy == 0.0f) {
          out.planes[c](i, j) = p(y0, x0);
          continue;
        }
        const float top = (1 - wx) * p(y0, x0) + wx * p(y0, x1);
        const float bottom = (1 - wx) * p(y1, x0) + wx * p(y1, x1);
        out.planes[c](i, j) = (1 - wy) * top + wy * bottom;
      }
    }
  }
  return rec.flip ? hflip(out) : out;
}

LabelGrid apply_augment(const LabelGrid& mask, const AugmentRecord& rec, int out_size) {
  const int H = static_cast<int>(mask.rows()), W = static_cast<int>(mask.cols());
  LabelGrid out(out_size, out_size);
  const double sx = static_cast<double>(rec.width) / out_size, sy = static_cast<double>(rec.height) / out_size;
  for (int i = 0; i < out_size; ++i) {
    const int y = std::clamp(rec.y0 + static_cast<int>(std::floor((i + 0.5) * sy)), 0, H - 1);
    for (int j = 0; j < out_size; ++j) {
      const int x = std::clamp(rec.x0 + static_cast<int>(std::floor((j + 0.5) * sx)), 0, W - 1);
      out(i, j) = mask(y, x);
    }
  }
  return rec.flip ? hflip(out) : out;
}

std::pair<std::vector<double>, std::vector<double>> channel_statistics(const std::vector<LabeledVideo>& videos) {
  if (videos.empty() || videos.front().frames.empty()) throw ConfigError("channel_statistics: empty dataset");
  const int C = videos.front().frames.front().channels();
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  double count = 0.0;
  for (const auto& v : videos)
    for (const auto& f : v.frames) {
      for (int c = 0; c < C; ++c) {
        sum[c] += f.planes[c].cast<double>().sum();
        sq[c] += f.planes[c].cast<double>().squaredNorm();
      }
      count += static_cast<double>(f.planes[0].size());
    }
  std::vector<double> mean(C), std(C);
  for (int c = 0; c < C; ++c) {
    mean[c] = sum[c] / count;
    std[c] = std::sqrt(std::max(sq[c] / count - mean[c] * mean[c], 1e-12));
  }
  return {mean, std};
}

std::string frame_filename(int index, const std::string& extension) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%06d.%s", index, extension.c_str());
  return buf;
}

void write_video(const LabeledVideo& video, const std::filesystem::path& root) {
  const auto dir = root / video.id;
  std::filesystem::create_directories(dir);
  const std::string ext = video.frames.front().channels() == 1 ? "pgm" : "ppm";
  for (int t = 0; t < video.length(); ++t) write_frame(video.frames[t], dir / frame_filename(t, ext));
  if (!video.masks.empty()) {
    std::filesystem::create_directories(dir / "masks");
    for (int t = 0; t < static_cast<int>(video.masks.size()); ++t)
      write_labels(video.masks[t], dir / "masks" / frame_filename(t, "pgm"));
  }
}

void write_dataset(const std::vector<LabeledVideo>& videos, const std::filesystem::path& root) {
  for (const auto& v : videos) write_video(v, root);
}

namespace {

std::vector<std::filesystem::path> frame_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    const auto ext = e.path().extension().string();
    if (name.rfind("frame_", 0) == 0 && (ext == ".ppm" || ext == ".pgm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

LabeledVideo read_video(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a video directory: '" + dir.string() + "'");
  LabeledVideo video;
  video.id = dir.filename().string();
  for (const auto& f : frame_files(dir)) video.frames.push_back(read_frame(f));
  if (video.frames.empty()) throw IoError("no frame_%06d.ppm/pgm files in '" + dir.string() + "'");
  const auto mask_dir = dir / "masks";
  if (std::filesystem::is_directory(mask_dir)) {
    for (const auto& f : frame_files(mask_dir)) {
      video.masks.push_back(read_labels(f));
      video.n_labels = std::max(video.n_labels, video.masks.back().maxCoeff());
    }
    if (video.masks.size() != video.frames.size())
      throw IoError("'" + mask_dir.string() + "': mask count differs from frame count");
  }
  return video;
}

std::vector<LabeledVideo> read_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset directory '" + root.string() + "' does not exist");
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<LabeledVideo> videos;
  for (const auto& d : dirs) videos.push_back(read_video(d));
  if (videos.empty()) throw IoError("dataset directory '" + root.string() + "' holds no videos");
  return videos;
}

}  // namespace phinet
