#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "phinet/config.hpp"

namespace phinet::test {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("phinet_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Micro model with a small synthetic set: fast enough for 64-bit training tests.
inline RunConfig micro_run() {
  RunConfig cfg = desk_preset();
  cfg.model = ModelConfig::micro();
  cfg.data.n_videos = 3;
  cfg.data.frames = 12;
  cfg.data.k_min = 1;
  cfg.data.k_max = 6;
  cfg.train.batch_size = 2;
  cfg.train.total_epochs = 4;
  cfg.train.warmup_epochs = 1;
  cfg.train.lr = 1e-3;
  cfg.train.keep_checkpoints = 0;
  return cfg;
}

}  // namespace phinet::test
