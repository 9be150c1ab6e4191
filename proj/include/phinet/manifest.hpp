#pragma once

// Run manifests and content hashes for reproducibility checks.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace phinet {

// SHA-1 of "blob <size>\0<content>", as `git hash-object` computes it.
std::string git_blob_hash(const std::string& content);

// SHA-1 over every regular file below `root`: sorted relative paths, each
// followed by its blob hash. Files named in `exclude` are skipped.
std::string directory_hash(const std::filesystem::path& root, const std::vector<std::string>& exclude = {});

struct RunManifest {
  std::string command;
  std::string config_text;  // resolved config
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::map<std::string, std::string> artifacts;  // role -> path relative to the run directory
};

std::string utc_timestamp();

// Writes `<run_dir>/manifest.ini` (replacing any previous one) and
// `<run_dir>/config.resolved`.
void write_manifest(const RunManifest& m, const std::filesystem::path& run_dir);

}  // namespace phinet
