#include "phinet/manifest.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "phinet/errors.hpp"

namespace phinet {
namespace {

std::string hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(digits[d[i] >> 4]);
    out.push_back(digits[d[i] & 15]);
  }
  return out;
}

std::string sha1(const std::string& data) {
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
  return hex(digest, SHA_DIGEST_LENGTH);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

std::string git_blob_hash(const std::string& content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob += content;
  return sha1(blob);
}

std::string directory_hash(const std::filesystem::path& root, const std::vector<std::string>& exclude) {
  if (!std::filesystem::is_directory(root)) throw IoError("'" + root.string() + "' is not a directory");
  std::vector<std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = std::filesystem::relative(e.path(), root).generic_string();
    if (std::find(exclude.begin(), exclude.end(), e.path().filename().string()) != exclude.end()) continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f + " " + git_blob_hash(slurp(root / f)) + "\n";
  return sha1(listing);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const RunManifest& m, const std::filesystem::path& run_dir) {
  std::filesystem::create_directories(run_dir);
  {
    std::ofstream cfg(run_dir / "config.resolved");
    if (!cfg) throw IoError("cannot write '" + (run_dir / "config.resolved").string() + "'");
    cfg << m.config_text;
  }
  std::ofstream out(run_dir / "manifest.ini");
  if (!out) throw IoError("cannot write '" + (run_dir / "manifest.ini").string() + "'");
  out << "[run]\n";
  out << "command = " << m.command << "\n";
  out << "seed = " << m.seed << "\n";
  out << "started = " << m.started << "\n";
  out << "finished = " << m.finished << "\n";
  out << "config = config.resolved\n";
  out << "config_hash = " << git_blob_hash(m.config_text) << "\n";
  out << "\n[artifacts]\n";
  for (const auto& [role, path] : m.artifacts) out << role << " = " << path << "\n";
}

}  // namespace phinet
