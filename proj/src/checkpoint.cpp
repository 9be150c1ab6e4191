#include "phinet/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <vector>

#include "phinet/errors.hpp"

namespace phinet {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "float32" : "float64";
}

struct ArrayEntry {
  std::string name;
  std::string dtype;
  Eigen::Index rows = 0, cols = 0;
  std::uint64_t offset = 0;
  bool trainable = true, decay = true;
};

template <typename Scalar>
struct Writer {
  std::vector<ArrayEntry> entries;
  std::string payload;

  void add(const std::string& name, const Mat<Scalar>& m, bool trainable = true, bool decay = true) {
    entries.push_back({name, dtype_name<Scalar>(), m.rows(), m.cols(), payload.size(), trainable, decay});
    payload.append(reinterpret_cast<const char*>(m.data()), sizeof(Scalar) * static_cast<std::size_t>(m.size()));
  }
};

std::map<std::string, std::string> read_header(std::istream& in, std::vector<ArrayEntry>& arrays,
                                               const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path.string() + "': empty checkpoint");
  const std::string magic = "PHINET-CHECKPOINT ";
  if (line.rfind(magic, 0) != 0) throw IoError("'" + path.string() + "' is not a checkpoint");
  const int version = std::stoi(line.substr(magic.size()));
  if (version != kCheckpointVersion)
    throw IoError("'" + path.string() + "': checkpoint version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line == "end") return kv;
    if (line.rfind("array ", 0) == 0) {
      std::istringstream ss(line.substr(6));
      ArrayEntry e;
      int t = 0, d = 0;
      ss >> e.name >> e.dtype >> e.rows >> e.cols >> e.offset >> t >> d;
      if (!ss) throw IoError("'" + path.string() + "': malformed array line");
      e.trainable = t != 0;
      e.decay = d != 0;
      arrays.push_back(e);
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError("'" + path.string() + "': malformed header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  throw IoError("'" + path.string() + "': truncated header");
}

const std::string& field(const std::map<std::string, std::string>& kv, const std::string& key,
                         const std::filesystem::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError("'" + path.string() + "': header lacks '" + key + "'");
  return it->second;
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const TrainState<Scalar>& state, const std::filesystem::path& path) {
  Writer<Scalar> w;
  for (const auto& [name, p] : state.xi) w.add("xi/" + name, p.value, p.trainable, p.decay);
  for (const auto& [name, m] : state.adam.m) w.add("adam.m/" + name, m);
  for (const auto& [name, v] : state.adam.v) w.add("adam.v/" + name, v);
  for (const auto& [name, p] : state.ema.xi_long) w.add("ema/" + name, p.value, p.trainable, p.decay);
  const std::string config = to_config_text(state.config);

  std::ostringstream rng;
  rng << state.rng;

  std::ostringstream head;
  head.precision(17);
  head << "PHINET-CHECKPOINT " << kCheckpointVersion << "\n";
  head << "dtype = " << dtype_name<Scalar>() << "\n";
  head << "epoch = " << state.epoch << "\n";
  head << "step = " << state.step << "\n";
  head << "adam_step = " << state.adam.step << "\n";
  head << "ema_gamma = " << state.ema.gamma << "\n";
  head << "ema_updates = " << state.ema.update_count << "\n";
  head << "rng = " << rng.str() << "\n";
  head << "config_bytes = " << config.size() << "\n";
  for (const auto& e : w.entries)
    head << "array " << e.name << " " << e.dtype << " " << e.rows << " " << e.cols << " " << e.offset << " "
         << int(e.trainable) << " " << int(e.decay) << "\n";
  head << "end\n";

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out << head.str() << config;
    out.write(w.payload.data(), static_cast<std::streamsize>(w.payload.size()));
    if (!out) throw IoError("failed writing '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
TrainState<Scalar> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<ArrayEntry> arrays;
  const auto kv = read_header(in, arrays, path);
  if (field(kv, "dtype", path) != dtype_name<Scalar>())
    throw IoError("'" + path.string() + "': stored as " + field(kv, "dtype", path) + ", requested " +
                  dtype_name<Scalar>());

  TrainState<Scalar> s;
  s.epoch = std::stoi(field(kv, "epoch", path));
  s.step = std::stoll(field(kv, "step", path));
  s.adam.step = std::stoll(field(kv, "adam_step", path));
  s.ema.gamma = std::stod(field(kv, "ema_gamma", path));
  s.ema.update_count = std::stoll(field(kv, "ema_updates", path));
  std::istringstream(field(kv, "rng", path)) >> s.rng;

  std::string config(std::stoull(field(kv, "config_bytes", path)), '\0');
  in.read(config.data(), static_cast<std::streamsize>(config.size()));
  if (!in) throw IoError("'" + path.string() + "': truncated config block");
  s.config = parse_config_text(config, RunConfig{});

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& e : arrays) {
    if (e.dtype != dtype_name<Scalar>()) throw IoError("'" + path.string() + "': mixed element types");
    const std::size_t bytes = sizeof(Scalar) * static_cast<std::size_t>(e.rows * e.cols);
    if (e.offset + bytes > payload.size()) throw IoError("'" + path.string() + "': truncated payload");
    Mat<Scalar> m(e.rows, e.cols);
    std::memcpy(m.data(), payload.data() + e.offset, bytes);
    const auto slash = e.name.find('/');
    const std::string role = e.name.substr(0, slash), name = e.name.substr(slash + 1);
    if (role == "xi")
      s.xi.add(name, std::move(m), e.trainable, e.decay);
    else if (role == "adam.m")
      s.adam.m.emplace(name, std::move(m));
    else if (role == "adam.v")
      s.adam.v.emplace(name, std::move(m));
    else if (role == "ema")
      s.ema.xi_long.add(name, std::move(m), e.trainable, e.decay);
    else
      throw IoError("'" + path.string() + "': unknown array role '" + role + "'");
  }
  return s;
}

std::string checkpoint_dtype(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<ArrayEntry> arrays;
  return field(read_header(in, arrays, path), "dtype", path);
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
  return run_dir / "checkpoints" / name;
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) return {};
  static const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
  std::filesystem::path best;
  int best_epoch = -1;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const int e = std::stoi(m[1]);
    if (e > best_epoch) best_epoch = e, best = entry.path();
  }
  return best;
}

template void save_checkpoint<float>(const TrainState<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const TrainState<double>&, const std::filesystem::path&);
template TrainState<float> load_checkpoint<float>(const std::filesystem::path&);
template TrainState<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace phinet
