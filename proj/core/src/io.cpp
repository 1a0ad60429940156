#include "cubeflow/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cubeflow::io {

namespace {
constexpr char kMagic[8] = {'C', 'F', 'G', 'R', 'I', 'D', '0', '1'};

static_assert(std::endian::native == std::endian::little, "grid files assume a little-endian host");

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::ifstream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("grid file: truncated");
  return v;
}
}  // namespace

void write_grid(const std::string& path, const GridFile& g) {
  size_t total = 1;
  for (auto d : g.dims) total *= d;
  if (total != g.values.size()) throw std::invalid_argument("grid file: dims do not match value count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, 8);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(g.dims.size()));
  for (auto d : g.dims) put<std::uint32_t>(os, d);
  os.write(reinterpret_cast<const char*>(g.values.data()), static_cast<std::streamsize>(g.values.size() * sizeof(double)));
}

GridFile read_grid(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("grid file: bad magic in " + path);
  GridFile g;
  const auto rank = get<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw std::runtime_error("grid file: bad rank");
  size_t total = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    g.dims.push_back(get<std::uint32_t>(is));
    total *= g.dims.back();
  }
  g.values.resize(total);
  is.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(total * sizeof(double)));
  if (!is) throw std::runtime_error("grid file: truncated values");
  return g;
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  return json::parse(is);
}

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << "\n";
}

std::string config_hash(const json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json provenance_header(const json& config, std::uint64_t seed) {
  return json{{"library", "cubeflow"}, {"version", CUBEFLOW_VERSION}, {"config_hash", config_hash(config)}, {"seed", seed}};
}

}  // namespace cubeflow::io
