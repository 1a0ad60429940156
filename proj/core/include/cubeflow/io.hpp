#pragma once

#include "cubeflow/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cubeflow::io {

// Binary grid file: "CFGRID01", uint32 rank, uint32 dims[rank] (slowest axis first), then
// prod(dims) little-endian float64 values in row-major order.
struct GridFile {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

void write_grid(const std::string& path, const GridFile& g);
GridFile read_grid(const std::string& path);

json read_json(const std::string& path);
void write_json(const std::string& path, const json& j);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const json& config);

// Header stamped on every artifact: library version, config hash, seed.
json provenance_header(const json& config, std::uint64_t seed);

}  // namespace cubeflow::io
