#include "raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace cubeflow::cli {

namespace {

std::ofstream open_raster(const std::string& path, const char* magic, int width, int height, const std::string& comment) {
  if (width < 1 || height < 1) throw std::invalid_argument("raster: empty image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("raster: cannot open " + path);
  os << magic << "\n# " << comment << "\n" << width << " " << height << "\n255\n";
  return os;
}

}  // namespace

void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray,
               const std::string& comment) {
  if (gray.size() != static_cast<size_t>(width) * height) throw std::invalid_argument("write_pgm: size mismatch");
  auto os = open_raster(path, "P5", width, height, comment);
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void write_ppm(const std::string& path, int width, int height, const std::vector<std::array<std::uint8_t, 3>>& rgb,
               const std::string& comment) {
  if (rgb.size() != static_cast<size_t>(width) * height) throw std::invalid_argument("write_ppm: size mismatch");
  auto os = open_raster(path, "P6", width, height, comment);
  for (auto& p : rgb) os.write(reinterpret_cast<const char*>(p.data()), 3);
}

std::array<std::uint8_t, 3> depth_colour(int depth, int max_depth) {
  if (depth <= 0) return {245, 245, 245};
  // hue walks from blue to red with depth
  const double t = max_depth > 1 ? double(depth - 1) / (max_depth - 1) : 1.0;
  const double h = (1.0 - t) * 240.0;
  const double x = 1.0 - std::abs(std::fmod(h / 60.0, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h / 60.0) % 6) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(40 + 200 * v)); };
  return {q(r), q(g), q(b)};
}

}  // namespace cubeflow::cli
