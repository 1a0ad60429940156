#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cubeflow::cli {

// Binary PGM (P5) / PPM (P6), row 0 at the top. `comment` goes in a single header comment line.
void write_pgm(const std::string& path, int width, int height, const std::vector<std::uint8_t>& gray,
               const std::string& comment);
void write_ppm(const std::string& path, int width, int height, const std::vector<std::array<std::uint8_t, 3>>& rgb,
               const std::string& comment);

// Colour for a carrier depth (0 = outside every cube) up to max_depth.
std::array<std::uint8_t, 3> depth_colour(int depth, int max_depth);

}  // namespace cubeflow::cli
