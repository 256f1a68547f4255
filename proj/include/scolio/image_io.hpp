#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace scolio {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// 8-bit grayscale PNG. Throws std::runtime_error naming the path on failure.
void write_png(const std::filesystem::path& path, const GrayImage& image);
/// Reads any PNG and converts it to 8-bit grayscale.
GrayImage read_png(const std::filesystem::path& path);

}  // namespace scolio
