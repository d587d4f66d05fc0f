#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dipa::data {

// 8-bit interleaved image.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> pixels;
};

std::vector<std::uint8_t> encode_png(const Image8& img);
void write_png(const std::filesystem::path& path, const Image8& img);

// Decodes any PNG into gray (channels=1) or RGB (channels=3); alpha is dropped
// and palettes/16-bit depths are converted.
Image8 read_png(const std::filesystem::path& path, int channels);

}  // namespace dipa::data
