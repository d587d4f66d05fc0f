#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace dipa::model {

// Half-open pixel rectangle [row0,row1) x [col0,col1).
struct PixelRect {
  int row0 = 0, row1 = 0, col0 = 0, col1 = 0;
  int area() const { return (row1 - row0) * (col1 - col0); }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// Image patch covered by latent cell (i,j): rows [floor(iH/Hg), ceil((i+1)H/Hg)),
// columns likewise.
PixelRect patch_region(int row, int col, int grid_height, int grid_width, int image_height,
                       int image_width);

// Bilinear upsampling with half-pixel centres and edge clamping.
// map is (grid_height, grid_width) row-major; result is (height, width).
std::vector<float> upsample_heatmap(std::span<const float> map, int grid_height, int grid_width,
                                    int height, int width);

// Bounding box and pixel count of where a heatmap reaches fraction * max.
struct ThresholdRegion {
  PixelRect bbox;
  std::int64_t pixels = 0;
};
ThresholdRegion threshold_region(std::span<const float> heatmap, int height, int width,
                                 float fraction = 0.75f);

}  // namespace dipa::model
