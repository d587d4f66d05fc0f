#include "dipa/model/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dipa/error.hpp"

namespace dipa::model {

PixelRect patch_region(int row, int col, int grid_height, int grid_width, int image_height,
                       int image_width) {
  if (row < 0 || row >= grid_height || col < 0 || col >= grid_width)
    throw InvalidArgument("patch_region: cell (" + std::to_string(row) + "," + std::to_string(col) +
                          ") outside grid " + std::to_string(grid_height) + "x" +
                          std::to_string(grid_width));
  auto lo = [](int i, int n, int g) { return static_cast<int>((static_cast<std::int64_t>(i) * n) / g); };
  auto hi = [](int i, int n, int g) {
    return static_cast<int>((static_cast<std::int64_t>(i + 1) * n + g - 1) / g);
  };
  return {lo(row, image_height, grid_height), hi(row, image_height, grid_height),
          lo(col, image_width, grid_width), hi(col, image_width, grid_width)};
}

std::vector<float> upsample_heatmap(std::span<const float> map, int grid_height, int grid_width,
                                    int height, int width) {
  if (static_cast<std::int64_t>(map.size()) != static_cast<std::int64_t>(grid_height) * grid_width)
    throw ShapeError("upsample_heatmap: map size does not match grid");
  std::vector<float> out(static_cast<std::size_t>(height) * static_cast<std::size_t>(width));
  const double sy = static_cast<double>(grid_height) / height;
  const double sx = static_cast<double>(grid_width) / width;
  auto at = [&](int i, int j) { return map[static_cast<std::size_t>(i * grid_width + j)]; };
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, grid_height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, grid_height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, grid_width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, grid_width - 1);
      const double tx = fx - x0;
      const double top = (1 - tx) * at(y0, x0) + tx * at(y0, x1);
      const double bottom = (1 - tx) * at(y1, x0) + tx * at(y1, x1);
      out[static_cast<std::size_t>(y) * width + x] = static_cast<float>((1 - ty) * top + ty * bottom);
    }
  }
  return out;
}

ThresholdRegion threshold_region(std::span<const float> heatmap, int height, int width,
                                 float fraction) {
  ThresholdRegion r;
  if (heatmap.empty()) return r;
  const float cut = fraction * *std::max_element(heatmap.begin(), heatmap.end());
  r.bbox = {height, 0, width, 0};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (heatmap[static_cast<std::size_t>(y) * width + x] < cut) continue;
      ++r.pixels;
      r.bbox.row0 = std::min(r.bbox.row0, y);
      r.bbox.row1 = std::max(r.bbox.row1, y + 1);
      r.bbox.col0 = std::min(r.bbox.col0, x);
      r.bbox.col1 = std::max(r.bbox.col1, x + 1);
    }
  if (r.pixels == 0) r.bbox = {};
  return r;
}

}  // namespace dipa::model
