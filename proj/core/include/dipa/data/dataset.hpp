#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dipa/autodiff/tensor.hpp"

namespace dipa::data {

enum class Split { Train, Test };

// Pixel-wise ground truth; true marks an object pixel.
struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;
  std::string image_id;

  bool at(int row, int col) const {
    return bits[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) +
                static_cast<std::size_t>(col)] != 0;
  }
  std::int64_t object_pixels() const;
};

struct ImageSample {
  std::string id;
  int label = 0;
  Split split = Split::Train;
  ad::Tensor pixels;  // (3,H,W) in [0,1]
  PixelMask mask;

  int height() const { return static_cast<int>(pixels.dim(1)); }
  int width() const { return static_cast<int>(pixels.dim(2)); }
};

struct Dataset {
  std::vector<std::string> class_names;  // index = label id
  std::vector<ImageSample> train;
  std::vector<ImageSample> test;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  const ImageSample* find(const std::string& id) const;
};

}  // namespace dipa::data
