#pragma once

#include <vector>

namespace dipa::model {

struct ConvBlock {
  int channels = 0;
  int stride = 1;
  friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

// Image -> 3x3 conv blocks (ReLU) -> 1x1 projection to latent_dim ->
// adaptive average pooling to the latent grid -> sigmoid.
struct EncoderConfig {
  int input_height = 64;
  int input_width = 64;
  int input_channels = 3;
  std::vector<ConvBlock> conv_blocks{{16, 2}, {32, 2}, {64, 2}};
  int grid_height = 7;
  int grid_width = 7;
  int latent_dim = 32;

  int cells() const { return grid_height * grid_width; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  int num_classes = 6;
  int per_class = 5;
  float epsilon = 1e-4f;

  int num_prototypes() const { return num_classes * per_class; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace dipa::model
