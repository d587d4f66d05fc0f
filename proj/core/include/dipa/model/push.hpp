#pragma once

#include <span>
#include <string>
#include <vector>

#include "dipa/data/dataset.hpp"
#include "dipa/model/protopnet.hpp"

namespace dipa::model {

// Where a prototype was projected to. image_index < 0 means never pushed.
struct PushRecord {
  int prototype = 0;
  int image_index = -1;  // index into the training split
  std::string image_id;
  int cell_row = 0;
  int cell_col = 0;
  float distance_moved = 0.0f;  // euclidean
  bool pushed() const { return image_index >= 0; }
};

struct PushReport {
  std::vector<PushRecord> records;  // indexed by prototype id
};

// Projects every active prototype onto the nearest latent cell among training
// images of its own class. Ties go to the lowest (image id, cell index).
// Inactive prototypes keep their vector and their record from `previous`.
PushReport push(PrototypeSet& protos, std::span<const LatentGrid> latents,
                std::span<const data::ImageSample> images, const PushReport* previous = nullptr);

PushReport push(ProtoPNet& model, const data::Dataset& dataset, const PushReport* previous = nullptr);

}  // namespace dipa::model
