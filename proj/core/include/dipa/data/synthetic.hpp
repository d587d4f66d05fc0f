#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "dipa/data/dataset.hpp"

namespace dipa::data {

// Confounded toy dataset: a class-specific shape drawn over a background that
// is class-specific with probability confound_strength and shared otherwise.
struct SyntheticSpec {
  int classes = 6;
  int train_per_class = 120;
  int test_per_class = 40;
  int image_size = 64;
  int min_object = 22;  // object bounding box side, pixels
  int max_object = 30;
  double confound_strength = 0.9;

  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

std::string shape_name(int class_id);

// Deterministic in (spec, seed). Pixels are quantized to 8 bits so that a
// written-then-ingested copy is identical.
Dataset generate(const SyntheticSpec& spec, std::uint64_t seed);

// Writes root/{train,test}/{class}/img_NNNN.png, root/masks/... and
// root/dataset.json. Returns the manifest.
nlohmann::json write_dataset(const Dataset& ds, const std::filesystem::path& root,
                             const nlohmann::json& provenance);

// Loads the folder layout above, resizing images (bilinear) and masks
// (nearest) to height x width. Class folders are mapped to label ids in
// lexicographic order.
Dataset ingest(const std::filesystem::path& root, int height, int width);

// The manifest write_dataset would produce, without touching the disk.
nlohmann::json dataset_manifest(const Dataset& ds, const nlohmann::json& provenance);
// Exact text of dataset.json for a manifest.
std::string manifest_text(const nlohmann::json& manifest);

// Git-style blob SHA-1 of a byte string.
std::string git_blob_hash(const std::string& content);

}  // namespace dipa::data
