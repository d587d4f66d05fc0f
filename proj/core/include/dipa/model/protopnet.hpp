#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dipa/autodiff/ops.hpp"
#include "dipa/data/dataset.hpp"
#include "dipa/model/config.hpp"

namespace dipa::model {

// Encoder output for one image: one latent_dim vector per grid cell,
// stored as (Hg*Wg, D) in row-major cell order.
struct LatentGrid {
  int grid_height = 0;
  int grid_width = 0;
  int dim = 0;
  ad::Tensor cells;

  const float* cell(int i, int j) const { return cells.data() + (i * grid_width + j) * dim; }
  const float* cell(int flat) const { return cells.data() + flat * dim; }
};

struct PrototypeSet {
  ad::Value vectors;  // (N,D) trainable
  std::vector<int> class_of;
  std::vector<std::uint8_t> active;
  int num_classes = 0;

  int size() const { return static_cast<int>(class_of.size()); }
  int dim() const { return static_cast<int>(vectors.shape().at(1)); }
  const float* vector(int n) const { return vectors.data().data() + n * dim(); }
  std::vector<int> of_class(int k) const;
  std::vector<std::int64_t> active_ids() const;
  int active_count() const;
  // Throws MaskExhaustedClass if some class has no active prototype.
  void check_every_class_active() const;
  ad::Tensor mask_tensor() const;  // (N) of 0/1
};

struct HeadWeights {
  ad::Value w;  // (N,K), no bias
};

// (N,Hg,Wg) squared distances.
struct DistanceMap {
  int grid_height = 0;
  int grid_width = 0;
  ad::Tensor d;
};

struct EvidenceMap {
  int grid_height = 0;
  int grid_width = 0;
  ad::Tensor scores;                          // (N,Hg,Wg)
  std::vector<std::pair<int, int>> argmax_cell;  // per prototype
  float max_score(int n) const;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  // images: (B,C,H,W) -> latent rows (B*Hg*Wg, D), every component in [0,1].
  ad::Value forward(const ad::Value& images) const;
  LatentGrid encode(const data::ImageSample& image) const;
  std::vector<LatentGrid> encode_all(std::span<const data::ImageSample> images) const;

  // Weight/bias pairs in layer order.
  std::vector<ad::Value>& parameters() { return params_; }
  const std::vector<ad::Value>& parameters() const { return params_; }

 private:
  EncoderConfig cfg_;
  std::vector<ad::Value> params_;
};

// Differentiable pieces of one forward pass over a batch of latent rows.
struct ForwardPass {
  ad::Value distances;     // (B, cells, N)
  ad::Value min_distance;  // (B, N)
  ad::Value max_evidence;  // (B, N)
  ad::Value logits;        // (B, K)
};

ad::Value similarity(const ad::Value& sq_distance, float epsilon);
float similarity(float sq_distance, float epsilon);

class ProtoPNet {
 public:
  ProtoPNet() = default;
  ProtoPNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  PrototypeSet& prototypes() { return protos_; }
  const PrototypeSet& prototypes() const { return protos_; }
  HeadWeights& head() { return head_; }
  const HeadWeights& head() const { return head_; }

  ForwardPass forward_rows(const ad::Value& latent_rows, std::int64_t batch) const;
  ForwardPass forward(const ad::Value& images) const;

  // Predicted label for each latent grid; respects the active mask.
  std::vector<int> predict(std::span<const LatentGrid> latents) const;

  // Deep copy (fresh graph leaves, same numbers).
  ProtoPNet clone() const;

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  PrototypeSet protos_;
  HeadWeights head_;
};

ad::Tensor stack_images(std::span<const data::ImageSample* const> batch);
ad::Tensor stack_latents(std::span<const LatentGrid* const> batch);

DistanceMap prototype_distances(const LatentGrid& grid, const PrototypeSet& protos);
EvidenceMap evidence(const DistanceMap& d, float epsilon);
std::vector<float> classify(const EvidenceMap& ev, const HeadWeights& head,
                            const PrototypeSet& protos);

// Rejected prototypes become inactive. Throws MaskExhaustedClass (state left
// unchanged) when a class would be left without active prototypes.
void mask_prototypes(PrototypeSet& protos, std::span<const int> rejected);

}  // namespace dipa::model
