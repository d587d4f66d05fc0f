#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dipa/autodiff/ops.hpp"
#include "dipa/model/protopnet.hpp"

namespace dipa::loss {

struct AntitypeProvenance {
  int round = 0;
  int prototype = 0;
  friend bool operator==(const AntitypeProvenance&, const AntitypeProvenance&) = default;
};

// Append-only set of rejected latent vectors.
class AntitypeSet {
 public:
  AntitypeSet() = default;
  explicit AntitypeSet(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(provenance_.size()); }
  bool empty() const { return provenance_.empty(); }
  const float* vector(int s) const { return vectors_.data() + static_cast<std::size_t>(s) * dim_; }
  const AntitypeProvenance& provenance(int s) const { return provenance_[static_cast<std::size_t>(s)]; }
  const std::vector<float>& raw() const { return vectors_; }

  // Set union semantics: an exact copy of a stored vector is not added again.
  // Returns whether the vector was inserted.
  bool insert(std::span<const float> v, AntitypeProvenance from);
  bool contains(std::span<const float> v) const;

  ad::Tensor as_tensor() const;  // (S,D)

  friend bool operator==(const AntitypeSet&, const AntitypeSet&) = default;

 private:
  int dim_ = 0;
  std::vector<float> vectors_;
  std::vector<AntitypeProvenance> provenance_;
};

enum class RejectReduction {
  PerAntitypeMax,   // sum over antitypes of the max over prototypes
  PerPrototypeMax,  // sum over prototypes of the max over antitypes
  GlobalMax,        // single max over all pairs
};

struct LossWeights {
  float clst = 0.8f;
  float sep = 0.08f;
  float l1 = 0.0f;  // enabled (1e-4) for the last-layer phase
  float reject = 0.5f;
  float con = 1.0f;
  float epsilon = 1e-4f;
  RejectReduction reduction = RejectReduction::PerAntitypeMax;

  // Throws InvalidArgument when any weight is negative or epsilon <= 0.
  void validate() const;
};

// Repulsion from antitypes over active prototypes; 0 for an empty set.
ad::Value reject_term(const model::PrototypeSet& protos, const AntitypeSet& antitypes, float epsilon,
                      RejectReduction reduction = RejectReduction::PerAntitypeMax);

struct ConTerm {
  int count = 0;          // hypercube violations, reported only
  ad::Value surrogate;    // squared hinge, carries the gradient
};
ConTerm con_term(const model::PrototypeSet& protos);

// min_distance: (B,N) smallest squared distance of each prototype over cells.
ad::Value clst_term(const ad::Value& min_distance, std::span<const int> labels,
                    const model::PrototypeSet& protos);
ad::Value sep_term(const ad::Value& min_distance, std::span<const int> labels,
                   const model::PrototypeSet& protos);
ad::Value l1_term(const model::HeadWeights& head, const model::PrototypeSet& protos);

struct LossBreakdown {
  ad::Value total;
  float crsent = 0, clst = 0, sep = 0, l1 = 0, reject = 0, con_surrogate = 0;
  int con_count = 0;
  float total_value() const { return total.item(); }
};

LossBreakdown total_loss(const model::ForwardPass& fp, std::span<const int> labels,
                         const model::ProtoPNet& net, const AntitypeSet& antitypes,
                         const LossWeights& w);

}  // namespace dipa::loss
