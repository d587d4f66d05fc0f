#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dipa/checkpoint.hpp"
#include "dipa/data/dataset.hpp"
#include "dipa/model/push.hpp"

namespace dipa::oracle {

struct Verdict {
  int prototype = 0;
  bool non_object = false;
  friend bool operator==(const Verdict&, const Verdict&) = default;
};
using Verdicts = std::vector<Verdict>;

std::vector<int> rejected_ids(const Verdicts& v);

// Anything that can judge the active prototypes of a pushed checkpoint: the
// simulated user below, or verdicts relayed from the HTTP service.
class VerdictProvider {
 public:
  virtual ~VerdictProvider() = default;
  // Throws ConsultUnavailable when no answer can be given right now.
  virtual Verdicts consult(const Checkpoint& ckpt) = 0;
};

struct OverlapStat {
  int prototype = 0;
  std::string source_image;
  int cell_row = 0;
  int cell_col = 0;
  double object_fraction = 0.0;  // object pixels in patch / patch pixels
};

double object_fraction(const data::PixelMask& mask, int cell_row, int cell_col, int grid_height,
                       int grid_width);

struct Histogram {
  std::vector<double> edges;  // bins+1 edges over [0,1], last bin closed
  std::vector<int> counts;
  int at_least_75 = 0;        // prototypes with object_fraction >= 0.75
  int total() const;
};

Histogram histogram(const std::vector<OverlapStat>& stats, int bins);

// Simulated user backed by pixel-wise ground truth of the training images.
class MaskOracle : public VerdictProvider {
 public:
  explicit MaskOracle(const data::Dataset& dataset);

  const data::PixelMask& mask_for(const std::string& image_id) const;

  OverlapStat overlap(const model::PushRecord& rec, int grid_height, int grid_width) const;
  // True iff the prototype's source patch holds no object pixel.
  bool is_non_object(const model::PushRecord& rec, int grid_height, int grid_width) const;

  // Stats for every active prototype of the checkpoint.
  std::vector<OverlapStat> overlaps(const Checkpoint& ckpt) const;
  Histogram overlap_histogram(const Checkpoint& ckpt, int bins = 10) const;
  int non_object_count(const Checkpoint& ckpt) const;

  Verdicts consult(const Checkpoint& ckpt) override;

 private:
  std::unordered_map<std::string, const data::PixelMask*> masks_;
};

}  // namespace dipa::oracle
