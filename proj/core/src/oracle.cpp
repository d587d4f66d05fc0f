#include "dipa/oracle.hpp"

#include <algorithm>
#include <numeric>

#include "dipa/error.hpp"
#include "dipa/model/geometry.hpp"

namespace dipa::oracle {

std::vector<int> rejected_ids(const Verdicts& v) {
  std::vector<int> ids;
  for (const auto& x : v)
    if (x.non_object) ids.push_back(x.prototype);
  return ids;
}

double object_fraction(const data::PixelMask& mask, int cell_row, int cell_col, int grid_height,
                       int grid_width) {
  const auto r = model::patch_region(cell_row, cell_col, grid_height, grid_width, mask.height, mask.width);
  std::int64_t hits = 0;
  for (int y = r.row0; y < r.row1; ++y)
    for (int x = r.col0; x < r.col1; ++x) hits += mask.at(y, x) ? 1 : 0;
  return static_cast<double>(hits) / r.area();
}

int Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), 0); }

Histogram histogram(const std::vector<OverlapStat>& stats, int bins) {
  if (bins < 1) throw InvalidArgument("histogram: need at least one bin");
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (int b = 0; b <= bins; ++b) h.edges.push_back(static_cast<double>(b) / bins);
  for (const auto& s : stats) {
    const int b = std::min(bins - 1, static_cast<int>(s.object_fraction * bins));
    ++h.counts[static_cast<std::size_t>(b)];
    if (s.object_fraction >= 0.75) ++h.at_least_75;
  }
  return h;
}

MaskOracle::MaskOracle(const data::Dataset& dataset) {
  for (const auto* split : {&dataset.train, &dataset.test})
    for (const auto& s : *split) masks_[s.id] = &s.mask;
}

const data::PixelMask& MaskOracle::mask_for(const std::string& image_id) const {
  const auto it = masks_.find(image_id);
  if (it == masks_.end()) throw NotFound("oracle: no mask for image " + image_id);
  return *it->second;
}

OverlapStat MaskOracle::overlap(const model::PushRecord& rec, int grid_height, int grid_width) const {
  if (!rec.pushed())
    throw InvalidArgument("oracle: prototype " + std::to_string(rec.prototype) + " was never pushed");
  OverlapStat s{rec.prototype, rec.image_id, rec.cell_row, rec.cell_col, 0.0};
  s.object_fraction = object_fraction(mask_for(rec.image_id), rec.cell_row, rec.cell_col, grid_height, grid_width);
  return s;
}

bool MaskOracle::is_non_object(const model::PushRecord& rec, int grid_height, int grid_width) const {
  return overlap(rec, grid_height, grid_width).object_fraction == 0.0;
}

std::vector<OverlapStat> MaskOracle::overlaps(const Checkpoint& ckpt) const {
  const auto& enc = ckpt.net.config().encoder;
  const auto& protos = ckpt.net.prototypes();
  std::vector<OverlapStat> out;
  for (auto n : protos.active_ids()) {
    if (static_cast<std::size_t>(n) >= ckpt.push.records.size())
      throw InvalidArgument("oracle: checkpoint has no push record for prototype " + std::to_string(n));
    out.push_back(overlap(ckpt.push.records[static_cast<std::size_t>(n)], enc.grid_height, enc.grid_width));
  }
  return out;
}

Histogram MaskOracle::overlap_histogram(const Checkpoint& ckpt, int bins) const {
  return histogram(overlaps(ckpt), bins);
}

int MaskOracle::non_object_count(const Checkpoint& ckpt) const {
  const auto stats = overlaps(ckpt);
  return static_cast<int>(std::count_if(stats.begin(), stats.end(),
                                        [](const OverlapStat& s) { return s.object_fraction == 0.0; }));
}

Verdicts MaskOracle::consult(const Checkpoint& ckpt) {
  Verdicts v;
  for (const auto& s : overlaps(ckpt)) v.push_back({s.prototype, s.object_fraction == 0.0});
  return v;
}

}  // namespace dipa::oracle
