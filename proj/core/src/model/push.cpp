#include "dipa/model/push.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dipa/error.hpp"

namespace dipa::model {

PushReport push(PrototypeSet& protos, std::span<const LatentGrid> latents,
                std::span<const data::ImageSample> images, const PushReport* previous) {
  if (latents.size() != images.size())
    throw InvalidArgument("push: latent and image counts differ");
  const int N = protos.size(), D = protos.dim();
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return images[a].id < images[b].id; });

  PushReport report;
  report.records.resize(static_cast<std::size_t>(N));
  float* vectors = protos.vectors.mutable_data().data();
  for (int n = 0; n < N; ++n) {
    PushRecord& rec = report.records[static_cast<std::size_t>(n)];
    rec.prototype = n;
    if (!protos.active[static_cast<std::size_t>(n)]) {
      if (previous && static_cast<int>(previous->records.size()) > n)
        rec = previous->records[static_cast<std::size_t>(n)];
      continue;
    }
    const int k = protos.class_of[static_cast<std::size_t>(n)];
    const float* p = vectors + static_cast<std::ptrdiff_t>(n) * D;
    float best = std::numeric_limits<float>::infinity();
    std::size_t best_img = 0;
    int best_cell = -1;
    for (std::size_t idx : order) {
      if (images[idx].label != k) continue;
      const LatentGrid& g = latents[idx];
      if (g.dim != D) throw ShapeError("push: latent dim mismatch");
      const int cells = g.grid_height * g.grid_width;
      for (int c = 0; c < cells; ++c) {
        const float* z = g.cell(c);
        float d = 0.0f;
        for (int i = 0; i < D; ++i) {
          const float diff = z[i] - p[i];
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          best_img = idx;
          best_cell = c;
        }
      }
    }
    if (best_cell < 0)
      throw InvalidArgument("push: class " + std::to_string(k) + " has no training images");
    const LatentGrid& g = latents[best_img];
    rec.image_index = static_cast<int>(best_img);
    rec.image_id = images[best_img].id;
    rec.cell_row = best_cell / g.grid_width;
    rec.cell_col = best_cell % g.grid_width;
    rec.distance_moved = std::sqrt(best);
    std::copy_n(g.cell(best_cell), D, vectors + static_cast<std::ptrdiff_t>(n) * D);
  }
  return report;
}

PushReport push(ProtoPNet& model, const data::Dataset& dataset, const PushReport* previous) {
  const auto latents = model.encoder().encode_all(dataset.train);
  return push(model.prototypes(), latents, dataset.train, previous);
}

}  // namespace dipa::model
