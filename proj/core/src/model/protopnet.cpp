#include "dipa/model/protopnet.hpp"

#include <algorithm>
#include <cmath>

#include "dipa/error.hpp"
#include "dipa/rng.hpp"

namespace dipa::model {

using ad::Shape;
using ad::Tensor;
using ad::Value;

std::vector<int> PrototypeSet::of_class(int k) const {
  std::vector<int> ids;
  for (int n = 0; n < size(); ++n)
    if (class_of[static_cast<std::size_t>(n)] == k) ids.push_back(n);
  return ids;
}

std::vector<std::int64_t> PrototypeSet::active_ids() const {
  std::vector<std::int64_t> ids;
  for (int n = 0; n < size(); ++n)
    if (active[static_cast<std::size_t>(n)]) ids.push_back(n);
  return ids;
}

int PrototypeSet::active_count() const {
  return static_cast<int>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

void PrototypeSet::check_every_class_active() const {
  for (int k = 0; k < num_classes; ++k) {
    bool any = false;
    for (int n : of_class(k)) any = any || active[static_cast<std::size_t>(n)];
    if (!any) throw MaskExhaustedClass(k);
  }
}

Tensor PrototypeSet::mask_tensor() const {
  Tensor m(Shape{size()});
  for (int n = 0; n < size(); ++n) m[n] = active[static_cast<std::size_t>(n)] ? 1.0f : 0.0f;
  return m;
}

float EvidenceMap::max_score(int n) const {
  const auto [i, j] = argmax_cell[static_cast<std::size_t>(n)];
  return scores[(static_cast<std::int64_t>(n) * grid_height + i) * grid_width + j];
}

namespace {

Value he_normal(Rng& rng, Shape shape, double fan_in, double gain) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(gain / fan_in);
  for (float& v : t.values()) v = static_cast<float>(sd * rng.normal());
  return Value::parameter(std::move(t));
}

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.conv_blocks.empty()) throw InvalidArgument("encoder: need at least one conv block");
  Rng rng(Rng::derive(seed, 0xE0C0DE));
  int in = cfg.input_channels;
  for (const auto& blk : cfg.conv_blocks) {
    if (blk.channels <= 0 || (blk.stride != 1 && blk.stride != 2))
      throw InvalidArgument("encoder: invalid conv block");
    params_.push_back(he_normal(rng, Shape{blk.channels, in, 3, 3}, in * 9.0, 2.0));
    params_.push_back(Value::parameter(Tensor(Shape{blk.channels})));
    in = blk.channels;
  }
  params_.push_back(he_normal(rng, Shape{cfg.latent_dim, in, 1, 1}, in, 1.0));
  params_.push_back(Value::parameter(Tensor(Shape{cfg.latent_dim})));
}

Value Encoder::forward(const Value& images) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg_.input_channels || s[2] != cfg_.input_height ||
      s[3] != cfg_.input_width)
    throw ShapeError("encode: expected images of shape [B," + std::to_string(cfg_.input_channels) +
                     "," + std::to_string(cfg_.input_height) + "," +
                     std::to_string(cfg_.input_width) + "], got " + ad::to_string(s));
  Value x = images;
  const std::size_t blocks = cfg_.conv_blocks.size();
  for (std::size_t b = 0; b < blocks; ++b)
    x = ad::relu(ad::conv2d(x, params_[2 * b], params_[2 * b + 1],
                            {cfg_.conv_blocks[b].stride, 1}));
  x = ad::conv2d(x, params_[2 * blocks], params_[2 * blocks + 1], {1, 0});
  if (x.shape()[2] != cfg_.grid_height || x.shape()[3] != cfg_.grid_width)
    x = ad::adaptive_avg_pool2d(x, cfg_.grid_height, cfg_.grid_width);
  return ad::nchw_to_rows(ad::sigmoid(x));
}

LatentGrid Encoder::encode(const data::ImageSample& image) const {
  ad::NoGradGuard no_grad;
  const data::ImageSample* batch[] = {&image};
  Value rows = forward(Value::constant(stack_images(batch)));
  return LatentGrid{cfg_.grid_height, cfg_.grid_width, cfg_.latent_dim, rows.data()};
}

std::vector<LatentGrid> Encoder::encode_all(std::span<const data::ImageSample> images) const {
  ad::NoGradGuard no_grad;
  constexpr std::size_t chunk = 32;
  std::vector<LatentGrid> out;
  out.reserve(images.size());
  const auto cells = static_cast<std::int64_t>(cfg_.cells());
  const auto dim = static_cast<std::int64_t>(cfg_.latent_dim);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    std::vector<const data::ImageSample*> batch;
    for (std::size_t i = start; i < std::min(images.size(), start + chunk); ++i)
      batch.push_back(&images[i]);
    Value rows = forward(Value::constant(stack_images(batch)));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const float* src = rows.data().data() + static_cast<std::int64_t>(b) * cells * dim;
      out.push_back(LatentGrid{cfg_.grid_height, cfg_.grid_width, cfg_.latent_dim,
                               Tensor(Shape{cells, dim}, std::vector<float>(src, src + cells * dim))});
    }
  }
  return out;
}

Value similarity(const Value& sq_distance, float epsilon) {
  return ad::log(ad::div(ad::add(sq_distance, 1.0f), ad::add(sq_distance, epsilon)));
}

float similarity(float sq_distance, float epsilon) {
  return std::log((sq_distance + 1.0f) / (sq_distance + epsilon));
}

ProtoPNet::ProtoPNet(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), encoder_(cfg.encoder, seed) {
  if (cfg.num_classes < 1 || cfg.per_class < 1) throw InvalidArgument("model: empty prototype set");
  if (!(cfg.epsilon > 0.0f)) throw InvalidArgument("model: epsilon must be positive");
  const int N = cfg.num_prototypes(), D = cfg.encoder.latent_dim, K = cfg.num_classes;
  Rng rng(Rng::derive(seed, 0x9807));
  Tensor p(Shape{N, D});
  for (float& v : p.values()) v = static_cast<float>(rng.uniform());
  protos_.vectors = Value::parameter(std::move(p));
  protos_.num_classes = K;
  for (int n = 0; n < N; ++n) protos_.class_of.push_back(n / cfg.per_class);
  protos_.active.assign(static_cast<std::size_t>(N), 1);
  Tensor w(Shape{N, K});
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) w[n * K + k] = protos_.class_of[static_cast<std::size_t>(n)] == k ? 1.0f : -0.5f;
  head_.w = Value::parameter(std::move(w));
}

ForwardPass ProtoPNet::forward_rows(const Value& latent_rows, std::int64_t batch) const {
  const std::int64_t cells = cfg_.encoder.cells();
  const std::int64_t N = protos_.size();
  ForwardPass fp;
  fp.distances = ad::reshape(ad::pairwise_sq_dist(latent_rows, protos_.vectors), Shape{batch, cells, N});
  // similarity is strictly decreasing, so the max evidence sits at the min distance
  fp.min_distance = ad::min_along(fp.distances, 1).value;
  fp.max_evidence = similarity(fp.min_distance, cfg_.epsilon);
  Value masked = ad::mul(fp.max_evidence, Value::constant(protos_.mask_tensor()));
  fp.logits = ad::matmul(masked, head_.w);
  return fp;
}

ForwardPass ProtoPNet::forward(const Value& images) const {
  return forward_rows(encoder_.forward(images), images.shape()[0]);
}

std::vector<int> ProtoPNet::predict(std::span<const LatentGrid> latents) const {
  ad::NoGradGuard no_grad;
  std::vector<int> out;
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < latents.size(); start += chunk) {
    std::vector<const LatentGrid*> batch;
    for (std::size_t i = start; i < std::min(latents.size(), start + chunk); ++i)
      batch.push_back(&latents[i]);
    Value rows = Value::constant(stack_latents(batch));
    const Value logits = forward_rows(rows, static_cast<std::int64_t>(batch.size())).logits;
    const auto K = logits.shape()[1];
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const float* row = logits.data().data() + static_cast<std::int64_t>(b) * K;
      out.push_back(static_cast<int>(std::max_element(row, row + K) - row));
    }
  }
  return out;
}

ProtoPNet ProtoPNet::clone() const {
  ProtoPNet m;
  m.cfg_ = cfg_;
  m.encoder_ = encoder_;
  for (auto& p : m.encoder_.parameters()) p = Value::parameter(p.data());
  m.protos_ = protos_;
  m.protos_.vectors = Value::parameter(protos_.vectors.data());
  m.head_.w = Value::parameter(head_.w.data());
  return m;
}

Tensor stack_images(std::span<const data::ImageSample* const> batch) {
  if (batch.empty()) throw InvalidArgument("stack_images: empty batch");
  const Shape s = batch.front()->pixels.shape();
  const std::int64_t per = ad::numel(s);
  Shape out_shape{static_cast<std::int64_t>(batch.size())};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out(out_shape);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->pixels.shape() != s)
      throw ShapeError("encode: image " + batch[b]->id + " has shape " +
                       ad::to_string(batch[b]->pixels.shape()) + ", expected " + ad::to_string(s));
    std::copy_n(batch[b]->pixels.data(), per, out.data() + static_cast<std::int64_t>(b) * per);
  }
  return out;
}

Tensor stack_latents(std::span<const LatentGrid* const> batch) {
  if (batch.empty()) throw InvalidArgument("stack_latents: empty batch");
  const Shape s = batch.front()->cells.shape();
  const std::int64_t per = ad::numel(s);
  Tensor out(Shape{static_cast<std::int64_t>(batch.size()) * s[0], s[1]});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->cells.shape() != s) throw ShapeError("stack_latents: ragged latent grids");
    std::copy_n(batch[b]->cells.data(), per, out.data() + static_cast<std::int64_t>(b) * per);
  }
  return out;
}

DistanceMap prototype_distances(const LatentGrid& grid, const PrototypeSet& protos) {
  if (grid.dim != protos.dim())
    throw ShapeError("prototype_distances: latent dim " + std::to_string(grid.dim) +
                     " vs prototype dim " + std::to_string(protos.dim()));
  const int N = protos.size(), cells = grid.grid_height * grid.grid_width;
  const Value d = ad::pairwise_sq_dist(Value::constant(grid.cells),
                                       Value::constant(protos.vectors.data()));
  DistanceMap out{grid.grid_height, grid.grid_width,
                  Tensor(Shape{N, grid.grid_height, grid.grid_width})};
  for (int c = 0; c < cells; ++c)
    for (int n = 0; n < N; ++n) out.d[static_cast<std::int64_t>(n) * cells + c] = d.data()[c * N + n];
  return out;
}

EvidenceMap evidence(const DistanceMap& d, float epsilon) {
  if (!(epsilon > 0.0f)) throw InvalidArgument("evidence: epsilon must be positive");
  EvidenceMap ev{d.grid_height, d.grid_width, Tensor(d.d.shape()), {}};
  const std::int64_t cells = static_cast<std::int64_t>(d.grid_height) * d.grid_width;
  const std::int64_t N = d.d.size() / std::max<std::int64_t>(cells, 1);
  for (std::int64_t i = 0; i < d.d.size(); ++i) ev.scores[i] = similarity(d.d[i], epsilon);
  for (std::int64_t n = 0; n < N; ++n) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < cells; ++c)
      if (ev.scores[n * cells + c] > ev.scores[n * cells + best]) best = c;
    ev.argmax_cell.emplace_back(static_cast<int>(best / d.grid_width),
                                static_cast<int>(best % d.grid_width));
  }
  return ev;
}

std::vector<float> classify(const EvidenceMap& ev, const HeadWeights& head,
                            const PrototypeSet& protos) {
  protos.check_every_class_active();
  const int N = protos.size();
  const auto K = head.w.shape()[1];
  if (head.w.shape()[0] != N || static_cast<int>(ev.argmax_cell.size()) != N)
    throw ShapeError("classify: head " + ad::to_string(head.w.shape()) + " vs " +
                     std::to_string(ev.argmax_cell.size()) + " evidence maps");
  std::vector<float> logits(static_cast<std::size_t>(K), 0.0f);
  for (int n = 0; n < N; ++n) {
    if (!protos.active[static_cast<std::size_t>(n)]) continue;
    const float e = ev.max_score(n);
    for (std::int64_t k = 0; k < K; ++k) logits[static_cast<std::size_t>(k)] += head.w.data()[n * K + k] * e;
  }
  return logits;
}

void mask_prototypes(PrototypeSet& protos, std::span<const int> rejected) {
  PrototypeSet trial = protos;
  for (int n : rejected) {
    if (n < 0 || n >= protos.size()) throw NotFound("unknown prototype id " + std::to_string(n));
    trial.active[static_cast<std::size_t>(n)] = 0;
  }
  trial.check_every_class_active();
  protos.active = std::move(trial.active);
}

}  // namespace dipa::model
