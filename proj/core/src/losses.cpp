#include "dipa/losses.hpp"

#include <algorithm>

#include "dipa/error.hpp"

namespace dipa::loss {

using ad::Shape;
using ad::Tensor;
using ad::Value;

bool AntitypeSet::insert(std::span<const float> v, AntitypeProvenance from) {
  if (dim_ == 0) dim_ = static_cast<int>(v.size());
  if (static_cast<int>(v.size()) != dim_)
    throw ShapeError("antitype: dim " + std::to_string(v.size()) + " vs set dim " + std::to_string(dim_));
  if (contains(v)) return false;
  vectors_.insert(vectors_.end(), v.begin(), v.end());
  provenance_.push_back(from);
  return true;
}

bool AntitypeSet::contains(std::span<const float> v) const {
  for (int s = 0; s < size(); ++s)
    if (std::equal(v.begin(), v.end(), vector(s))) return true;
  return false;
}

Tensor AntitypeSet::as_tensor() const { return Tensor(Shape{size(), dim_}, vectors_); }

void LossWeights::validate() const {
  if (clst < 0 || sep < 0 || l1 < 0 || reject < 0 || con < 0)
    throw InvalidArgument("loss weights must be non-negative");
  if (!(epsilon > 0)) throw InvalidArgument("loss epsilon must be positive");
}

Value reject_term(const model::PrototypeSet& protos, const AntitypeSet& antitypes, float epsilon,
                  RejectReduction reduction) {
  const auto active = protos.active_ids();
  if (antitypes.empty() || active.empty()) return Value::constant(Tensor::scalar(0.0f));
  if (antitypes.dim() != protos.dim())
    throw ShapeError("reject_term: antitype dim " + std::to_string(antitypes.dim()) +
                     " vs prototype dim " + std::to_string(protos.dim()));
  const Value p = ad::select_rows(protos.vectors, active);
  const Value d = ad::pairwise_sq_dist(Value::constant(antitypes.as_tensor()), p);  // (S, Na)
  const Value cost = model::similarity(d, epsilon);
  switch (reduction) {
    case RejectReduction::PerAntitypeMax: return ad::sum(ad::max_along(cost, 1).value);
    case RejectReduction::PerPrototypeMax: return ad::sum(ad::max_along(cost, 0).value);
    case RejectReduction::GlobalMax:
      return ad::max_along(ad::reshape(cost, Shape{cost.size()}), 0).value;
  }
  throw InvalidArgument("reject_term: unknown reduction");
}

ConTerm con_term(const model::PrototypeSet& protos) {
  ConTerm c;
  for (float v : protos.vectors.data().values())
    if (v > 1.0f || v < 0.0f) ++c.count;
  const Value above = ad::relu(ad::add(protos.vectors, -1.0f));
  const Value below = ad::relu(ad::neg(protos.vectors));
  c.surrogate = ad::add(ad::sum(ad::square(above)), ad::sum(ad::square(below)));
  return c;
}

namespace {

constexpr float kExcluded = 1e9f;

// (B,N) additive mask: 0 where (sample, prototype) is eligible, kExcluded elsewhere.
Tensor eligibility(std::span<const int> labels, const model::PrototypeSet& protos, bool own_class,
                   const char* op) {
  const auto B = static_cast<std::int64_t>(labels.size());
  const int N = protos.size();
  Tensor m(Shape{B, N}, kExcluded);
  for (std::int64_t b = 0; b < B; ++b) {
    bool any = false;
    for (int n = 0; n < N; ++n) {
      const bool same = protos.class_of[static_cast<std::size_t>(n)] == labels[static_cast<std::size_t>(b)];
      if (protos.active[static_cast<std::size_t>(n)] && same == own_class) {
        m[b * N + n] = 0.0f;
        any = true;
      }
    }
    if (!any)
      throw InvalidArgument(std::string(op) + ": class " +
                            std::to_string(labels[static_cast<std::size_t>(b)]) +
                            (own_class ? " has no active prototypes" : " has no rival prototypes"));
  }
  return m;
}

Value masked_min_mean(const Value& min_distance, std::span<const int> labels,
                      const model::PrototypeSet& protos, bool own_class, const char* op) {
  const Shape& s = min_distance.shape();
  if (s.size() != 2 || s[0] != static_cast<std::int64_t>(labels.size()) || s[1] != protos.size())
    throw ShapeError(std::string(op) + ": distances " + ad::to_string(s) + " vs " +
                     std::to_string(labels.size()) + " labels, " + std::to_string(protos.size()) +
                     " prototypes");
  const Value shifted = ad::add(min_distance, Value::constant(eligibility(labels, protos, own_class, op)));
  return ad::mean(ad::min_along(shifted, 1).value);
}

}  // namespace

Value clst_term(const Value& min_distance, std::span<const int> labels,
                const model::PrototypeSet& protos) {
  return masked_min_mean(min_distance, labels, protos, true, "clst_term");
}

Value sep_term(const Value& min_distance, std::span<const int> labels,
               const model::PrototypeSet& protos) {
  if (protos.num_classes < 2) throw InvalidArgument("sep_term: needs at least 2 classes");
  return ad::neg(masked_min_mean(min_distance, labels, protos, false, "sep_term"));
}

Value l1_term(const model::HeadWeights& head, const model::PrototypeSet& protos) {
  const int N = protos.size();
  const auto K = head.w.shape().at(1);
  if (head.w.shape()[0] != N) throw ShapeError("l1_term: head rows do not match prototypes");
  Tensor off(Shape{N, K}, 1.0f);
  for (int n = 0; n < N; ++n) off[n * K + protos.class_of[static_cast<std::size_t>(n)]] = 0.0f;
  return ad::sum(ad::mul(ad::abs(head.w), Value::constant(std::move(off))));
}

LossBreakdown total_loss(const model::ForwardPass& fp, std::span<const int> labels,
                         const model::ProtoPNet& net, const AntitypeSet& antitypes,
                         const LossWeights& w) {
  w.validate();
  const auto& protos = net.prototypes();
  LossBreakdown out;
  const Value ce = ad::softmax_cross_entropy(fp.logits, labels);
  Value total = ce;
  out.crsent = ce.item();
  auto accumulate = [&](float weight, const Value& term, float& slot) {
    slot = term.item();
    if (weight != 0.0f) total = ad::add(total, ad::mul(term, weight));
  };
  accumulate(w.clst, clst_term(fp.min_distance, labels, protos), out.clst);
  if (protos.num_classes >= 2)
    accumulate(w.sep, sep_term(fp.min_distance, labels, protos), out.sep);
  accumulate(w.l1, l1_term(net.head(), protos), out.l1);
  accumulate(w.reject, reject_term(protos, antitypes, w.epsilon, w.reduction), out.reject);
  const ConTerm con = con_term(protos);
  out.con_count = con.count;
  accumulate(w.con, con.surrogate, out.con_surrogate);
  out.total = total;
  return out;
}

}  // namespace dipa::loss
