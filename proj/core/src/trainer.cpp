#include "dipa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dipa/error.hpp"

namespace dipa::loss {

using nlohmann::json;

void to_json(json& j, const LossWeights& w) {
  const char* red = w.reduction == RejectReduction::PerAntitypeMax    ? "per_antitype_max"
                    : w.reduction == RejectReduction::PerPrototypeMax ? "per_prototype_max"
                                                                            : "global_max";
  j = json{{"clst", w.clst}, {"sep", w.sep}, {"l1", w.l1},   {"reject", w.reject},
           {"con", w.con},   {"epsilon", w.epsilon}, {"reject_reduction", red}};
}

void from_json(const json& j, LossWeights& w) {
  const LossWeights d;
  w.clst = j.value("clst", d.clst);
  w.sep = j.value("sep", d.sep);
  w.l1 = j.value("l1", d.l1);
  w.reject = j.value("reject", d.reject);
  w.con = j.value("con", d.con);
  w.epsilon = j.value("epsilon", d.epsilon);
  const auto red = j.value("reject_reduction", std::string("per_antitype_max"));
  if (red == "per_antitype_max") w.reduction = RejectReduction::PerAntitypeMax;
  else if (red == "per_prototype_max") w.reduction = RejectReduction::PerPrototypeMax;
  else if (red == "global_max") w.reduction = RejectReduction::GlobalMax;
  else throw InvalidArgument("unknown reject_reduction '" + red + "'");
}

}  // namespace dipa::loss

namespace dipa::train {

using ad::Shape;
using ad::Tensor;
using ad::Value;
using nlohmann::json;

namespace {

enum Stream : std::uint64_t { kWarmup = 1, kJoint = 2, kDeselect = 3, kLastLayer = 4 };

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  return order;
}

// Sample-weighted running mean of the loss terms.
struct EpochAccumulator {
  EpochLoss e;
  double seen = 0;

  void add(const loss::LossBreakdown& lb, std::size_t batch) {
    const double w = static_cast<double>(batch);
    e.crsent += w * lb.crsent;
    e.clst += w * lb.clst;
    e.sep += w * lb.sep;
    e.l1 += w * lb.l1;
    e.reject += w * lb.reject;
    e.con_surrogate += w * lb.con_surrogate;
    e.total += w * lb.total_value();
    e.con_count = lb.con_count;
    seen += w;
  }
  EpochLoss finish() {
    if (seen > 0)
      for (double* v : {&e.crsent, &e.clst, &e.sep, &e.l1, &e.reject, &e.con_surrogate, &e.total}) *v /= seen;
    return e;
  }
};

void check_finite(const loss::LossBreakdown& lb, const std::string& phase, int epoch, std::size_t batch) {
  if (std::isfinite(lb.total_value())) return;
  std::ostringstream os;
  os << "training diverged in " << phase << " epoch " << epoch << " batch " << batch
     << ": crsent=" << lb.crsent << " clst=" << lb.clst << " sep=" << lb.sep << " l1=" << lb.l1
     << " reject=" << lb.reject << " con=" << lb.con_surrogate;
  throw DivergenceError(os.str());
}

std::vector<int> labels_of(std::span<const data::ImageSample> samples, std::span<const std::size_t> idx) {
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (auto i : idx) labels.push_back(samples[i].label);
  return labels;
}

void require_trainable(const data::Dataset& dataset, const model::ProtoPNet& net) {
  if (dataset.num_classes() < 2) throw InvalidArgument("training needs at least 2 classes");
  if (dataset.train.empty()) throw InvalidArgument("training split is empty");
  if (dataset.num_classes() != net.config().num_classes)
    throw InvalidArgument("dataset has " + std::to_string(dataset.num_classes()) + " classes, model expects " +
                          std::to_string(net.config().num_classes));
}

void step(std::vector<Value>& params, float lr) {
  ad::sgd_step(params, lr);
  ad::zero_grad(params);
}

// Epochs on cached latents: the encoder never enters the graph.
std::vector<EpochLoss> latent_epochs(model::ProtoPNet& net, std::span<const model::LatentGrid> latents,
                                     std::span<const data::ImageSample> samples,
                                     const loss::AntitypeSet& antitypes, const TrainConfig& cfg,
                                     const std::string& phase, std::uint64_t stream, int round, int epochs,
                                     bool train_head, const Progress& progress = {}) {
  std::vector<EpochLoss> history;
  std::vector<Value> protos{net.prototypes().vectors};
  std::vector<Value> head{net.head().w};
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng(Rng::derive(cfg.seed, stream, static_cast<std::uint64_t>(round) * 10007u + epoch));
    const auto order = shuffled(samples.size(), rng);
    EpochAccumulator acc;
    acc.e = {phase, round, epoch};
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      if (!antitypes.empty()) separate_coincident(net.prototypes(), antitypes, rng);
      std::vector<const model::LatentGrid*> batch;
      for (auto i : idx) batch.push_back(&latents[i]);
      const auto labels = labels_of(samples, idx);
      const auto fp = net.forward_rows(Value::constant(model::stack_latents(batch)),
                                       static_cast<std::int64_t>(idx.size()));
      const auto lb = loss::total_loss(fp, labels, net, antitypes, cfg.weights);
      check_finite(lb, phase, epoch, start / bs);
      ad::backward(lb.total);
      step(protos, cfg.lr.prototypes);
      if (train_head) step(head, cfg.lr.head);
      else ad::zero_grad(head);
      acc.add(lb, idx.size());
    }
    history.push_back(acc.finish());
    if (progress) progress(static_cast<double>(epoch) / epochs);
  }
  return history;
}

std::vector<EpochLoss> joint_epochs(model::ProtoPNet& net, std::span<const data::ImageSample> samples,
                                    const TrainConfig& cfg, int epochs) {
  std::vector<EpochLoss> history;
  const loss::AntitypeSet none(net.prototypes().dim());
  std::vector<Value> enc = net.encoder().parameters();
  std::vector<Value> protos{net.prototypes().vectors};
  std::vector<Value> head{net.head().w};
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng(Rng::derive(cfg.seed, kJoint, static_cast<std::uint64_t>(epoch)));
    const auto order = shuffled(samples.size(), rng);
    EpochAccumulator acc;
    acc.e = {"joint", 0, epoch};
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      std::vector<const data::ImageSample*> batch;
      for (auto i : idx) batch.push_back(&samples[i]);
      const auto labels = labels_of(samples, idx);
      const auto fp = net.forward(Value::constant(model::stack_images(batch)));
      const auto lb = loss::total_loss(fp, labels, net, none, cfg.weights);
      check_finite(lb, "joint", epoch, start / bs);
      ad::backward(lb.total);
      step(enc, cfg.lr.encoder);
      step(protos, cfg.lr.prototypes);
      step(head, cfg.lr.head);
      acc.add(lb, idx.size());
    }
    history.push_back(acc.finish());
  }
  return history;
}

std::string stage_meta(const std::string& stage, int round) {
  return json{{"stage", stage}, {"round", round}}.dump();
}

}  // namespace

void TrainConfig::validate() const {
  for (int v : {warmup_epochs, joint_epochs, deselect_epochs, rounds, finetune_epochs})
    if (v < 0) throw InvalidArgument("epoch and round counts must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  for (float v : {lr.encoder, lr.prototypes, lr.head, lr.last_layer, last_layer_l1})
    if (!(v >= 0.0f)) throw InvalidArgument("learning rates and l1 must be >= 0");
  weights.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"warmup_epochs", c.warmup_epochs},
           {"joint_epochs", c.joint_epochs},
           {"deselect_epochs", c.deselect_epochs},
           {"rounds", c.rounds},
           {"finetune_epochs", c.finetune_epochs},
           {"batch_size", c.batch_size},
           {"lr",
            {{"encoder", c.lr.encoder},
             {"prototypes", c.lr.prototypes},
             {"head", c.lr.head},
             {"last_layer", c.lr.last_layer}}},
           {"weights", c.weights},
           {"last_layer_l1", c.last_layer_l1},
           {"train_head_in_rounds", c.train_head_in_rounds},
           {"finetune_between_rounds", c.finetune_between_rounds},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  const TrainConfig d;
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.joint_epochs = j.value("joint_epochs", d.joint_epochs);
  c.deselect_epochs = j.value("deselect_epochs", d.deselect_epochs);
  c.rounds = j.value("rounds", d.rounds);
  c.finetune_epochs = j.value("finetune_epochs", d.finetune_epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = d.lr;
  if (j.contains("lr")) {
    const auto& l = j.at("lr");
    c.lr.encoder = l.value("encoder", d.lr.encoder);
    c.lr.prototypes = l.value("prototypes", d.lr.prototypes);
    c.lr.head = l.value("head", d.lr.head);
    c.lr.last_layer = l.value("last_layer", d.lr.last_layer);
  }
  c.weights = j.contains("weights") ? j.at("weights").get<loss::LossWeights>() : d.weights;
  c.last_layer_l1 = j.value("last_layer_l1", d.last_layer_l1);
  c.train_head_in_rounds = j.value("train_head_in_rounds", d.train_head_in_rounds);
  c.finetune_between_rounds = j.value("finetune_between_rounds", d.finetune_between_rounds);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

void to_json(json& j, const EpochLoss& e) {
  j = json{{"phase", e.phase},   {"round", e.round},   {"epoch", e.epoch},
           {"crsent", e.crsent}, {"clst", e.clst},     {"sep", e.sep},
           {"l1", e.l1},         {"reject", e.reject}, {"con_count", e.con_count},
           {"con_surrogate", e.con_surrogate},         {"total", e.total}};
}

double accuracy(const model::ProtoPNet& net, std::span<const model::LatentGrid> latents,
                std::span<const data::ImageSample> samples) {
  if (samples.empty()) return 0.0;
  const auto pred = net.predict(latents);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) hit += pred[i] == samples[i].label ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

double accuracy(const model::ProtoPNet& net, std::span<const data::ImageSample> samples) {
  const auto latents = net.encoder().encode_all(samples);
  return accuracy(net, latents, samples);
}

TrainResult initial_training(const model::ModelConfig& model_cfg, const data::Dataset& dataset,
                             const TrainConfig& cfg) {
  return initial_training(model::ProtoPNet(model_cfg, cfg.seed), dataset, cfg);
}

TrainResult initial_training(model::ProtoPNet net, const data::Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  require_trainable(dataset, net);
  TrainResult out;
  if (cfg.warmup_epochs > 0) {
    const auto latents = net.encoder().encode_all(dataset.train);
    const loss::AntitypeSet none(net.prototypes().dim());
    auto h = latent_epochs(net, latents, dataset.train, none, cfg, "warmup", kWarmup, 0, cfg.warmup_epochs, true);
    out.history.insert(out.history.end(), h.begin(), h.end());
  }
  auto h = joint_epochs(net, dataset.train, cfg, cfg.joint_epochs);
  out.history.insert(out.history.end(), h.begin(), h.end());
  out.checkpoint.antitypes = loss::AntitypeSet(net.prototypes().dim());
  out.checkpoint.net = std::move(net);
  out.checkpoint.meta_json = stage_meta("initial", 0);
  return out;
}

void push_checkpoint(Checkpoint& ckpt, std::span<const model::LatentGrid> train_latents,
                     const data::Dataset& dataset) {
  const model::PushReport* prev = ckpt.push.records.empty() ? nullptr : &ckpt.push;
  ckpt.push = model::push(ckpt.net.prototypes(), train_latents, dataset.train, prev);
}

void push_checkpoint(Checkpoint& ckpt, const data::Dataset& dataset) {
  const auto latents = ckpt.net.encoder().encode_all(dataset.train);
  push_checkpoint(ckpt, latents, dataset);
}

void mask_deselect(model::PrototypeSet& protos, const oracle::Verdicts& verdicts) {
  const auto ids = oracle::rejected_ids(verdicts);
  model::mask_prototypes(protos, ids);
}

std::vector<int> mask_deselect_keep_one(model::PrototypeSet& protos, const oracle::Verdicts& verdicts) {
  const auto ids = oracle::rejected_ids(verdicts);
  const std::set<int> rejected(ids.begin(), ids.end());
  for (int n : rejected)
    if (n < 0 || n >= protos.size()) throw NotFound("unknown prototype id " + std::to_string(n));
  std::set<int> kept;
  for (int k = 0; k < protos.num_classes; ++k) {
    std::optional<int> first_rejected;
    bool survivor = false;
    for (int n : protos.of_class(k)) {
      if (!protos.active[static_cast<std::size_t>(n)]) continue;
      if (rejected.count(n)) {
        if (!first_rejected) first_rejected = n;
      } else {
        survivor = true;
      }
    }
    if (!survivor && first_rejected) kept.insert(*first_rejected);
  }
  std::vector<int> to_mask;
  for (int n : rejected)
    if (!kept.count(n)) to_mask.push_back(n);
  model::mask_prototypes(protos, to_mask);
  return {kept.begin(), kept.end()};
}

std::vector<EpochLoss> last_layer_finetune(Checkpoint& ckpt, std::span<const model::LatentGrid> train_latents,
                                           const data::Dataset& dataset, const TrainConfig& cfg, int epochs,
                                           int round) {
  std::vector<EpochLoss> history;
  if (epochs <= 0) return history;
  auto& net = ckpt.net;
  const auto& samples = dataset.train;
  const int N = net.prototypes().size();
  // Max evidence is constant while encoder and prototypes are frozen.
  Tensor evidence(Shape{static_cast<std::int64_t>(samples.size()), N});
  {
    ad::NoGradGuard no_grad;
    constexpr std::size_t chunk = 64;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
      std::vector<const model::LatentGrid*> batch;
      for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) batch.push_back(&train_latents[i]);
      const auto fp = net.forward_rows(Value::constant(model::stack_latents(batch)),
                                       static_cast<std::int64_t>(batch.size()));
      std::copy_n(fp.max_evidence.data().data(), fp.max_evidence.size(),
                  evidence.data() + static_cast<std::int64_t>(start) * N);
    }
  }
  const Value mask = Value::constant(net.prototypes().mask_tensor());
  std::vector<Value> head{net.head().w};
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng(Rng::derive(cfg.seed, kLastLayer, static_cast<std::uint64_t>(round) * 10007u + epoch));
    const auto order = shuffled(samples.size(), rng);
    EpochAccumulator acc;
    acc.e = {"last_layer", round, epoch};
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, order.size() - start));
      Tensor eb(Shape{static_cast<std::int64_t>(idx.size()), N});
      for (std::size_t b = 0; b < idx.size(); ++b)
        std::copy_n(evidence.data() + static_cast<std::int64_t>(idx[b]) * N, N,
                    eb.data() + static_cast<std::int64_t>(b) * N);
      const auto labels = labels_of(samples, idx);
      const Value logits = ad::matmul(ad::mul(Value::constant(std::move(eb)), mask), net.head().w);
      loss::LossBreakdown lb;
      const Value ce = ad::softmax_cross_entropy(logits, labels);
      const Value l1 = loss::l1_term(net.head(), net.prototypes());
      lb.crsent = ce.item();
      lb.l1 = l1.item();
      lb.total = cfg.last_layer_l1 != 0.0f ? ad::add(ce, ad::mul(l1, cfg.last_layer_l1)) : ce;
      check_finite(lb, "last_layer", epoch, start / bs);
      ad::backward(lb.total);
      step(head, cfg.lr.last_layer);
      acc.add(lb, idx.size());
    }
    history.push_back(acc.finish());
  }
  return history;
}

std::vector<EpochLoss> last_layer_finetune(Checkpoint& ckpt, const data::Dataset& dataset,
                                           const TrainConfig& cfg, int epochs) {
  if (epochs <= 0) return {};
  const auto latents = ckpt.net.encoder().encode_all(dataset.train);
  return last_layer_finetune(ckpt, latents, dataset, cfg, epochs);
}

std::vector<int> separate_coincident(model::PrototypeSet& protos, const loss::AntitypeSet& antitypes, Rng& rng,
                                     float magnitude) {
  std::vector<int> moved;
  const int D = protos.dim();
  if (antitypes.empty()) return moved;
  if (antitypes.dim() != D) throw ShapeError("separate_coincident: antitype dim mismatch");
  auto& data = protos.vectors.mutable_data();
  for (auto n : protos.active_ids()) {
    float* p = data.data() + n * D;
    bool hit = false;
    for (int s = 0; s < antitypes.size() && !hit; ++s) {
      const float* q = antitypes.vector(s);
      double d = 0;
      for (int i = 0; i < D; ++i) d += (static_cast<double>(p[i]) - q[i]) * (static_cast<double>(p[i]) - q[i]);
      hit = d < 1e-12;
    }
    if (!hit) continue;
    std::vector<double> u(static_cast<std::size_t>(D));
    double norm = 0;
    for (int i = 0; i < D; ++i) {
      double v = rng.normal();
      if (p[i] <= magnitude) v = std::abs(v);
      if (p[i] >= 1.0f - magnitude) v = -std::abs(v);
      u[static_cast<std::size_t>(i)] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < D; ++i) p[i] += static_cast<float>(magnitude * u[static_cast<std::size_t>(i)] / norm);
    moved.push_back(static_cast<int>(n));
  }
  return moved;
}

int add_antitypes(Checkpoint& ckpt, const oracle::Verdicts& verdicts, int round) {
  auto ids = oracle::rejected_ids(verdicts);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  const auto& protos = ckpt.net.prototypes();
  if (ckpt.antitypes.dim() == 0) ckpt.antitypes = loss::AntitypeSet(protos.dim());
  int added = 0;
  for (int n : ids) {
    if (n < 0 || n >= protos.size()) throw NotFound("unknown prototype id " + std::to_string(n));
    const std::span<const float> v(protos.vector(n), static_cast<std::size_t>(protos.dim()));
    added += ckpt.antitypes.insert(v, {round, n}) ? 1 : 0;
  }
  return added;
}

std::vector<int> near_antitype(const model::PrototypeSet& protos, const loss::AntitypeSet& antitypes,
                               float threshold) {
  std::vector<int> out;
  const int D = protos.dim();
  for (auto n : protos.active_ids()) {
    const float* p = protos.vector(static_cast<int>(n));
    for (int s = 0; s < antitypes.size(); ++s) {
      const float* q = antitypes.vector(s);
      double d = 0;
      for (int i = 0; i < D; ++i) d += (static_cast<double>(p[i]) - q[i]) * (static_cast<double>(p[i]) - q[i]);
      if (d < threshold) {
        out.push_back(static_cast<int>(n));
        break;
      }
    }
  }
  return out;
}

std::vector<EpochLoss> deselection_epochs(Checkpoint& ckpt, std::span<const model::LatentGrid> train_latents,
                                          const data::Dataset& dataset, const TrainConfig& cfg, int round,
                                          int epochs, const Progress& progress) {
  cfg.validate();
  require_trainable(dataset, ckpt.net);
  return latent_epochs(ckpt.net, train_latents, dataset.train, ckpt.antitypes, cfg, "deselect", kDeselect, round,
                       epochs, cfg.train_head_in_rounds, progress);
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Mask: return "mask";
    case Mode::Deselect: return "deselect";
    case Mode::Iterative: return "iterative";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& s) {
  if (s == "mask") return Mode::Mask;
  if (s == "deselect") return Mode::Deselect;
  if (s == "iterative") return Mode::Iterative;
  throw InvalidArgument("unknown mode '" + s + "'");
}

void to_json(json& j, const RoundRecord& r) {
  json verdicts = json::array();
  for (const auto& v : r.verdicts) verdicts.push_back({{"prototype", v.prototype}, {"non_object", v.non_object}});
  json push = json::array();
  for (const auto& p : r.push.records)
    push.push_back({{"prototype", p.prototype},
                    {"image", p.image_id},
                    {"cell", {p.cell_row, p.cell_col}},
                    {"distance_moved", p.distance_moved}});
  j = json{{"round", r.round},
           {"nonobject", r.nonobject},
           {"antitypes_added", r.antitypes_added},
           {"antitypes_total", r.antitypes_total},
           {"accuracy_before", r.accuracy_before},
           {"accuracy_after", r.accuracy_after},
           {"near_antitype", r.near_antitype},
           {"verdicts", verdicts},
           {"push", push},
           {"losses", r.losses}};
}

RoundRecord run_round(Checkpoint& state, const oracle::Verdicts& verdicts, const data::Dataset& dataset,
                      std::span<const model::LatentGrid> train_latents,
                      std::span<const model::LatentGrid> test_latents, const TrainConfig& cfg, int round,
                      int epochs, const Progress& progress) {
  RoundRecord rec;
  rec.round = round;
  rec.push = state.push;
  rec.verdicts = verdicts;
  rec.nonobject = static_cast<int>(oracle::rejected_ids(verdicts).size());
  rec.accuracy_before = accuracy(state.net, test_latents, dataset.test);
  rec.antitypes_added = add_antitypes(state, verdicts, round);
  rec.antitypes_total = state.antitypes.size();
  rec.losses = deselection_epochs(state, train_latents, dataset, cfg, round, epochs, progress);
  rec.near_antitype = near_antitype(state.net.prototypes(), state.antitypes);
  push_checkpoint(state, train_latents, dataset);
  if (cfg.finetune_between_rounds) {
    auto h = last_layer_finetune(state, train_latents, dataset, cfg, cfg.finetune_epochs, round);
    rec.losses.insert(rec.losses.end(), h.begin(), h.end());
  }
  rec.accuracy_after = accuracy(state.net, test_latents, dataset.test);
  state.meta_json = stage_meta("round", round);
  return rec;
}

RejectionSession iterative_rejection(Checkpoint ckpt, const data::Dataset& dataset,
                                     oracle::VerdictProvider& consult, const TrainConfig& cfg,
                                     std::optional<std::filesystem::path> out_dir) {
  cfg.validate();
  RejectionSession session;
  session.mode = cfg.rounds == 1 ? Mode::Deselect : Mode::Iterative;
  session.rounds_planned = cfg.rounds;
  session.out_dir = std::move(out_dir);
  if (ckpt.push.records.empty()) push_checkpoint(ckpt, dataset);
  session.state = std::move(ckpt);
  session.initial_accuracy = accuracy(session.state.net, dataset.test);
  if (session.out_dir) {
    std::filesystem::create_directories(*session.out_dir);
    save_checkpoint(session.state, *session.out_dir / "round_0.ckpt");
    std::ofstream(*session.out_dir / "session.jsonl", std::ios::trunc);
  }
  resume(session, dataset, consult, cfg);
  return session;
}

void resume(RejectionSession& session, const data::Dataset& dataset, oracle::VerdictProvider& consult,
            const TrainConfig& cfg) {
  session.suspended = false;
  session.suspend_reason.clear();
  if (session.complete()) return;
  const auto& enc = session.state.net.encoder();
  const auto train_latents = enc.encode_all(dataset.train);
  const auto test_latents = enc.encode_all(dataset.test);
  while (static_cast<int>(session.rounds.size()) < session.rounds_planned) {
    const int round = session.next_round();
    oracle::Verdicts verdicts;
    try {
      verdicts = consult.consult(session.state);
    } catch (const ConsultUnavailable& e) {
      session.suspended = true;
      session.suspend_reason = e.what();
      return;
    }
    auto rec = run_round(session.state, verdicts, dataset, train_latents, test_latents, cfg, round,
                         cfg.deselect_epochs);
    if (session.out_dir) {
      save_checkpoint(session.state, *session.out_dir / ("round_" + std::to_string(round) + ".ckpt"));
      std::ofstream log(*session.out_dir / "session.jsonl", std::ios::app);
      log << json(rec).dump() << '\n';
    }
    session.rounds.push_back(std::move(rec));
  }
}

}  // namespace dipa::train
