#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dipa/checkpoint.hpp"
#include "dipa/data/dataset.hpp"
#include "dipa/losses.hpp"
#include "dipa/oracle.hpp"
#include "dipa/rng.hpp"

namespace dipa::loss {
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
}  // namespace dipa::loss

namespace dipa::train {

struct LearningRates {
  float encoder = 0.05f;
  float prototypes = 0.05f;
  float head = 0.05f;
  float last_layer = 0.05f;
  friend bool operator==(const LearningRates&, const LearningRates&) = default;
};

struct TrainConfig {
  int warmup_epochs = 5;
  int joint_epochs = 10;
  int deselect_epochs = 4;  // M
  int rounds = 3;           // N
  int finetune_epochs = 20;
  int batch_size = 32;
  LearningRates lr;
  loss::LossWeights weights;
  float last_layer_l1 = 1e-4f;
  // Train the head between deselection rounds; otherwise only prototypes move.
  bool train_head_in_rounds = false;
  bool finetune_between_rounds = false;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochLoss {
  std::string phase;
  int round = 0;
  int epoch = 0;
  double crsent = 0, clst = 0, sep = 0, l1 = 0, reject = 0, con_surrogate = 0, total = 0;
  int con_count = 0;
};
void to_json(nlohmann::json& j, const EpochLoss& e);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> history;
};

// Fraction of correctly classified samples.
double accuracy(const model::ProtoPNet& net, std::span<const model::LatentGrid> latents,
                std::span<const data::ImageSample> samples);
double accuracy(const model::ProtoPNet& net, std::span<const data::ImageSample> samples);

// Warm-up (encoder frozen) followed by joint training of all parameters. The
// returned checkpoint is not pushed.
TrainResult initial_training(const model::ModelConfig& model_cfg, const data::Dataset& dataset,
                             const TrainConfig& cfg);
TrainResult initial_training(model::ProtoPNet net, const data::Dataset& dataset, const TrainConfig& cfg);

// Push with the checkpoint's own encoder; updates ckpt.push.
void push_checkpoint(Checkpoint& ckpt, const data::Dataset& dataset);
void push_checkpoint(Checkpoint& ckpt, std::span<const model::LatentGrid> train_latents,
                     const data::Dataset& dataset);

// Rejected prototypes become inactive; MaskExhaustedClass leaves protos untouched.
void mask_deselect(model::PrototypeSet& protos, const oracle::Verdicts& verdicts);

// Like mask_deselect, but when a class would lose every prototype, the
// rejected prototype of that class with the lowest id stays active. Returns
// the ids that were kept this way.
std::vector<int> mask_deselect_keep_one(model::PrototypeSet& protos, const oracle::Verdicts& verdicts);

// Trains only the head on cached max evidence with the off-class L1 term.
std::vector<EpochLoss> last_layer_finetune(Checkpoint& ckpt, std::span<const model::LatentGrid> train_latents,
                                           const data::Dataset& dataset, const TrainConfig& cfg, int epochs,
                                           int round = 0);
std::vector<EpochLoss> last_layer_finetune(Checkpoint& ckpt, const data::Dataset& dataset,
                                           const TrainConfig& cfg, int epochs);

// Called with the finished fraction of a long-running step.
using Progress = std::function<void(double)>;

// A prototype exactly on an antitype gets no Reject gradient. Moves every such
// active prototype by a seeded offset of euclidean norm `magnitude`, pointing
// inward on coordinates at the hypercube boundary. Returns the ids moved.
std::vector<int> separate_coincident(model::PrototypeSet& protos, const loss::AntitypeSet& antitypes,
                                     Rng& rng, float magnitude = 1e-3f);

// Copies the prototype vectors of rejected ids into the antitype set.
// Returns how many were new.
int add_antitypes(Checkpoint& ckpt, const oracle::Verdicts& verdicts, int round);

// Active prototypes within squared distance 1e-6 of some antitype.
std::vector<int> near_antitype(const model::PrototypeSet& protos, const loss::AntitypeSet& antitypes,
                               float threshold = 1e-6f);

// M epochs of deselection training with frozen encoder. Does not push.
std::vector<EpochLoss> deselection_epochs(Checkpoint& ckpt, std::span<const model::LatentGrid> train_latents,
                                          const data::Dataset& dataset, const TrainConfig& cfg, int round,
                                          int epochs, const Progress& progress = {});

enum class Mode { Mask, Deselect, Iterative };
std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct RoundRecord {
  int round = 0;
  model::PushReport push;  // state the verdicts were given on
  oracle::Verdicts verdicts;
  int nonobject = 0;       // rejected count at consult
  int antitypes_added = 0;
  int antitypes_total = 0;
  double accuracy_before = 0;
  double accuracy_after = 0;
  std::vector<int> near_antitype;
  std::vector<EpochLoss> losses;
};
void to_json(nlohmann::json& j, const RoundRecord& r);

// push, then N times: consult, add rejected to the antitypes, M epochs, push.
// If the provider throws ConsultUnavailable, `suspended` is set and the
// session can be continued with resume().
struct RejectionSession {
  Mode mode = Mode::Iterative;
  int rounds_planned = 0;
  Checkpoint state;
  std::vector<RoundRecord> rounds;
  double initial_accuracy = 0;
  bool suspended = false;
  std::string suspend_reason;
  std::optional<std::filesystem::path> out_dir;  // round_{k}.ckpt and session.jsonl

  int next_round() const { return static_cast<int>(rounds.size()) + 1; }
  bool complete() const { return !suspended && static_cast<int>(rounds.size()) >= rounds_planned; }
};

// `ckpt` is pushed first unless it already carries a push report.
RejectionSession iterative_rejection(Checkpoint ckpt, const data::Dataset& dataset,
                                     oracle::VerdictProvider& consult, const TrainConfig& cfg,
                                     std::optional<std::filesystem::path> out_dir = std::nullopt);
void resume(RejectionSession& session, const data::Dataset& dataset, oracle::VerdictProvider& consult,
            const TrainConfig& cfg);

// Executes one round on the given state: add antitypes for the verdicts, train,
// push. Shared by the batch driver and the HTTP service.
RoundRecord run_round(Checkpoint& state, const oracle::Verdicts& verdicts, const data::Dataset& dataset,
                      std::span<const model::LatentGrid> train_latents,
                      std::span<const model::LatentGrid> test_latents, const TrainConfig& cfg, int round,
                      int epochs, const Progress& progress = {});

}  // namespace dipa::train
