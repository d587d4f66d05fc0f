#pragma once

#include "dipa/checkpoint.hpp"
#include "dipa/data/synthetic.hpp"
#include "dipa/experiment.hpp"
#include "dipa/trainer.hpp"

namespace fx {

// Small enough that a full experiment runs in well under a second.
inline dipa::exp::ExperimentConfig tiny_config(std::uint64_t seed = 1) {
  dipa::exp::ExperimentConfig cfg;
  cfg.data.classes = 2;
  cfg.data.train_per_class = 12;
  cfg.data.test_per_class = 6;
  cfg.data.image_size = 32;
  cfg.data.min_object = 10;
  cfg.data.max_object = 14;
  cfg.model.encoder.input_height = cfg.model.encoder.input_width = 32;
  cfg.model.encoder.conv_blocks = {{8, 2}, {16, 2}};
  cfg.model.encoder.grid_height = cfg.model.encoder.grid_width = 4;
  cfg.model.encoder.latent_dim = 8;
  cfg.model.num_classes = 2;
  cfg.model.per_class = 3;
  cfg.train.warmup_epochs = 2;
  cfg.train.joint_epochs = 3;
  cfg.train.deselect_epochs = 2;
  cfg.train.rounds = 2;
  cfg.train.finetune_epochs = 3;
  cfg.train.batch_size = 8;
  // The default rates are tuned for the full-size encoder.
  cfg.train.lr.encoder = cfg.train.lr.prototypes = cfg.train.lr.head = 0.02f;
  cfg.train.seed = seed;
  return cfg;
}

inline const dipa::data::Dataset& tiny_dataset() {
  static const dipa::data::Dataset ds = dipa::data::generate(tiny_config().data, 1);
  return ds;
}

// Trained and pushed, shared across tests.
inline const dipa::Checkpoint& tiny_pushed() {
  static const dipa::Checkpoint ckpt = [] {
    auto r = dipa::train::initial_training(tiny_config().model, tiny_dataset(), tiny_config().train);
    dipa::train::push_checkpoint(r.checkpoint, tiny_dataset());
    return std::move(r.checkpoint);
  }();
  return ckpt;
}

}  // namespace fx

#include <filesystem>
#include <random>

namespace fx {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("dipa_test_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace fx
