#include "dipa/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dipa/error.hpp"

namespace dipa::model {

using nlohmann::json;

void to_json(json& j, const ModelConfig& c) {
  json blocks = json::array();
  for (const auto& b : c.encoder.conv_blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  j = json{{"input", {c.encoder.input_height, c.encoder.input_width, c.encoder.input_channels}},
           {"conv_blocks", blocks},
           {"grid", {c.encoder.grid_height, c.encoder.grid_width}},
           {"latent_dim", c.encoder.latent_dim},
           {"num_classes", c.num_classes},
           {"per_class", c.per_class},
           {"epsilon", c.epsilon}};
}

void from_json(const json& j, ModelConfig& c) {
  const ModelConfig d;
  c = d;
  if (j.contains("input")) {
    const auto& in = j.at("input");
    c.encoder.input_height = in.at(0).get<int>();
    c.encoder.input_width = in.at(1).get<int>();
    c.encoder.input_channels = in.at(2).get<int>();
  }
  if (j.contains("conv_blocks")) {
    c.encoder.conv_blocks.clear();
    for (const auto& b : j.at("conv_blocks"))
      c.encoder.conv_blocks.push_back({b.at("channels").get<int>(), b.at("stride").get<int>()});
  }
  if (j.contains("grid")) {
    c.encoder.grid_height = j.at("grid").at(0).get<int>();
    c.encoder.grid_width = j.at("grid").at(1).get<int>();
  }
  c.encoder.latent_dim = j.value("latent_dim", d.encoder.latent_dim);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.per_class = j.value("per_class", d.per_class);
  c.epsilon = j.value("epsilon", d.epsilon);
}

}  // namespace dipa::model

namespace dipa::exp {

using nlohmann::json;

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Masking: return "masking";
    case Scheme::DeselectOnce: return "deselect-once";
    case Scheme::Iterative: return "iterative";
  }
  return "unknown";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "masking") return Scheme::Masking;
  if (s == "deselect-once") return Scheme::DeselectOnce;
  if (s == "iterative") return Scheme::Iterative;
  throw InvalidArgument("unknown scheme '" + s + "' (expected masking, deselect-once or iterative)");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"model", c.model}, {"data", c.data}, {"train", c.train}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("model")) c.model = j.at("model").get<model::ModelConfig>();
  if (j.contains("data")) c.data = j.at("data").get<data::SyntheticSpec>();
  if (j.contains("train")) c.train = j.at("train").get<train::TrainConfig>();
  c.model.num_classes = c.data.classes;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open config " + path.string());
  try {
    return json::parse(in).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
}

namespace {

json histogram_json(const oracle::Histogram& h) {
  return json{{"edges", h.edges}, {"counts", h.counts}, {"at_least_75", h.at_least_75}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<train::EpochLoss>& history) {
  std::ofstream out(path, std::ios::app);
  for (const auto& e : history) out << json(e).dump() << '\n';
}

}  // namespace

json to_json(const ExperimentReport& r) {
  json j{{"scheme", to_string(r.scheme)},
         {"seed", r.seed},
         {"accuracy_before", r.accuracy_before},
         {"accuracy_after_deselect", r.accuracy_after_deselect},
         {"accuracy_after_finetune", r.accuracy_after_finetune},
         {"nonobject_counts", r.nonobject_counts},
         {"overlap_before", histogram_json(r.overlap_before)},
         {"overlap_after", histogram_json(r.overlap_after)},
         {"kept_on_exhaustion", r.kept_on_exhaustion},
         {"wall_seconds", r.wall_seconds},
         {"stages", r.stages},
         {"ok", r.ok()},
         {"config", r.config},
         {"dataset_hash", r.dataset_hash}};
  if (!r.ok()) j["failure"] = {{"stage", r.failed_stage}, {"error", r.error}};
  return j;
}

std::string format_table(const ExperimentReport& r) {
  std::ostringstream os;
  char line[160];
  auto row = [&](const char* key, const std::string& value) {
    std::snprintf(line, sizeof line, "  %-26s %s\n", key, value.c_str());
    os << line;
  };
  auto pct = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.3f", v);
    return std::string(b);
  };
  os << "experiment " << to_string(r.scheme) << " (seed " << r.seed << ")\n";
  row("accuracy before", pct(r.accuracy_before));
  row("accuracy after deselect", pct(r.accuracy_after_deselect));
  row("accuracy after finetune", pct(r.accuracy_after_finetune));
  std::string counts;
  for (std::size_t i = 0; i < r.nonobject_counts.size(); ++i)
    counts += (i ? " -> " : "") + std::to_string(r.nonobject_counts[i]);
  row("non-object prototypes", counts);
  row(">=75% overlap before/after",
      std::to_string(r.overlap_before.at_least_75) + " / " + std::to_string(r.overlap_after.at_least_75));
  row("wall time [s]", pct(r.wall_seconds));
  row("dataset hash", r.dataset_hash);
  if (!r.ok()) row("FAILED at", r.failed_stage + ": " + r.error);
  return os.str();
}

ExperimentReport run_scheme(Scheme scheme, const Checkpoint& pushed, const data::Dataset& dataset,
                            const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport r;
  r.scheme = scheme;
  r.seed = cfg.train.seed;
  r.config = cfg;
  std::string stage = "evaluate_before";
  try {
    oracle::MaskOracle oracle(dataset);
    Checkpoint state = pushed.clone();
    const auto& enc = state.net.encoder();
    const auto train_latents = enc.encode_all(dataset.train);
    const auto test_latents = enc.encode_all(dataset.test);
    r.accuracy_before = train::accuracy(state.net, test_latents, dataset.test);
    r.overlap_before = oracle.overlap_histogram(state);
    r.stages.push_back(stage);

    stage = "deselect";
    if (scheme == Scheme::Masking) {
      const auto verdicts = oracle.consult(state);
      r.nonobject_counts.push_back(static_cast<int>(oracle::rejected_ids(verdicts).size()));
      r.kept_on_exhaustion = train::mask_deselect_keep_one(state.net.prototypes(), verdicts);
    } else {
      auto tcfg = cfg.train;
      if (scheme == Scheme::DeselectOnce) tcfg.rounds = 1;
      auto session = train::iterative_rejection(state, dataset, oracle, tcfg,
                                                out_dir ? std::optional(*out_dir / "rounds") : std::nullopt);
      for (const auto& rec : session.rounds) r.nonobject_counts.push_back(rec.nonobject);
      state = std::move(session.state);
      const auto residual = oracle.consult(state);
      r.nonobject_counts.push_back(static_cast<int>(oracle::rejected_ids(residual).size()));
      r.kept_on_exhaustion = train::mask_deselect_keep_one(state.net.prototypes(), residual);
    }
    r.accuracy_after_deselect = train::accuracy(state.net, test_latents, dataset.test);
    r.stages.push_back(stage);

    stage = "last_layer_finetune";
    const auto history = train::last_layer_finetune(state, train_latents, dataset, cfg.train, cfg.train.finetune_epochs);
    r.accuracy_after_finetune = train::accuracy(state.net, test_latents, dataset.test);
    r.overlap_after = oracle.overlap_histogram(state);
    r.stages.push_back(stage);

    if (out_dir) {
      stage = "persist";
      std::filesystem::create_directories(*out_dir);
      state.meta_json = json{{"stage", "final"}, {"scheme", to_string(scheme)}}.dump();
      save_checkpoint(state, *out_dir / "final.ckpt");
      write_jsonl(*out_dir / "losses.jsonl", history);
      r.stages.push_back(stage);
    }
  } catch (const std::exception& e) {
    r.failed_stage = stage;
    r.error = e.what();
  }
  r.wall_seconds = seconds_since(t0);
  return r;
}

ExperimentReport run_experiment(Scheme scheme, const data::Dataset& dataset, const ExperimentConfig& cfg,
                                const std::string& dataset_hash,
                                const std::optional<std::filesystem::path>& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string stage = "initial_training";
  std::vector<std::string> done;
  try {
    if (out_dir) std::filesystem::create_directories(*out_dir);
    auto trained = train::initial_training(cfg.model, dataset, cfg.train);
    done.push_back(stage);
    if (out_dir) {
      std::ofstream(*out_dir / "losses.jsonl", std::ios::trunc);
      write_jsonl(*out_dir / "losses.jsonl", trained.history);
      save_checkpoint(trained.checkpoint, *out_dir / "initial.ckpt");
    }
    stage = "push";
    train::push_checkpoint(trained.checkpoint, dataset);
    if (out_dir) save_checkpoint(trained.checkpoint, *out_dir / "pushed.ckpt");
    done.push_back(stage);
    auto r = run_scheme(scheme, trained.checkpoint, dataset, cfg, out_dir);
    r.stages.insert(r.stages.begin(), done.begin(), done.end());
    r.dataset_hash = dataset_hash;
    r.wall_seconds = seconds_since(t0);
    if (out_dir) std::ofstream(*out_dir / "report.json") << to_json(r).dump(2) << '\n';
    return r;
  } catch (const std::exception& e) {
    ExperimentReport r;
    r.scheme = scheme;
    r.seed = cfg.train.seed;
    r.config = cfg;
    r.dataset_hash = dataset_hash;
    r.stages = done;
    r.failed_stage = stage;
    r.error = e.what();
    r.wall_seconds = seconds_since(t0);
    if (out_dir) std::ofstream(*out_dir / "report.json") << to_json(r).dump(2) << '\n';
    return r;
  }
}

}  // namespace dipa::exp
