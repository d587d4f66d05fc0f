#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dipa/checkpoint.hpp"
#include "dipa/data/synthetic.hpp"
#include "dipa/error.hpp"
#include "dipa/experiment.hpp"
#include "dipa/oracle.hpp"
#include "dipa/service/service.hpp"
#include "dipa/trainer.hpp"
#include "svg_report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

dipa::exp::ExperimentConfig config_for(const Common& c) {
  auto cfg = c.config.empty() ? dipa::exp::ExperimentConfig{} : dipa::exp::load_config(c.config);
  if (c.seed_set) cfg.train.seed = c.seed;
  cfg.train.validate();
  cfg.data.validate();
  return cfg;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw dipa::NotFound("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LoadedData {
  dipa::data::Dataset ds;
  std::string hash;
};

LoadedData load_data(const fs::path& root, dipa::exp::ExperimentConfig& cfg) {
  LoadedData d;
  d.ds = dipa::data::ingest(root, cfg.model.encoder.input_height, cfg.model.encoder.input_width);
  cfg.model.num_classes = d.ds.num_classes();
  const fs::path manifest = root / "dataset.json";
  d.hash = fs::exists(manifest) ? dipa::data::git_blob_hash(read_text(manifest)) : "";
  return d;
}

LoadedData synthesize(const dipa::exp::ExperimentConfig& cfg) {
  LoadedData d;
  d.ds = dipa::data::generate(cfg.data, cfg.train.seed);
  const json prov{{"generator", "dipa"}, {"seed", cfg.train.seed}, {"spec", cfg.data}};
  d.hash = dipa::data::git_blob_hash(dipa::data::manifest_text(dipa::data::dataset_manifest(d.ds, prov)));
  return d;
}

void write_losses(const fs::path& path, const std::vector<dipa::train::EpochLoss>& history) {
  std::ofstream out(path, std::ios::trunc);
  for (const auto& e : history) out << json(e).dump() << '\n';
}

int cmd_gen_data(const Common& c) {
  auto cfg = config_for(c);
  if (c.out.empty()) throw dipa::InvalidArgument("--out is required");
  const auto ds = dipa::data::generate(cfg.data, cfg.train.seed);
  const json prov{{"generator", "dipa"}, {"seed", cfg.train.seed}, {"spec", cfg.data}};
  dipa::data::write_dataset(ds, c.out, prov);
  std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test images to " << c.out
            << "\ndataset hash " << dipa::data::git_blob_hash(read_text(fs::path(c.out) / "dataset.json")) << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  auto cfg = config_for(c);
  if (c.data.empty() || c.out.empty()) throw dipa::InvalidArgument("--data and --out are required");
  const auto d = load_data(c.data, cfg);
  auto result = dipa::train::initial_training(cfg.model, d.ds, cfg.train);
  fs::create_directories(c.out);
  dipa::save_checkpoint(result.checkpoint, fs::path(c.out) / "initial.ckpt");
  write_losses(fs::path(c.out) / "losses.jsonl", result.history);
  std::cout << "test accuracy " << dipa::train::accuracy(result.checkpoint.net, d.ds.test) << "\nwrote "
            << (fs::path(c.out) / "initial.ckpt").string() << '\n';
  return 0;
}

int cmd_push(const Common& c) {
  auto cfg = config_for(c);
  if (c.data.empty() || c.checkpoint.empty() || c.out.empty())
    throw dipa::InvalidArgument("--checkpoint, --data and --out are required");
  const auto d = load_data(c.data, cfg);
  auto ckpt = dipa::load_checkpoint(c.checkpoint);
  dipa::train::push_checkpoint(ckpt, d.ds);
  dipa::save_checkpoint(ckpt, c.out);
  dipa::oracle::MaskOracle oracle(d.ds);
  std::cout << "non-object prototypes " << oracle.non_object_count(ckpt) << "\nwrote " << c.out << '\n';
  return 0;
}

int cmd_evaluate(const Common& c) {
  auto cfg = config_for(c);
  if (c.data.empty() || c.checkpoint.empty()) throw dipa::InvalidArgument("--checkpoint and --data are required");
  const auto d = load_data(c.data, cfg);
  const auto ckpt = dipa::load_checkpoint(c.checkpoint);
  json out{{"train_accuracy", dipa::train::accuracy(ckpt.net, d.ds.train)},
           {"test_accuracy", dipa::train::accuracy(ckpt.net, d.ds.test)},
           {"active_prototypes", ckpt.net.prototypes().active_count()},
           {"antitypes", ckpt.antitypes.size()}};
  if (!ckpt.push.records.empty()) {
    dipa::oracle::MaskOracle oracle(d.ds);
    const auto h = oracle.overlap_histogram(ckpt);
    out["nonobject"] = oracle.non_object_count(ckpt);
    out["overlap_histogram"] = {{"edges", h.edges}, {"counts", h.counts}, {"at_least_75", h.at_least_75}};
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_experiment(const Common& c, const std::string& scheme_name) {
  const auto scheme = dipa::exp::scheme_from_string(scheme_name);
  auto cfg = config_for(c);
  const auto d = c.data.empty() ? synthesize(cfg) : load_data(c.data, cfg);
  std::optional<fs::path> out;
  if (!c.out.empty()) out = c.out;
  const auto report = dipa::exp::run_experiment(scheme, d.ds, cfg, d.hash, out);
  std::cout << dipa::exp::format_table(report);
  return report.ok() ? 0 : 3;
}

int cmd_serve(Common c, const std::string& host, int port, const std::string& static_dir) {
  if (c.checkpoint.empty())
    if (const char* env = std::getenv("DIPA_CHECKPOINT")) c.checkpoint = env;
  if (c.checkpoint.empty()) throw dipa::InvalidArgument("--checkpoint or DIPA_CHECKPOINT is required");
  auto cfg = config_for(c);
  const auto d = c.data.empty() ? synthesize(cfg) : load_data(c.data, cfg);
  dipa::service::Api api(dipa::load_checkpoint(c.checkpoint), d.ds, cfg.train);
  dipa::service::ServerOptions opts;
  opts.host = host;
  opts.port = port;
  opts.static_dir = static_dir;
  dipa::service::serve(api, opts);
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<json> reports;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "report.json";
    reports.push_back(json::parse(read_text(p)));
  }
  if (reports.empty()) throw dipa::InvalidArgument("no reports given");
  for (const auto& name : dipa::tools::write_report_svgs(reports, out))
    std::cout << "wrote " << (fs::path(out) / name).string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based image classifier with interactive deselection"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "experiment config JSON");
    sub->add_option("--seed", c.seed, "run seed")->each([&](const std::string&) { c.seed_set = true; });
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset folder");
  add_common(gen);
  gen->add_option("--out", c.out, "output folder")->required();

  auto* train = app.add_subcommand("train", "initial training (warm-up and joint epochs)");
  add_common(train);
  train->add_option("--data", c.data, "dataset folder")->required();
  train->add_option("--out", c.out, "output folder")->required();

  auto* push = app.add_subcommand("push", "project prototypes onto training patches");
  add_common(push);
  push->add_option("--checkpoint", c.checkpoint)->required();
  push->add_option("--data", c.data)->required();
  push->add_option("--out", c.out, "output checkpoint")->required();

  auto* eval = app.add_subcommand("evaluate", "print accuracy and overlap statistics");
  add_common(eval);
  eval->add_option("--checkpoint", c.checkpoint)->required();
  eval->add_option("--data", c.data)->required();

  std::string scheme = "iterative";
  auto* expt = app.add_subcommand("experiment", "full pipeline for one deselection scheme");
  add_common(expt);
  expt->add_option("--scheme", scheme)->check(CLI::IsMember({"masking", "deselect-once", "iterative"}));
  expt->add_option("--data", c.data, "dataset folder; synthesized from the config when omitted");
  expt->add_option("--out", c.out, "run folder");

  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "HTTP API and web UI");
  add_common(serve);
  serve->add_option("--checkpoint", c.checkpoint, "defaults to $DIPA_CHECKPOINT");
  serve->add_option("--data", c.data);
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static", static_dir, "web UI bundle");

  std::vector<std::string> inputs;
  std::string report_out = "figures";
  auto* report = app.add_subcommand("report", "render SVG figures from report.json files");
  report->add_option("inputs", inputs, "report.json files or run folders")->required();
  report->add_option("--out", report_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(c);
    if (train->parsed()) return cmd_train(c);
    if (push->parsed()) return cmd_push(c);
    if (eval->parsed()) return cmd_evaluate(c);
    if (expt->parsed()) return cmd_experiment(c, scheme);
    if (serve->parsed()) return cmd_serve(c, host, port, static_dir);
    if (report->parsed()) return cmd_report(inputs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
