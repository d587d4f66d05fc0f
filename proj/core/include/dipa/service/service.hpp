#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dipa/checkpoint.hpp"
#include "dipa/data/dataset.hpp"
#include "dipa/oracle.hpp"
#include "dipa/trainer.hpp"

namespace dipa::service {

// Transport-neutral response. Either json or raw bytes with a content type.
struct Response {
  int status = 200;
  nlohmann::json body;
  std::string content_type = "application/json";
  std::string bytes;

  static Response json(nlohmann::json j, int status = 200);
  static Response error(int status, const std::string& code, const std::string& message,
                        nlohmann::json details = nlohmann::json::object());
  static Response png(std::vector<std::uint8_t> data);
  std::string payload() const { return content_type == "application/json" ? body.dump() : bytes; }
};

struct Request {
  std::string method;
  std::string path;  // without the /api/v1 prefix
  std::map<std::string, std::string> query;
  std::string body;
};

// Everything readers see comes from one of these.
struct Snapshot {
  Checkpoint ckpt;
  std::string hash;  // content hash of the serialized checkpoint
  std::vector<std::uint8_t> bytes;
  int rounds_done = 0;
};

enum class JobState { Queued, Running, Done, Failed };
std::string to_string(JobState s);

struct Job {
  int id = 0;
  JobState state = JobState::Queued;
  double progress = 0;
  int epochs = 0;
  std::string error;
};

class Api {
 public:
  Api(Checkpoint ckpt, data::Dataset dataset, train::TrainConfig cfg);
  ~Api();
  Api(const Api&) = delete;
  Api& operator=(const Api&) = delete;

  Response handle(const Request& req);

  std::shared_ptr<const Snapshot> snapshot() const;
  // Blocks until no job is queued or running.
  void wait_idle();

 private:
  struct Metrics {
    std::vector<nlohmann::json> accuracy;  // {round, before, after}
    std::vector<int> nonobject;
    std::vector<train::EpochLoss> losses;
  };

  Response classes(const Snapshot& s) const;
  Response prototypes(const Snapshot& s, const Request& req) const;
  Response patch_png(const Snapshot& s, int id);
  Response heatmap(const Snapshot& s, int id, const Request& req, bool as_png);
  Response image_png(const Request& req) const;
  Response projection(const Snapshot& s);
  Response rejections(const Request& req);
  Response rounds(const Request& req);
  Response job(int id) const;
  Response metrics(const Snapshot& s) const;

  void publish(Checkpoint ckpt, int rounds_done);
  const data::ImageSample& image_or_throw(const std::string& id) const;
  void worker_loop();
  const std::vector<model::LatentGrid>& train_latents();
  const std::vector<model::LatentGrid>& test_latents();

  data::Dataset dataset_;
  train::TrainConfig cfg_;
  oracle::MaskOracle oracle_;

  mutable std::mutex mu_;  // guards snapshot_, pending_, jobs_, metrics_, caches
  std::condition_variable cv_;
  std::shared_ptr<const Snapshot> snapshot_;
  oracle::Verdicts pending_;
  std::map<int, Job> jobs_;
  std::optional<int> active_job_;
  int next_job_ = 1;
  bool stopping_ = false;
  Metrics metrics_;
  std::map<std::pair<std::string, int>, std::string> patch_cache_;
  std::map<std::string, nlohmann::json> projection_cache_;
  std::optional<std::vector<model::LatentGrid>> train_latents_, test_latents_;
  std::thread worker_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path static_dir;  // served under "/" when it exists
};

// /api/v1/* forwarded to the Api, the UI bundle (or a placeholder) under "/".
class HttpServer {
 public:
  // Binds immediately; throws dipa::Error if the address is taken.
  HttpServer(Api& api, const ServerOptions& opts);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int port() const { return port_; }
  void run();   // blocks until stop()
  void stop();  // callable from any thread

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

// Blocks serving HTTP until the process is stopped.
void serve(Api& api, const ServerOptions& opts);

}  // namespace dipa::service
