#include "dipa/service/service.hpp"

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>

#include "dipa/data/png.hpp"
#include "dipa/error.hpp"
#include "dipa/model/geometry.hpp"
#include "dipa/service/pca.hpp"

namespace dipa::service {

using nlohmann::json;

namespace {

const std::regex kPrototypeRoute(R"(/prototypes/(\d+)/(patch\.png|heatmap|heatmap\.png))");
const std::regex kJobRoute(R"(/jobs/(\d+))");

// Thrown by request validation; carries per-field diagnostics.
struct BadRequest {
  json fields;
};

int parse_id(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size() || v < 0 || v > 1'000'000'000) throw std::out_of_range(what);
    return static_cast<int>(v);
  } catch (const std::logic_error&) {
    throw BadRequest{{{what, "expected a non-negative integer, got '" + s + "'"}}};
  }
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw BadRequest{{{"body", "expected a JSON object"}}};
    return j;
  } catch (const json::parse_error& e) {
    throw BadRequest{{{"body", std::string("invalid JSON: ") + e.what()}}};
  }
}

data::Image8 to_image8(const ad::Tensor& px) {
  const int h = static_cast<int>(px.dim(1)), w = static_cast<int>(px.dim(2));
  data::Image8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.pixels[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>(
            std::lround(std::clamp(px[(static_cast<std::int64_t>(c) * h + y) * w + x], 0.0f, 1.0f) * 255.0f));
  return img;
}

json rect_json(const model::PixelRect& r) {
  return json{{"row0", r.row0}, {"row1", r.row1}, {"col0", r.col0}, {"col1", r.col1}};
}

}  // namespace

std::string to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "unknown";
}

Response Response::json(nlohmann::json j, int status) {
  Response r;
  r.status = status;
  r.body = std::move(j);
  return r;
}

Response Response::error(int status, const std::string& code, const std::string& message, nlohmann::json details) {
  nlohmann::json body{{"error", code}, {"message", message}};
  for (auto& [k, v] : details.items()) body[k] = v;
  return json(std::move(body), status);
}

Response Response::png(std::vector<std::uint8_t> data) {
  Response r;
  r.content_type = "image/png";
  r.bytes.assign(data.begin(), data.end());
  return r;
}

Api::Api(Checkpoint ckpt, data::Dataset dataset, train::TrainConfig cfg)
    : dataset_(std::move(dataset)), cfg_(std::move(cfg)), oracle_(dataset_) {
  cfg_.validate();
  if (ckpt.net.config().num_classes != dataset_.num_classes())
    throw InvalidArgument("checkpoint has " + std::to_string(ckpt.net.config().num_classes) +
                          " classes, dataset has " + std::to_string(dataset_.num_classes()));
  if (ckpt.push.records.empty()) train::push_checkpoint(ckpt, dataset_);
  int rounds_done = 0;
  try {
    const auto meta = json::parse(ckpt.meta_json);
    if (meta.value("stage", std::string()) == "round") rounds_done = meta.value("round", 0);
  } catch (const json::exception&) {
  }
  metrics_.nonobject.push_back(oracle_.non_object_count(ckpt));
  publish(std::move(ckpt), rounds_done);
  worker_ = std::thread([this] { worker_loop(); });
}

Api::~Api() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

namespace {

std::shared_ptr<Snapshot> make_snapshot(Checkpoint ckpt, int rounds_done) {
  auto s = std::make_shared<Snapshot>();
  s->bytes = serialize(ckpt);
  s->hash = content_hash(s->bytes);
  s->ckpt = std::move(ckpt);
  s->rounds_done = rounds_done;
  return s;
}

}  // namespace

void Api::publish(Checkpoint ckpt, int rounds_done) {
  auto s = make_snapshot(std::move(ckpt), rounds_done);
  std::lock_guard lock(mu_);
  snapshot_ = std::move(s);
}

std::shared_ptr<const Snapshot> Api::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_;
}

void Api::wait_idle() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return !active_job_.has_value(); });
}

Response Api::handle(const Request& req) {
  try {
    const auto snap = snapshot();
    std::smatch m;
    if (req.method == "GET") {
      if (req.path == "/classes") return classes(*snap);
      if (req.path == "/prototypes") return prototypes(*snap, req);
      if (std::regex_match(req.path, m, kPrototypeRoute)) {
        const int id = parse_id(m[1], "id");
        if (id >= snap->ckpt.net.prototypes().size()) throw NotFound("unknown prototype id " + std::to_string(id));
        if (m[2] == "patch.png") return patch_png(*snap, id);
        return heatmap(*snap, id, req, m[2] == "heatmap.png");
      }
      if (req.path == "/images") return image_png(req);
      if (req.path == "/projection") return projection(*snap);
      if (std::regex_match(req.path, m, kJobRoute)) return job(parse_id(m[1], "id"));
      if (req.path == "/metrics") return metrics(*snap);
      if (req.path == "/checkpoint") {
        Response r;
        r.content_type = "application/octet-stream";
        r.bytes.assign(snap->bytes.begin(), snap->bytes.end());
        return r;
      }
    } else if (req.method == "POST") {
      if (req.path == "/rejections") return rejections(req);
      if (req.path == "/rounds") return rounds(req);
    }
    return Response::error(404, "not_found", "no route for " + req.method + " " + req.path);
  } catch (const BadRequest& e) {
    return Response::error(400, "bad_request", "malformed request", {{"fields", e.fields}});
  } catch (const MaskExhaustedClass& e) {
    return Response::error(409, "MaskExhaustedClass", e.what(), {{"class_id", e.class_id()}});
  } catch (const NotFound& e) {
    return Response::error(404, "not_found", e.what());
  } catch (const InvalidArgument& e) {
    return Response::error(400, "bad_request", e.what());
  } catch (const std::exception& e) {
    return Response::error(500, "internal", e.what());
  }
}

Response Api::classes(const Snapshot& s) const {
  json out = json::array();
  const auto& protos = s.ckpt.net.prototypes();
  for (int k = 0; k < dataset_.num_classes(); ++k)
    out.push_back({{"id", k}, {"name", dataset_.class_names[static_cast<std::size_t>(k)]}, {"prototype_ids", protos.of_class(k)}});
  return Response::json(out);
}

Response Api::prototypes(const Snapshot& s, const Request& req) const {
  const auto& net = s.ckpt.net;
  const auto& protos = net.prototypes();
  std::optional<int> cls;
  if (auto it = req.query.find("class"); it != req.query.end()) {
    cls = parse_id(it->second, "class");
    if (*cls >= protos.num_classes) throw NotFound("unknown class " + it->second);
  }
  const auto K = net.head().w.shape()[1];
  const auto& enc = net.config().encoder;
  json out = json::array();
  for (int n = 0; n < protos.size(); ++n) {
    if (cls && protos.class_of[static_cast<std::size_t>(n)] != *cls) continue;
    const float* w = net.head().w.data().data() + n * K;
    json p{{"id", n},
           {"class", protos.class_of[static_cast<std::size_t>(n)]},
           {"active", protos.active[static_cast<std::size_t>(n)] != 0},
           {"head_weights", std::vector<float>(w, w + K)},
           {"patch_png_url", "/api/v1/prototypes/" + std::to_string(n) + "/patch.png"}};
    const auto& rec = s.ckpt.push.records.at(static_cast<std::size_t>(n));
    if (rec.pushed()) {
      p["source_image"] = rec.image_id;
      p["cell"] = {rec.cell_row, rec.cell_col};
      p["object_fraction"] = oracle_.overlap(rec, enc.grid_height, enc.grid_width).object_fraction;
    } else {
      p["source_image"] = nullptr;
      p["cell"] = nullptr;
    }
    out.push_back(std::move(p));
  }
  return Response::json(out);
}

const data::ImageSample& Api::image_or_throw(const std::string& id) const {
  const auto* img = dataset_.find(id);
  if (!img) throw NotFound("unknown image " + id);
  return *img;
}

Response Api::patch_png(const Snapshot& s, int id) {
  const auto key = std::make_pair(s.hash, id);
  {
    std::lock_guard lock(mu_);
    if (auto it = patch_cache_.find(key); it != patch_cache_.end()) {
      Response r;
      r.content_type = "image/png";
      r.bytes = it->second;
      return r;
    }
  }
  const auto& rec = s.ckpt.push.records.at(static_cast<std::size_t>(id));
  if (!rec.pushed()) throw NotFound("prototype " + std::to_string(id) + " has no source patch");
  const auto& img = image_or_throw(rec.image_id);
  const auto& enc = s.ckpt.net.config().encoder;
  const auto r = model::patch_region(rec.cell_row, rec.cell_col, enc.grid_height, enc.grid_width, img.height(),
                                     img.width());
  constexpr int scale = 4;
  const auto full = to_image8(img.pixels);
  data::Image8 crop{(r.col1 - r.col0) * scale, (r.row1 - r.row0) * scale, 3, {}};
  crop.pixels.resize(static_cast<std::size_t>(crop.width) * crop.height * 3);
  for (int y = 0; y < crop.height; ++y)
    for (int x = 0; x < crop.width; ++x)
      for (int c = 0; c < 3; ++c)
        crop.pixels[(static_cast<std::size_t>(y) * crop.width + x) * 3 + c] =
            full.pixels[(static_cast<std::size_t>(r.row0 + y / scale) * full.width + r.col0 + x / scale) * 3 + c];
  auto resp = Response::png(data::encode_png(crop));
  std::lock_guard lock(mu_);
  patch_cache_[key] = resp.bytes;
  return resp;
}

Response Api::heatmap(const Snapshot& s, int id, const Request& req, bool as_png) {
  std::string image_id;
  if (auto it = req.query.find("image"); it != req.query.end()) {
    image_id = it->second;
  } else {
    const auto& rec = s.ckpt.push.records.at(static_cast<std::size_t>(id));
    if (!rec.pushed()) throw BadRequest{{{"image", "required for a prototype that has no source image"}}};
    image_id = rec.image_id;
  }
  const auto& img = image_or_throw(image_id);
  const auto& net = s.ckpt.net;
  const auto grid = net.encoder().encode(img);
  const auto ev = model::evidence(model::prototype_distances(grid, net.prototypes()), net.config().epsilon);
  const int Hg = grid.grid_height, Wg = grid.grid_width, H = img.height(), W = img.width();
  const std::span<const float> map(ev.scores.data() + static_cast<std::int64_t>(id) * Hg * Wg,
                                   static_cast<std::size_t>(Hg * Wg));
  const auto up = model::upsample_heatmap(map, Hg, Wg, H, W);
  const auto region = model::threshold_region(up, H, W, 0.75f);
  if (!as_png) {
    const auto [i, j] = ev.argmax_cell[static_cast<std::size_t>(id)];
    return Response::json({{"png_url", "/api/v1/prototypes/" + std::to_string(id) + "/heatmap.png?image=" + image_id},
                           {"image", image_id},
                           {"max_score", ev.max_score(id)},
                           {"argmax_cell", {i, j}},
                           {"threshold75_region", {{"bbox", rect_json(region.bbox)}, {"pixels", region.pixels}}}});
  }
  // Image dimmed, heat in red, the 75% region tinted blue.
  auto out = to_image8(img.pixels);
  const float peak = *std::max_element(up.begin(), up.end());
  const float lo = *std::min_element(up.begin(), up.end());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float v = up[static_cast<std::size_t>(y) * W + x];
      const float t = peak > lo ? (v - lo) / (peak - lo) : 0.0f;
      auto* px = out.pixels.data() + (static_cast<std::size_t>(y) * W + x) * 3;
      const bool hot = v >= 0.75f * peak;
      const float add[3] = {255.0f * t, 0.0f, hot ? 160.0f : 0.0f};
      for (int c = 0; c < 3; ++c)
        px[c] = static_cast<std::uint8_t>(std::clamp(0.5f * px[c] + 0.5f * add[c], 0.0f, 255.0f));
    }
  return Response::png(data::encode_png(out));
}

Response Api::image_png(const Request& req) const {
  const auto it = req.query.find("id");
  if (it == req.query.end()) throw BadRequest{{{"id", "required"}}};
  return Response::png(data::encode_png(to_image8(image_or_throw(it->second).pixels)));
}

Response Api::projection(const Snapshot& s) {
  {
    std::lock_guard lock(mu_);
    if (auto it = projection_cache_.find(s.hash); it != projection_cache_.end()) return Response::json(it->second);
  }
  const auto& protos = s.ckpt.net.prototypes();
  const auto& enc = s.ckpt.net.config().encoder;
  const auto pca = pca3(protos.vectors.data().storage(), protos.size(), protos.dim());
  json out = json::array();
  for (int n = 0; n < protos.size(); ++n) {
    const auto& c = pca.coords[static_cast<std::size_t>(n)];
    json p{{"prototype_id", n},
           {"xyz", {c[0], c[1], c[2]}},
           {"class_id", protos.class_of[static_cast<std::size_t>(n)]},
           {"active", protos.active[static_cast<std::size_t>(n)] != 0}};
    const auto& rec = s.ckpt.push.records.at(static_cast<std::size_t>(n));
    if (rec.pushed()) p["object_fraction"] = oracle_.overlap(rec, enc.grid_height, enc.grid_width).object_fraction;
    out.push_back(std::move(p));
  }
  std::lock_guard lock(mu_);
  projection_cache_[s.hash] = out;
  return Response::json(out);
}

Response Api::rejections(const Request& req) {
  const json body = parse_body(req.body);
  json fields = json::object();
  std::vector<int> ids;
  if (!body.contains("ids") || !body.at("ids").is_array()) {
    fields["ids"] = "required array of prototype ids";
  } else {
    for (const auto& v : body.at("ids")) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        fields["ids"] = "every id must be a non-negative integer";
        break;
      }
      ids.push_back(v.get<int>());
    }
  }
  const std::string mode = body.value("mode", std::string());
  if (!body.contains("mode") || !body.at("mode").is_string()) fields["mode"] = "required: \"mask\" or \"deselect\"";
  else if (mode != "mask" && mode != "deselect") fields["mode"] = "must be \"mask\" or \"deselect\", got \"" + mode + "\"";
  if (!fields.empty()) throw BadRequest{fields};

  std::lock_guard lock(mu_);
  if (active_job_) return Response::error(409, "conflict", "a training job is running", {{"job_id", *active_job_}});
  const auto& current = *snapshot_;
  for (int n : ids)
    if (n >= current.ckpt.net.prototypes().size()) throw NotFound("unknown prototype id " + std::to_string(n));
  if (ids.empty()) return Response::json({{"accepted", 0}, {"antitypes_added", 0}});

  Checkpoint next = current.ckpt.clone();
  oracle::Verdicts verdicts;
  for (int n : ids) verdicts.push_back({n, true});
  int added = 0;
  if (mode == "mask") {
    train::mask_deselect(next.net.prototypes(), verdicts);
  } else {
    added = train::add_antitypes(next, verdicts, current.rounds_done + 1);
    std::set<int> merged;
    for (const auto& v : pending_) merged.insert(v.prototype);
    merged.insert(ids.begin(), ids.end());
    pending_.clear();
    for (int n : merged) pending_.push_back({n, true});
  }
  auto s = make_snapshot(std::move(next), current.rounds_done);
  if (s->hash != current.hash) snapshot_ = std::move(s);
  return Response::json({{"accepted", ids.size()}, {"antitypes_added", added}});
}

Response Api::rounds(const Request& req) {
  const json body = parse_body(req.body);
  int epochs = cfg_.deselect_epochs;
  if (body.contains("epochs")) {
    const auto& e = body.at("epochs");
    if (!e.is_number_integer() || e.get<long long>() < 0 || e.get<long long>() > 100000)
      throw BadRequest{{{"epochs", "must be an integer in [0, 100000]"}}};
    epochs = e.get<int>();
  }
  int id = 0;
  {
    std::lock_guard lock(mu_);
    if (active_job_) return Response::error(409, "conflict", "a training job is running", {{"job_id", *active_job_}});
    id = next_job_++;
    jobs_[id] = Job{id, JobState::Queued, 0.0, epochs, {}};
    active_job_ = id;
  }
  cv_.notify_all();
  return Response::json({{"job_id", id}}, 202);
}

Response Api::job(int id) const {
  std::lock_guard lock(mu_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw NotFound("unknown job " + std::to_string(id));
  json j{{"job_id", id}, {"state", to_string(it->second.state)}, {"progress", it->second.progress},
         {"epochs", it->second.epochs}};
  if (it->second.state == JobState::Failed) j["error"] = it->second.error;
  return Response::json(j);
}

Response Api::metrics(const Snapshot&) const {
  // Snapshot and metrics are swapped together under the lock.
  std::lock_guard lock(mu_);
  const Snapshot& s = *snapshot_;
  const auto hist = oracle_.overlap_histogram(s.ckpt);
  return Response::json({{"rounds_done", s.rounds_done},
                         {"checkpoint_hash", s.hash},
                         {"accuracy_history", metrics_.accuracy},
                         {"nonobject_counts", metrics_.nonobject},
                         {"overlap_histogram", {{"edges", hist.edges}, {"counts", hist.counts},
                                                 {"at_least_75", hist.at_least_75}}},
                         {"loss_terms", metrics_.losses}});
}

const std::vector<model::LatentGrid>& Api::train_latents() {
  // Rounds never touch the encoder, so one encoding serves every round.
  if (!train_latents_) train_latents_ = snapshot()->ckpt.net.encoder().encode_all(dataset_.train);
  return *train_latents_;
}

const std::vector<model::LatentGrid>& Api::test_latents() {
  if (!test_latents_) test_latents_ = snapshot()->ckpt.net.encoder().encode_all(dataset_.test);
  return *test_latents_;
}

void Api::worker_loop() {
  for (;;) {
    int id = 0, epochs = 0;
    oracle::Verdicts verdicts;
    std::shared_ptr<const Snapshot> base;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || active_job_.has_value(); });
      if (stopping_) return;
      id = *active_job_;
      jobs_[id].state = JobState::Running;
      epochs = jobs_[id].epochs;
      verdicts = std::move(pending_);
      pending_.clear();
      base = snapshot_;
    }
    try {
      Checkpoint state = base->ckpt.clone();
      const int round = base->rounds_done + 1;
      auto rec = train::run_round(state, verdicts, dataset_, train_latents(), test_latents(), cfg_, round,
                                  epochs, [this, id](double f) {
                                    std::lock_guard lock(mu_);
                                    jobs_[id].progress = f;
                                  });
      const int nonobject = oracle_.non_object_count(state);
      auto snap = make_snapshot(std::move(state), round);
      std::lock_guard lock(mu_);
      snapshot_ = std::move(snap);
      metrics_.accuracy.push_back({{"round", round}, {"before", rec.accuracy_before}, {"after", rec.accuracy_after}});
      metrics_.nonobject.push_back(nonobject);
      metrics_.losses.insert(metrics_.losses.end(), rec.losses.begin(), rec.losses.end());
      jobs_[id].state = JobState::Done;
      jobs_[id].progress = 1.0;
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      jobs_[id].state = JobState::Failed;
      jobs_[id].error = e.what();
      pending_ = verdicts;
    }
    {
      std::lock_guard lock(mu_);
      active_job_.reset();
    }
    cv_.notify_all();
  }
}

}  // namespace dipa::service
