#include <doctest.h>

#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dipa/service/service.hpp"
#include "fixtures.hpp"

using namespace dipa;
using namespace dipa::service;
using nlohmann::json;

namespace {

Request get(std::string path, std::map<std::string, std::string> q = {}) { return {"GET", std::move(path), std::move(q), ""}; }
Request post(std::string path, const json& body) { return {"POST", std::move(path), {}, body.dump()}; }

Api make_api() { return Api(fx::tiny_pushed().clone(), fx::tiny_dataset(), fx::tiny_config().train); }

bool is_png(const Response& r) {
  return r.content_type == "image/png" && r.bytes.size() > 8 && r.bytes.compare(1, 3, "PNG") == 0;
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("read endpoints") {
  Api api = make_api();
  const auto& ckpt = fx::tiny_pushed();

  const auto classes = api.handle(get("/classes"));
  CHECK(classes.status == 200);
  CHECK(classes.body.size() == 2);
  CHECK(classes.body[0].at("prototype_ids").size() == 3);

  for (int k = 0; k < 2; ++k) {
    const auto r = api.handle(get("/prototypes", {{"class", std::to_string(k)}}));
    REQUIRE(r.status == 200);
    CHECK(r.body.size() == 3);
    for (const auto& p : r.body) {
      CHECK(p.at("class") == k);
      CHECK(p.contains("active"));
      CHECK(p.at("head_weights").size() == 2);
      CHECK(p.at("object_fraction").get<double>() >= 0.0);
    }
  }
  CHECK(api.handle(get("/prototypes")).body.size() == 6);
  CHECK(api.handle(get("/prototypes", {{"class", "9"}})).status == 404);
  CHECK(api.handle(get("/prototypes", {{"class", "x"}})).status == 400);

  CHECK(is_png(api.handle(get("/prototypes/0/patch.png"))));
  CHECK(api.handle(get("/prototypes/0/patch.png")).bytes == api.handle(get("/prototypes/0/patch.png")).bytes);
  CHECK(api.handle(get("/prototypes/99/patch.png")).status == 404);

  const auto hm = api.handle(get("/prototypes/1/heatmap"));
  REQUIRE(hm.status == 200);
  CHECK(hm.body.at("image") == ckpt.push.records[1].image_id);
  // pushed: its own source cell is the best match
  CHECK(hm.body.at("max_score").get<double>() == doctest::Approx(std::log(1e4)).epsilon(1e-5));
  CHECK(hm.body.at("argmax_cell") == json{ckpt.push.records[1].cell_row, ckpt.push.records[1].cell_col});
  CHECK(hm.body.at("threshold75_region").at("pixels").get<int>() > 0);
  const std::string other = fx::tiny_dataset().test[0].id;
  CHECK(api.handle(get("/prototypes/1/heatmap", {{"image", other}})).body.at("image") == other);
  CHECK(is_png(api.handle(get("/prototypes/1/heatmap.png", {{"image", other}}))));
  CHECK(api.handle(get("/prototypes/1/heatmap", {{"image", "nope"}})).status == 404);
  CHECK(is_png(api.handle(get("/images", {{"id", other}}))));
  CHECK(api.handle(get("/images")).status == 400);

  const auto proj = api.handle(get("/projection"));
  REQUIRE(proj.body.size() == 6);
  CHECK(proj.body[0].at("xyz").size() == 3);
  CHECK(proj.body[0].contains("object_fraction"));

  const auto m = api.handle(get("/metrics"));
  CHECK(m.body.at("rounds_done") == 0);
  CHECK(m.body.at("nonobject_counts").size() == 1);
  CHECK(m.body.at("overlap_histogram").at("counts").size() == 10);

  const auto bytes = api.handle(get("/checkpoint"));
  CHECK(bytes.content_type == "application/octet-stream");
  CHECK(std::vector<std::uint8_t>(bytes.bytes.begin(), bytes.bytes.end()) == serialize(ckpt));

  CHECK(api.handle(get("/nope")).status == 404);
  CHECK(api.handle(get("/jobs/5")).status == 404);
}

TEST_CASE("rejection requests") {
  Api api = make_api();
  const std::string h0 = api.snapshot()->hash;

  SUBCASE("empty list is a no-op") {
    const auto r = api.handle(post("/rejections", {{"ids", json::array()}, {"mode", "mask"}}));
    CHECK(r.status == 200);
    CHECK(r.body.at("accepted") == 0);
    CHECK(api.snapshot()->hash == h0);
  }
  SUBCASE("masking a whole class is a conflict naming the class") {
    const auto ids = api.handle(get("/classes")).body[1].at("prototype_ids");
    const auto r = api.handle(post("/rejections", {{"ids", ids}, {"mode", "mask"}}));
    CHECK(r.status == 409);
    CHECK(r.body.at("error") == "MaskExhaustedClass");
    CHECK(r.body.at("class_id") == 1);
    CHECK(api.snapshot()->hash == h0);
  }
  SUBCASE("masking flags the prototype inactive") {
    CHECK(api.handle(post("/rejections", {{"ids", {2}}, {"mode", "mask"}})).status == 200);
    CHECK(api.snapshot()->hash != h0);
    CHECK(api.handle(get("/prototypes")).body[2].at("active") == false);
  }
  SUBCASE("deselect requests are idempotent") {
    const auto a = api.handle(post("/rejections", {{"ids", {0, 4}}, {"mode", "deselect"}}));
    CHECK(a.body.at("antitypes_added") == 2);
    const std::string h1 = api.snapshot()->hash;
    const auto b = api.handle(post("/rejections", {{"ids", {4, 0}}, {"mode", "deselect"}}));
    CHECK(b.body.at("antitypes_added") == 0);
    CHECK(api.snapshot()->hash == h1);
  }
  SUBCASE("unknown ids") {
    CHECK(api.handle(post("/rejections", {{"ids", {42}}, {"mode", "mask"}})).status == 404);
  }
  SUBCASE("malformed bodies list the offending fields") {
    auto r = api.handle(post("/rejections", {{"mode", "erase"}}));
    CHECK(r.status == 400);
    CHECK(r.body.at("fields").contains("ids"));
    CHECK(r.body.at("fields").contains("mode"));
    r = api.handle(post("/rejections", {{"ids", {"a"}}, {"mode", "mask"}}));
    CHECK(r.body.at("fields").contains("ids"));
    CHECK(api.handle({"POST", "/rejections", {}, "{oops"}).status == 400);
    CHECK(api.handle(post("/rounds", {{"epochs", -1}})).status == 400);
  }
}

TEST_CASE("rounds through the API equal the batch driver") {
  const auto& ds = fx::tiny_dataset();
  const auto cfg = fx::tiny_config().train;
  oracle::MaskOracle oracle(ds);
  const auto ids = oracle::rejected_ids(oracle.consult(fx::tiny_pushed()));
  REQUIRE_FALSE(ids.empty());

  Api api = make_api();
  CHECK(api.handle(post("/rejections", {{"ids", ids}, {"mode", "deselect"}})).status == 200);
  const auto started = api.handle(post("/rounds", {{"epochs", cfg.deselect_epochs}}));
  CHECK(started.status == 202);
  api.wait_idle();
  const int job = started.body.at("job_id");
  const auto status = api.handle(get("/jobs/" + std::to_string(job)));
  CHECK(status.body.at("state") == "done");
  CHECK(status.body.at("progress") == 1.0);

  auto one = cfg;
  one.rounds = 1;
  const auto session = train::iterative_rejection(fx::tiny_pushed().clone(), ds, oracle, one);
  const auto served = api.handle(get("/checkpoint")).bytes;
  CHECK(std::vector<std::uint8_t>(served.begin(), served.end()) == serialize(session.state));

  const auto m = api.handle(get("/metrics")).body;
  CHECK(m.at("rounds_done") == 1);
  CHECK(m.at("accuracy_history").size() == 1);
  CHECK(m.at("nonobject_counts").size() == 2);
  CHECK(m.at("loss_terms").size() == static_cast<std::size_t>(cfg.deselect_epochs));
}

TEST_CASE("mutations conflict with a running job") {
  Api api = make_api();
  const auto started = api.handle(post("/rounds", {{"epochs", 3000}}));
  REQUIRE(started.status == 202);
  const auto again = api.handle(post("/rounds", json::object()));
  const auto reject = api.handle(post("/rejections", {{"ids", {1}}, {"mode", "mask"}}));
  const auto running = api.handle(get("/jobs/" + std::to_string(started.body.at("job_id").get<int>())));
  api.wait_idle();
  // The job may in principle finish before the second request lands.
  if (running.body.at("state") != "done") {
    CHECK(again.status == 409);
    CHECK(reject.status == 409);
  }
  CHECK(api.handle(post("/rounds", {{"epochs", 0}})).status == 202);
  api.wait_idle();
  CHECK(api.handle(get("/metrics")).body.at("rounds_done") == 2);
}

TEST_CASE("http transport") {
  Api api = make_api();
  fx::TempDir dir;
  SUBCASE("placeholder index") {
    HttpServer server(api, {"127.0.0.1", 0, {}});
    std::thread t([&] { server.run(); });
    httplib::Client cli("127.0.0.1", server.port());
    for (int i = 0; i < 100 && !cli.Get("/api/v1/classes"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    const auto classes = cli.Get("/api/v1/classes");
    REQUIRE(classes);
    CHECK(classes->status == 200);
    CHECK(json::parse(classes->body).size() == 2);
    const auto page = cli.Get("/");
    REQUIRE(page);
    CHECK(page->body.find("<html>") != std::string::npos);
    const auto bad = cli.Post("/api/v1/rejections", "{}", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    const auto png = cli.Get("/api/v1/prototypes/0/patch.png");
    REQUIRE(png);
    CHECK(png->get_header_value("Content-Type") == "image/png");
    server.stop();
    t.join();
  }
  SUBCASE("static bundle") {
    std::ofstream(dir.path / "index.html") << "<p>bundle</p>";
    HttpServer server(api, {"127.0.0.1", 0, dir.path});
    std::thread t([&] { server.run(); });
    httplib::Client cli("127.0.0.1", server.port());
    httplib::Result page;
    for (int i = 0; i < 100 && !(page = cli.Get("/index.html")); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    REQUIRE(page);
    CHECK(page->body == "<p>bundle</p>");
    server.stop();
    t.join();
  }
}

}  // TEST_SUITE
