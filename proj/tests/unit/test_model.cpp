#include <doctest.h>

#include <cmath>

#include "dipa/data/synthetic.hpp"
#include "dipa/error.hpp"
#include "dipa/model/geometry.hpp"
#include "dipa/model/protopnet.hpp"
#include "dipa/model/push.hpp"
#include "fixtures.hpp"
#include "reference.hpp"

using namespace dipa;
using namespace dipa::model;

namespace {

PrototypeSet make_protos(std::vector<float> v, int dim, std::vector<int> class_of, int K) {
  PrototypeSet p;
  const auto n = static_cast<std::int64_t>(class_of.size());
  p.vectors = ad::Value::parameter(ad::Tensor({n, dim}, std::move(v)));
  p.class_of = std::move(class_of);
  p.active.assign(p.class_of.size(), 1);
  p.num_classes = K;
  return p;
}

LatentGrid make_grid(int gh, int gw, int dim, std::vector<float> v) {
  LatentGrid g{gh, gw, dim, {}};
  g.cells = ad::Tensor({gh * gw, dim}, std::move(v));
  return g;
}

data::ImageSample blank_image(int h, int w, float value) {
  data::ImageSample s;
  s.id = "blank";
  s.pixels = ad::Tensor({3, h, w}, value);
  s.mask.height = h;
  s.mask.width = w;
  s.mask.bits.assign(static_cast<std::size_t>(h * w), 0);
  return s;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("encoder output is bounded and deterministic") {
  const ProtoPNet net(ModelConfig{}, 3);
  const auto& ds = fx::tiny_dataset();
  data::ImageSample img = blank_image(64, 64, 0.3f);
  img.pixels = ad::Tensor({3, 64, 64});
  Rng rng(1);
  for (auto& v : img.pixels.values()) v = static_cast<float>(rng.uniform());
  const auto a = net.encoder().encode(img);
  const auto b = net.encoder().encode(img);
  CHECK(a.cells == b.cells);
  CHECK(a.grid_height == 7);
  CHECK(a.dim == 32);
  for (float v : a.cells.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  (void)ds;
}

TEST_CASE("encoder maps a constant image to equal interior cells") {
  const ProtoPNet net(ModelConfig{}, 3);
  const auto g = net.encoder().encode(blank_image(64, 64, 0.0f));
  // Zero padding only touches the first row and column of each stride-2 level.
  for (int i = 1; i < 7; ++i)
    for (int j = 1; j < 7; ++j)
      for (int k = 0; k < g.dim; ++k) CHECK(g.cell(i, j)[k] == doctest::Approx(g.cell(1, 1)[k]).epsilon(1e-6));
}

TEST_CASE("prototype distances") {
  SUBCASE("closed form") {
    const auto p = make_protos({0, 0}, 2, {0}, 1);
    const auto d = prototype_distances(make_grid(1, 1, 2, {0.3f, 0.4f}), p);
    CHECK(d.d[0] == doctest::Approx(0.25f));
  }
  SUBCASE("exact match is zero") {
    const auto p = make_protos({0.2f, 0.7f}, 2, {0}, 1);
    const auto d = prototype_distances(make_grid(1, 2, 2, {0.1f, 0.1f, 0.2f, 0.7f}), p);
    CHECK(d.d[1] == 0.0f);
    CHECK(d.d[0] > 0.0f);
  }
  SUBCASE("random 3x3x4 grid against loops") {
    Rng rng(5);
    const auto cells = ref::uniform(rng, 36, 0, 1);
    const auto pv = ref::uniform(rng, 8, 0, 1);
    const auto p = make_protos(std::vector<float>(pv.begin(), pv.end()), 4, {0, 1}, 2);
    const auto d = prototype_distances(make_grid(3, 3, 4, std::vector<float>(cells.begin(), cells.end())), p);
    const auto r = ref::distances(cells, 1, 9, pv, 2, 4);
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 9; ++c) CHECK(std::abs(d.d[n * 9 + c] - r[static_cast<std::size_t>(c) * 2 + n]) < 1e-6);
  }
  SUBCASE("dimension mismatch") {
    const auto p = make_protos({0, 0, 0}, 3, {0}, 1);
    CHECK_THROWS_AS(prototype_distances(make_grid(1, 1, 2, {0, 0}), p), ShapeError);
  }
}

TEST_CASE("evidence values") {
  CHECK(similarity(0.0f, 1e-4f) == doctest::Approx(9.2103f).epsilon(1e-5));
  CHECK(similarity(1.0f, 1e-4f) == doctest::Approx(ref::sim(1.0, 1e-4)).epsilon(1e-6));
  CHECK(std::abs(similarity(1.0f, 1e-4f) - 0.69310f) < 1e-4);
  const float far = similarity(1e6f, 1e-4f);
  CHECK(far > 0.0f);
  CHECK(far < 1e-5f);
  DistanceMap d{1, 3, ad::Tensor({1, 1, 3}, {0.5f, 0.1f, 0.9f})};
  const auto ev = evidence(d, 1e-4f);
  CHECK(ev.argmax_cell[0] == std::pair{0, 1});
  CHECK(ev.max_score(0) == doctest::Approx(similarity(0.1f, 1e-4f)));
}

TEST_CASE("evidence strictly decreases with distance") {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const auto a = static_cast<float>(rng.uniform(0, 10)), b = static_cast<float>(rng.uniform(0, 10));
    if (a == b) continue;
    CHECK((similarity(std::min(a, b), 1e-4f) > similarity(std::max(a, b), 1e-4f)));
  }
}

TEST_CASE("classify") {
  SUBCASE("one active prototype with weight 1.2") {
    auto p = make_protos({0, 0, 0, 0, 0, 0}, 2, {0, 0, 1}, 2);
    p.active = {1, 0, 1};
    HeadWeights head{ad::Value::parameter(ad::Tensor({3, 2}, {1.2f, 0, 0.7f, 0.3f, 0, 0}))};
    EvidenceMap ev{1, 1, ad::Tensor({3, 1, 1}, {2.5f, 4.0f, 0.0f}), {{0, 0}, {0, 0}, {0, 0}}};
    const auto logits = classify(ev, head, p);
    CHECK(logits[0] == doctest::Approx(1.2f * 2.5f));
    SUBCASE("masked evidence has no effect") {
      ev.scores[1] = 123.0f;
      const auto again = classify(ev, head, p);
      CHECK(again == logits);
    }
  }
  SUBCASE("identity head reproduces max evidence") {
    const auto p = make_protos({0, 0}, 2, {0}, 1);
    HeadWeights head{ad::Value::parameter(ad::Tensor({1, 1}, {1.0f}))};
    EvidenceMap ev{1, 2, ad::Tensor({1, 1, 2}, {0.4f, 1.7f}), {{0, 1}}};
    CHECK(classify(ev, head, p)[0] == doctest::Approx(1.7f));
  }
  SUBCASE("scaling evidence scales logits") {
    Rng rng(2);
    auto p = make_protos({0, 0, 0, 0, 0, 0, 0, 0}, 2, {0, 0, 1, 1}, 2);
    ad::Tensor w({4, 2});
    for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-1, 1));
    HeadWeights head{ad::Value::parameter(w)};
    ad::Tensor s({4, 1, 2});
    for (auto& v : s.values()) v = static_cast<float>(rng.uniform(0, 5));
    EvidenceMap ev{1, 2, s, {}};
    for (int n = 0; n < 4; ++n) ev.argmax_cell.push_back({0, s[n * 2] >= s[n * 2 + 1] ? 0 : 1});
    const auto base = classify(ev, head, p);
    for (auto& v : ev.scores.values()) v *= 2.5f;
    const auto scaled = classify(ev, head, p);
    for (int k = 0; k < 2; ++k) CHECK(scaled[k] == doctest::Approx(2.5f * base[k]).epsilon(1e-5));
  }
  SUBCASE("a class without active prototypes is an error") {
    auto p = make_protos({0, 0, 0, 0}, 2, {0, 1}, 2);
    p.active = {1, 0};
    HeadWeights head{ad::Value::parameter(ad::Tensor({2, 2}))};
    EvidenceMap ev{1, 1, ad::Tensor({2, 1, 1}), {{0, 0}, {0, 0}}};
    CHECK_THROWS_AS(classify(ev, head, p), MaskExhaustedClass);
  }
}

TEST_CASE("head initialisation") {
  const ProtoPNet net(ModelConfig{}, 1);
  const auto& w = net.head().w.data();
  for (int n = 0; n < net.prototypes().size(); ++n)
    for (int k = 0; k < 6; ++k) CHECK(w[n * 6 + k] == (net.prototypes().class_of[n] == k ? 1.0f : -0.5f));
}

TEST_CASE("mask_prototypes") {
  ProtoPNet net(ModelConfig{}, 1);
  auto& p = net.prototypes();
  mask_prototypes(p, std::vector<int>{});
  CHECK(p.active_count() == 30);
  mask_prototypes(p, std::vector<int>{0, 7});
  CHECK(p.active_count() == 28);
  const auto before = p.active;
  CHECK_THROWS_AS(mask_prototypes(p, p.of_class(2)), MaskExhaustedClass);
  CHECK(p.active == before);
  try {
    mask_prototypes(p, p.of_class(4));
  } catch (const MaskExhaustedClass& e) {
    CHECK(e.class_id() == 4);
  }
  CHECK_THROWS_AS(mask_prototypes(p, std::vector<int>{30}), NotFound);
}

TEST_CASE("push") {
  const auto& ds = fx::tiny_dataset();
  ProtoPNet net(fx::tiny_config().model, 4);
  auto latents = net.encoder().encode_all(ds.train);
  auto& protos = net.prototypes();
  const auto report = push(protos, latents, ds.train);
  REQUIRE(report.records.size() == static_cast<std::size_t>(protos.size()));
  for (int n = 0; n < protos.size(); ++n) {
    const auto& rec = report.records[n];
    CHECK(rec.pushed());
    CHECK(ds.train[rec.image_index].label == protos.class_of[n]);
    CHECK(ds.train[rec.image_index].id == rec.image_id);
    const float* cell = latents[rec.image_index].cell(rec.cell_row, rec.cell_col);
    CHECK(std::equal(cell, cell + protos.dim(), protos.vector(n)));
    const auto ev = evidence(prototype_distances(latents[rec.image_index], protos), 1e-4f);
    CHECK(ev.scores[(n * 4 + rec.cell_row) * 4 + rec.cell_col] == doctest::Approx(std::log(1e4f)).epsilon(1e-6));
  }
  SUBCASE("pushing again changes nothing") {
    const auto vectors = protos.vectors.data();
    const auto again = push(protos, latents, ds.train, &report);
    CHECK(protos.vectors.data() == vectors);
    for (const auto& r : again.records) CHECK(r.distance_moved == 0.0f);
  }
  SUBCASE("inactive prototypes keep vector and record") {
    ProtoPNet other(fx::tiny_config().model, 9);
    other.prototypes().active[1] = 0;
    const auto v1 = std::vector<float>(other.prototypes().vector(1), other.prototypes().vector(1) + 8);
    const auto r = push(other.prototypes(), latents, ds.train, &report);
    CHECK(std::equal(v1.begin(), v1.end(), other.prototypes().vector(1)));
    CHECK(r.records[1].image_id == report.records[1].image_id);
  }
  SUBCASE("class without training images") {
    std::vector<data::ImageSample> only0;
    std::vector<LatentGrid> lat0;
    for (std::size_t i = 0; i < ds.train.size(); ++i)
      if (ds.train[i].label == 0) {
        only0.push_back(ds.train[i]);
        lat0.push_back(latents[i]);
      }
    CHECK_THROWS_AS(push(protos, lat0, only0), InvalidArgument);
  }
}

TEST_CASE("push ties go to the lowest image id and cell") {
  auto p = make_protos({0.5f, 0.5f}, 2, {0}, 1);
  std::vector<data::ImageSample> imgs(2, blank_image(4, 4, 0));
  imgs[0].id = "b";
  imgs[1].id = "a";
  // Both images hold the same two equidistant cells.
  const std::vector<LatentGrid> lat(2, make_grid(1, 2, 2, {0.4f, 0.5f, 0.6f, 0.5f}));
  const auto r = push(p, lat, imgs);
  CHECK(r.records[0].image_id == "a");
  CHECK(r.records[0].cell_col == 0);
}

TEST_CASE("patch_region") {
  CHECK(patch_region(0, 0, 7, 7, 224, 224) == PixelRect{0, 32, 0, 32});
  CHECK(patch_region(6, 6, 7, 7, 224, 224) == PixelRect{192, 224, 192, 224});
  CHECK(patch_region(0, 0, 7, 7, 64, 64) == PixelRect{0, 10, 0, 10});
  CHECK_THROWS_AS(patch_region(7, 0, 7, 7, 64, 64), InvalidArgument);
  CHECK_THROWS_AS(patch_region(0, -1, 7, 7, 64, 64), InvalidArgument);
  std::vector<int> cover(224 * 224, 0);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      const auto r = patch_region(i, j, 7, 7, 224, 224);
      for (int y = r.row0; y < r.row1; ++y)
        for (int x = r.col0; x < r.col1; ++x) ++cover[y * 224 + x];
    }
  CHECK(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));
}

TEST_CASE("upsample_heatmap") {
  SUBCASE("constant stays constant") {
    const auto up = upsample_heatmap(std::vector<float>(9, 2.5f), 3, 3, 12, 17);
    for (float v : up) CHECK(v == doctest::Approx(2.5f));
  }
  SUBCASE("2x2 checkerboard to 4x4 is 0.5 at the centre") {
    const auto up = upsample_heatmap(std::vector<float>{0, 1, 1, 0}, 2, 2, 4, 4);
    // The geometric centre lies between the four middle pixels.
    CHECK((up[5] + up[6] + up[9] + up[10]) / 4 == doctest::Approx(0.5f));
    CHECK(up[5] == doctest::Approx(0.375f));
    CHECK(up[6] == doctest::Approx(0.625f));
    const auto r = ref::bilinear({0, 1, 1, 0}, 2, 2, 4, 4);
    for (int i = 0; i < 16; ++i) CHECK(up[i] == doctest::Approx(r[i]));
  }
  SUBCASE("single hot cell peaks in its block centre") {
    std::vector<float> m(49, 0.0f);
    m[3 * 7 + 2] = 1.0f;
    const auto up = upsample_heatmap(m, 7, 7, 70, 70);
    const auto it = std::max_element(up.begin(), up.end());
    const int idx = static_cast<int>(it - up.begin());
    CHECK(idx / 70 >= 30);
    CHECK(idx / 70 < 40);
    CHECK(idx % 70 >= 20);
    CHECK(idx % 70 < 30);
    CHECK(*it <= 1.0f);
    CHECK(*it > 0.8f);
  }
  SUBCASE("random maps match the reference") {
    Rng rng(3);
    const auto m = ref::uniform(rng, 35, 0, 1);
    const auto up = upsample_heatmap(std::vector<float>(m.begin(), m.end()), 5, 7, 23, 41);
    const auto r = ref::bilinear(m, 5, 7, 23, 41);
    for (std::size_t i = 0; i < up.size(); ++i) CHECK(std::abs(up[i] - r[i]) < 1e-5);
  }
}

TEST_CASE("threshold_region") {
  std::vector<float> h(16, 0.0f);
  h[5] = 1.0f;
  h[6] = 0.8f;
  h[10] = 0.5f;
  const auto r = threshold_region(h, 4, 4);
  CHECK(r.pixels == 2);
  CHECK(r.bbox == PixelRect{1, 2, 1, 3});
}

}  // TEST_SUITE
