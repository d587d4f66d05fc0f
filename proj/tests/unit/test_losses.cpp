#include <doctest.h>

#include <cmath>

#include "dipa/error.hpp"
#include "dipa/losses.hpp"
#include "reference.hpp"

using namespace dipa;
using namespace dipa::loss;

namespace {

model::PrototypeSet protos_of(std::vector<float> v, int dim, std::vector<int> class_of, int K) {
  model::PrototypeSet p;
  const auto n = static_cast<std::int64_t>(class_of.size());
  p.vectors = ad::Value::parameter(ad::Tensor({n, dim}, std::move(v)));
  p.class_of = std::move(class_of);
  p.active.assign(p.class_of.size(), 1);
  p.num_classes = K;
  return p;
}

ad::Value mins(std::int64_t B, std::int64_t N, std::vector<float> v) {
  return ad::Value::parameter(ad::Tensor({B, N}, std::move(v)));
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("reject term") {
  SUBCASE("coinciding prototype and antitype") {
    const auto p = protos_of({0.3f, 0.6f}, 2, {0}, 1);
    AntitypeSet q(2);
    q.insert(std::vector<float>{0.3f, 0.6f}, {1, 0});
    CHECK(reject_term(p, q, 1e-4f).item() == doctest::Approx(9.2103f).epsilon(1e-4));
  }
  SUBCASE("all prototypes at squared distance 10") {
    // Both prototypes sit at distance^2 = 10 from the origin antitype.
    const auto p = protos_of({3.0f, 1.0f, 1.0f, 3.0f}, 2, {0, 1}, 2);
    AntitypeSet q(2);
    q.insert(std::vector<float>{0, 0}, {1, 0});
    CHECK(reject_term(p, q, 1e-4f).item() == doctest::Approx(std::log(11.0 / 10.0001)).epsilon(1e-5));
    CHECK(std::abs(reject_term(p, q, 1e-4f).item() - 0.09531) < 1e-5);
  }
  SUBCASE("empty set is zero") {
    const auto p = protos_of({0.3f, 0.6f}, 2, {0}, 1);
    CHECK(reject_term(p, AntitypeSet(2), 1e-4f).item() == 0.0f);
  }
  SUBCASE("only active prototypes are repelled") {
    auto p = protos_of({0.3f, 0.6f, 0.9f, 0.9f}, 2, {0, 0}, 1);
    AntitypeSet q(2);
    q.insert(std::vector<float>{0.3f, 0.6f}, {1, 0});
    p.active = {0, 1};
    CHECK(reject_term(p, q, 1e-4f).item() == doctest::Approx(ref::sim(0.36 + 0.09, 1e-4)).epsilon(1e-5));
  }
  SUBCASE("dimension mismatch") {
    const auto p = protos_of({0.3f, 0.6f}, 2, {0}, 1);
    AntitypeSet q(3);
    q.insert(std::vector<float>{0, 0, 0}, {1, 0});
    CHECK_THROWS_AS(reject_term(p, q, 1e-4f), ShapeError);
  }
}

TEST_CASE("con term") {
  const auto inside = con_term(protos_of({0.5f, 0.5f}, 2, {0}, 1));
  CHECK(inside.count == 0);
  CHECK(inside.surrogate.item() == 0.0f);
  const auto outside = con_term(protos_of({1.2f, -0.1f, 0.3f}, 3, {0}, 1));
  CHECK(outside.count == 2);
  CHECK(outside.surrogate.item() == doctest::Approx(0.05f));
  const auto edge = con_term(protos_of({0.0f, 1.0f}, 2, {0}, 1));
  CHECK(edge.count == 0);
}

TEST_CASE("clst term") {
  const auto p = protos_of({0, 0, 0, 0}, 2, {0, 1}, 2);
  SUBCASE("single sample, single own prototype") {
    // min over cells {0.5, 0.2, 0.9} is what forward hands us
    CHECK(clst_term(mins(1, 2, {0.2f, 3.0f}), std::vector<int>{0}, p).item() == doctest::Approx(0.2f));
  }
  SUBCASE("exact hit contributes zero") {
    CHECK(clst_term(mins(2, 2, {0.0f, 1.0f, 4.0f, 0.0f}), std::vector<int>{0, 1}, p).item() == 0.0f);
  }
  SUBCASE("class without active prototypes") {
    auto q = p;
    q.active = {1, 0};
    CHECK_THROWS_AS(clst_term(mins(1, 2, {1, 1}), std::vector<int>{1}, q), InvalidArgument);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(clst_term(mins(1, 3, {1, 1, 1}), std::vector<int>{1}, p), ShapeError);
  }
}

TEST_CASE("sep term") {
  const auto p = protos_of({0, 0, 0, 0, 0, 0}, 2, {0, 1, 1}, 2);
  CHECK(sep_term(mins(1, 3, {0.1f, 0.4f, 0.7f}), std::vector<int>{0}, p).item() == doctest::Approx(-0.4f));
  SUBCASE("farther rivals give a smaller value") {
    const float a = sep_term(mins(1, 3, {0.1f, 0.4f, 0.7f}), std::vector<int>{0}, p).item();
    const float b = sep_term(mins(1, 3, {0.1f, 0.9f, 1.2f}), std::vector<int>{0}, p).item();
    CHECK(b < a);
  }
  SUBCASE("needs two classes") {
    const auto one = protos_of({0, 0}, 2, {0}, 1);
    CHECK_THROWS_AS(sep_term(mins(1, 1, {0.1f}), std::vector<int>{0}, one), InvalidArgument);
  }
}

TEST_CASE("l1 term counts off-class weights only") {
  const auto p = protos_of({0, 0, 0, 0}, 2, {0, 1}, 2);
  model::HeadWeights zero{ad::Value::parameter(ad::Tensor({2, 2}))};
  CHECK(l1_term(zero, p).item() == 0.0f);
  model::HeadWeights h{ad::Value::parameter(ad::Tensor({2, 2}, {1.0f, -0.5f, -0.5f, 1.0f}))};
  CHECK(l1_term(h, p).item() == doctest::Approx(1.0f));
  model::HeadWeights on{ad::Value::parameter(ad::Tensor({2, 2}, {7.0f, 0.0f, 0.0f, -3.0f}))};
  CHECK(l1_term(on, p).item() == 0.0f);
}

TEST_CASE("total loss") {
  Rng rng(21);
  const ref::Problem prob = ref::random_problem(rng);
  ref::Bound b = ref::bind(prob);
  SUBCASE("zero weights leave cross-entropy alone") {
    LossWeights w;
    w.clst = w.sep = w.l1 = w.reject = w.con = 0;
    const auto fp = b.net.forward_rows(b.rows, prob.B);
    const auto l = total_loss(fp, prob.labels, b.net, b.antitypes, w);
    CHECK(l.total_value() == doctest::Approx(ad::softmax_cross_entropy(fp.logits, prob.labels).item()));
    CHECK(l.total_value() == doctest::Approx(l.crsent));
  }
  SUBCASE("weighted sum of the exported terms, equal to the reference") {
    LossWeights w;
    w.l1 = 0.01f;
    const auto fp = b.net.forward_rows(b.rows, prob.B);
    const auto l = total_loss(fp, prob.labels, b.net, b.antitypes, w);
    const double sum = l.crsent + w.clst * l.clst + w.sep * l.sep + w.l1 * l.l1 + w.reject * l.reject +
                       w.con * l.con_surrogate;
    CHECK(l.total_value() == doctest::Approx(sum).epsilon(1e-5));
    CHECK(l.total_value() == doctest::Approx(ref::total(prob, w)).epsilon(1e-5));
    CHECK(l.con_count == ref::con(prob.protos).count);
  }
  SUBCASE("negative weights are rejected") {
    LossWeights w;
    w.sep = -1;
    CHECK_THROWS_AS(w.validate(), InvalidArgument);
    w = LossWeights{};
    w.epsilon = 0;
    CHECK_THROWS_AS(w.validate(), InvalidArgument);
  }
}

TEST_CASE("antitype set") {
  AntitypeSet q;
  CHECK(q.insert(std::vector<float>{0.1f, 0.2f}, {1, 4}));
  CHECK_FALSE(q.insert(std::vector<float>{0.1f, 0.2f}, {2, 5}));
  CHECK(q.insert(std::vector<float>{0.1f, 0.3f}, {2, 5}));
  CHECK(q.size() == 2);
  CHECK(q.provenance(0) == AntitypeProvenance{1, 4});
  CHECK(q.contains(std::vector<float>{0.1f, 0.3f}));
  CHECK_THROWS_AS(q.insert(std::vector<float>{0.1f}, {3, 0}), ShapeError);
  CHECK(q.as_tensor().shape() == ad::Shape{2, 2});
}

TEST_CASE("reject reductions on a hand-made case") {
  // Two antitypes, two prototypes. Distances^2: row s, column j.
  const auto p = protos_of({0, 0, 1, 0}, 2, {0, 0}, 1);
  AntitypeSet q(2);
  q.insert(std::vector<float>{0.1f, 0}, {1, 0});
  q.insert(std::vector<float>{0.8f, 0}, {1, 1});
  const double c00 = ref::sim(0.01, 1e-4), c01 = ref::sim(0.81, 1e-4), c10 = ref::sim(0.64, 1e-4),
               c11 = ref::sim(0.04, 1e-4);
  CHECK(reject_term(p, q, 1e-4f, RejectReduction::PerAntitypeMax).item() ==
        doctest::Approx(std::max(c00, c01) + std::max(c10, c11)).epsilon(1e-5));
  CHECK(reject_term(p, q, 1e-4f, RejectReduction::PerPrototypeMax).item() ==
        doctest::Approx(std::max(c00, c10) + std::max(c01, c11)).epsilon(1e-5));
  CHECK(reject_term(p, q, 1e-4f, RejectReduction::GlobalMax).item() ==
        doctest::Approx(std::max({c00, c01, c10, c11})).epsilon(1e-5));
}

}  // TEST_SUITE
