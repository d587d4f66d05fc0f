#include <doctest.h>

#include <Eigen/Dense>

#include "dipa/error.hpp"
#include "dipa/rng.hpp"
#include "dipa/service/pca.hpp"

using namespace dipa;
using dipa::service::pca3;

namespace {

std::vector<double> random_rows(Rng& rng, int n, int d) {
  std::vector<double> v(static_cast<std::size_t>(n * d));
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_SUITE("pca") {

TEST_CASE("matches a dense eigensolver on a random 10x5 matrix") {
  Rng rng(1);
  const int n = 10, d = 5;
  auto x = random_rows(rng, n, d);
  const auto got = pca3(x, n, d);
  Eigen::MatrixXd m = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(x.data(), n, d);
  const Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.transpose() * c / (n - 1));
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);
    const Eigen::VectorXd proj = c * v;
    // compare up to sign
    double dot = 0;
    for (int i = 0; i < n; ++i) dot += proj(i) * got.coords[i][k];
    const double s = dot < 0 ? -1 : 1;
    for (int i = 0; i < n; ++i) CHECK(std::abs(s * proj(i) - got.coords[i][k]) < 1e-4);
    CHECK(got.eigenvalues[k] == doctest::Approx(es.eigenvalues()(d - 1 - k)).epsilon(1e-8));
  }
  CHECK(got.eigenvalues[0] >= got.eigenvalues[1]);
  CHECK(got.eigenvalues[1] >= got.eigenvalues[2]);
  CHECK(got.mean.size() == 5);
}

TEST_CASE("points in a plane have no third component") {
  Rng rng(2);
  const int n = 12, d = 4;
  std::vector<double> x;
  for (int i = 0; i < n; ++i) {
    const double a = rng.normal(), b = rng.normal();
    x.insert(x.end(), {a + b, a - b, 2 * a, 0.5 * b});
  }
  const auto got = pca3(x, n, d);
  CHECK(std::abs(got.eigenvalues[2]) < 1e-10);
  CHECK(got.eigenvalues[1] > 0.1);
}

TEST_CASE("duplicating every point keeps the directions") {
  Rng rng(3);
  const int n = 8, d = 6;
  const auto x = random_rows(rng, n, d);
  auto xx = x;
  xx.insert(xx.end(), x.begin(), x.end());
  const auto a = pca3(x, n, d), b = pca3(xx, 2 * n, d);
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < d; ++j) CHECK(a.components[j][k] == doctest::Approx(b.components[j][k]).epsilon(1e-6));
}

TEST_CASE("sign convention puts the largest loading positive") {
  Rng rng(4);
  const auto got = pca3(random_rows(rng, 9, 5), 9, 5);
  for (int k = 0; k < 3; ++k) {
    double best = 0;
    for (int j = 0; j < 5; ++j)
      if (std::abs(got.components[j][k]) > std::abs(best)) best = got.components[j][k];
    CHECK(best > 0);
  }
}

TEST_CASE("low dimension pads with zeros") {
  const std::vector<float> x{0, 0, 1, 0, 0, 1, 1, 1};
  const auto got = pca3(x, 4, 2);
  CHECK(got.eigenvalues[2] == 0.0);
  for (const auto& c : got.coords) CHECK(c[2] == 0.0);
}

TEST_CASE("errors") {
  CHECK_THROWS_AS(pca3(std::vector<double>(4, 0.0), 2, 2), InvalidArgument);
  CHECK_THROWS_AS(pca3(std::vector<double>(5, 0.0), 3, 2), ShapeError);
}

}  // TEST_SUITE
