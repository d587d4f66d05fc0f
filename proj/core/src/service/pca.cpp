#include "dipa/service/pca.hpp"

#include <cmath>
#include <string>

#include "dipa/error.hpp"
#include "dipa/rng.hpp"

namespace dipa::service {

namespace {

constexpr int kMaxIterations = 200000;
constexpr double kTolerance = 1e-14;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Removes the span of `basis` from v and normalizes; false if nothing is left.
bool orthonormalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& b : basis) {
      const double c = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
    }
  const double norm = std::sqrt(dot(v, v));
  if (norm < 1e-300) return false;
  for (double& x : v) x /= norm;
  return true;
}

}  // namespace

Pca3 pca3(const std::vector<float>& vectors, int n, int dim) {
  return pca3(std::vector<double>(vectors.begin(), vectors.end()), n, dim);
}

Pca3 pca3(const std::vector<double>& x, int n, int dim) {
  if (n < 3) throw InvalidArgument("pca3: need at least 3 points, got " + std::to_string(n));
  if (dim < 1 || x.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(dim))
    throw ShapeError("pca3: expected " + std::to_string(n) + "x" + std::to_string(dim) + " values");
  const auto D = static_cast<std::size_t>(dim);
  Pca3 out;
  out.mean.assign(D, 0.0);
  for (int r = 0; r < n; ++r)
    for (std::size_t c = 0; c < D; ++c) out.mean[c] += x[static_cast<std::size_t>(r) * D + c];
  for (double& m : out.mean) m /= n;

  std::vector<double> cov(D * D, 0.0);
  for (int r = 0; r < n; ++r)
    for (std::size_t a = 0; a < D; ++a) {
      const double da = x[static_cast<std::size_t>(r) * D + a] - out.mean[a];
      for (std::size_t b = a; b < D; ++b) cov[a * D + b] += da * (x[static_cast<std::size_t>(r) * D + b] - out.mean[b]);
    }
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = a; b < D; ++b) {
      cov[a * D + b] /= (n - 1);
      cov[b * D + a] = cov[a * D + b];
    }

  auto apply = [&](const std::vector<double>& v) {
    std::vector<double> y(D, 0.0);
    for (std::size_t a = 0; a < D; ++a)
      for (std::size_t b = 0; b < D; ++b) y[a] += cov[a * D + b] * v[b];
    return y;
  };

  std::vector<std::vector<double>> basis;
  Rng rng(0x9CA3);
  out.components.assign(D, {0.0, 0.0, 0.0});
  for (int k = 0; k < 3 && static_cast<std::size_t>(k) < D; ++k) {
    std::vector<double> v(D);
    do {
      for (double& e : v) e = rng.normal();
    } while (!orthonormalize(v, basis));
    double lambda = 0;
    for (int it = 0; it < kMaxIterations; ++it) {
      // Deflation: iterating in the complement of found components.
      std::vector<double> y = apply(v);
      if (!orthonormalize(y, basis)) {
        lambda = 0;
        break;  // remaining spectrum is zero; any orthonormal v is an eigenvector
      }
      double change = 0;
      for (std::size_t i = 0; i < D; ++i) change = std::max(change, std::abs(y[i] - v[i]));
      v = std::move(y);
      lambda = dot(v, apply(v));
      if (change < kTolerance) break;
    }
    std::size_t big = 0;
    for (std::size_t i = 1; i < D; ++i)
      if (std::abs(v[i]) > std::abs(v[big])) big = i;
    if (v[big] < 0)
      for (double& e : v) e = -e;
    out.eigenvalues[static_cast<std::size_t>(k)] = std::max(lambda, 0.0);
    for (std::size_t i = 0; i < D; ++i) out.components[i][static_cast<std::size_t>(k)] = v[i];
    basis.push_back(std::move(v));
  }

  out.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0, 0.0});
  for (int r = 0; r < n; ++r)
    for (std::size_t k = 0; k < basis.size(); ++k) {
      double s = 0;
      for (std::size_t c = 0; c < D; ++c) s += (x[static_cast<std::size_t>(r) * D + c] - out.mean[c]) * basis[k][c];
      out.coords[static_cast<std::size_t>(r)][k] = s;
    }
  return out;
}

}  // namespace dipa::service
