#pragma once

#include <array>
#include <vector>

namespace dipa::service {

struct Pca3 {
  std::vector<std::array<double, 3>> coords;     // (N,3), centred
  std::array<double, 3> eigenvalues{};           // sample covariance, descending
  std::vector<std::array<double, 3>> components; // (D,3), unit columns
  std::vector<double> mean;                      // (D)
};

// Top three principal components of the rows of `vectors` (N x dim, row
// major) by power iteration with deflation. Each eigenvector is signed so its
// largest-magnitude entry is positive. Components beyond dim are zero.
// Throws InvalidArgument for N < 3.
Pca3 pca3(const std::vector<float>& vectors, int n, int dim);
Pca3 pca3(const std::vector<double>& vectors, int n, int dim);

}  // namespace dipa::service
