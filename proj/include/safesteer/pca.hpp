#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "safesteer/trace_model.hpp"

namespace safesteer {

// Centroid plus the top principal directions of a hidden-state corpus.
// Components are stored column-major: column j occupies
// components[j * dim, (j + 1) * dim).
struct PcaModel {
  HiddenVec mean;
  std::vector<double> components;
  std::vector<double> explained_variance;

  std::size_t dim() const { return mean.size(); }
  std::size_t num_components() const { return explained_variance.size(); }
  std::span<const double> component(std::size_t j) const {
    return std::span<const double>(components).subspan(j * dim(), dim());
  }
  bool operator==(const PcaModel&) const = default;
};

// Eigen-decomposes the 1/N sample covariance with cyclic Jacobi and keeps the
// num_components leading eigenpairs. When the corpus has fewer points than
// dimensions the (smaller) Gram matrix is decomposed instead and the
// eigenvectors are mapped back; the eigenpairs are the same.
// Each column's largest-magnitude entry is made positive.
PcaModel fit_pca(std::span<const HiddenVec> corpus, std::size_t num_components);

// C^T (h - mean).
std::vector<double> project(const PcaModel& model, std::span<const double> h);

// Checks shapes, finiteness, orthonormality (1e-6) and variance ordering.
void validate(const PcaModel& model);

struct SymmetricEigen {
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // column-major n x n, column i pairs with values[i]
};

// Cyclic Jacobi eigensolver for a dense symmetric n x n matrix (row-major).
SymmetricEigen jacobi_eigen(std::vector<double> matrix, std::size_t n);

}  // namespace safesteer
