#include "safesteer/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "safesteer/error.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kRankTolerance = 1e-10;  // relative to the top eigenvalue

[[noreturn]] void fit_error(const std::string& msg) { throw Error(ErrorKind::Numeric, "fit_pca: " + msg); }

void make_sign_canonical(std::span<double> column) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < column.size(); ++i) {
    if (std::abs(column[i]) > std::abs(column[best])) best = i;
  }
  if (column[best] < 0) {
    for (double& x : column) x = -x;
  }
}

}  // namespace

SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw Error(ErrorKind::Dimension, "jacobi_eigen: matrix is not n x n");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [&](std::size_t r, std::size_t c) -> double& { return a[r * n + c]; };
  // v is accumulated row-major here (v[r * n + c], column c is an eigenvector).
  auto vat = [&](std::size_t r, std::size_t c) -> double& { return v[r * n + c]; };

  double frob = 0.0;
  for (double x : a) frob += x * x;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * at(p, q) * at(p, q);
    }
    if (off == 0.0 || off <= 1e-30 * frob) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        double t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        if (theta < 0.0) t = -t;
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        at(p, p) -= t * apq;
        at(q, q) += t * apq;
        at(p, q) = 0.0;
        at(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = at(p, k) = c * akp - s * akq;
          at(k, q) = at(q, k) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vat(k, p);
          const double vkq = vat(k, q);
          vat(k, p) = c * vkp - s * vkq;
          vat(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return at(i, i) > at(j, j); });

  SymmetricEigen out;
  out.values.reserve(n);
  out.vectors.resize(n * n);
  for (std::size_t col = 0; col < n; ++col) {
    const std::size_t src = order[col];
    out.values.push_back(at(src, src));
    for (std::size_t r = 0; r < n; ++r) out.vectors[col * n + r] = vat(r, src);
  }
  return out;
}

PcaModel fit_pca(std::span<const HiddenVec> corpus, std::size_t num_components) {
  if (num_components == 0) throw Error(ErrorKind::Usage, "fit_pca: num_components must be positive");
  const std::size_t n = corpus.size();
  if (n < 2) fit_error("corpus needs at least 2 vectors, got " + std::to_string(n));
  const std::size_t d = corpus.front().size();
  for (const auto& h : corpus) {
    vec::require_same_dim(h.size(), d, "fit_pca");
    if (!vec::all_finite(h)) throw Error(ErrorKind::Validation, "fit_pca: non-finite entry");
  }
  if (num_components > std::min(d, n - 1)) {
    fit_error("requested " + std::to_string(num_components) + " components but at most " +
              std::to_string(std::min(d, n - 1)) + " are achievable (dim " + std::to_string(d) +
              ", " + std::to_string(n) + " points)");
  }

  PcaModel model;
  model.mean.assign(d, 0.0);
  for (const auto& h : corpus) {
    for (std::size_t i = 0; i < d; ++i) model.mean[i] += h[i];
  }
  for (double& x : model.mean) x /= static_cast<double>(n);

  // Centered data, row-major n x d.
  std::vector<double> xc(n * d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) xc[r * d + i] = corpus[r][i] - model.mean[i];
  }

  const bool use_gram = n < d;
  const std::size_t m = use_gram ? n : d;
  std::vector<double> sym(m * m, 0.0);
  if (use_gram) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a; b < n; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += xc[a * d + i] * xc[b * d + i];
        sym[a * n + b] = sym[b * n + a] = s / static_cast<double>(n);
      }
    }
  } else {
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = &xc[r * d];
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) sym[i * d + j] += row[i] * row[j];
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        sym[i * d + j] /= static_cast<double>(n);
        sym[j * d + i] = sym[i * d + j];
      }
    }
  }

  const SymmetricEigen eig = jacobi_eigen(std::move(sym), m);
  const double top = eig.values.empty() ? 0.0 : eig.values.front();
  std::size_t rank = 0;
  if (top > 0.0) {
    for (double lambda : eig.values) {
      if (lambda > kRankTolerance * top) ++rank;
    }
  }
  if (rank < num_components) {
    fit_error("covariance has achievable rank " + std::to_string(rank) + ", below the " +
              std::to_string(num_components) + " requested components");
  }

  model.components.assign(d * num_components, 0.0);
  model.explained_variance.assign(eig.values.begin(), eig.values.begin() + num_components);
  for (std::size_t j = 0; j < num_components; ++j) {
    std::span<double> col(model.components.data() + j * d, d);
    std::span<const double> ev(eig.vectors.data() + j * m, m);
    if (use_gram) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < d; ++i) col[i] += xc[r * d + i] * ev[r];
      }
      const double len = vec::norm(col);
      for (double& x : col) x /= len;
    } else {
      std::copy(ev.begin(), ev.end(), col.begin());
    }
    make_sign_canonical(col);
  }
  return model;
}

std::vector<double> project(const PcaModel& model, std::span<const double> h) {
  vec::require_same_dim(h.size(), model.dim(), "project");
  const std::size_t d = model.dim();
  std::vector<double> centered = vec::sub(h, model.mean);
  std::vector<double> out(model.num_components());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = vec::dot(model.component(j), std::span<const double>(centered.data(), d));
  }
  return out;
}

void validate(const PcaModel& model) {
  const std::size_t d = model.dim();
  const std::size_t m = model.num_components();
  if (d == 0 || m == 0) throw Error(ErrorKind::Validation, "pca: empty model");
  if (model.components.size() != d * m) {
    throw Error(ErrorKind::Dimension, "pca: components size does not equal dim * num_components");
  }
  if (!vec::all_finite(model.mean) || !vec::all_finite(model.components) ||
      !vec::all_finite(model.explained_variance)) {
    throw Error(ErrorKind::Validation, "pca: non-finite parameter");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (model.explained_variance[i] < 0.0 ||
        (i > 0 && model.explained_variance[i] > model.explained_variance[i - 1])) {
      throw Error(ErrorKind::Validation, "pca: explained_variance must be nonnegative and nonincreasing");
    }
    for (std::size_t j = i; j < m; ++j) {
      const double g = vec::dot(model.component(i), model.component(j));
      const double expected = i == j ? 1.0 : 0.0;
      if (std::abs(g - expected) > 1e-6) {
        throw Error(ErrorKind::Validation, "pca: components are not orthonormal");
      }
    }
  }
}

}  // namespace safesteer
