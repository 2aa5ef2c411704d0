#pragma once
// PCA baseline: eigendecomposition of the d x d covariance with a
// deterministic sign convention (largest-magnitude coordinate of each
// component is positive). The eigensolver is cyclic Jacobi, which is exactly
// reproducible and accurate for symmetric matrices at the embedding widths
// this library targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"

namespace matadapt {

struct PcaModel {
  std::uint32_t d = 0;
  std::uint32_t m_max = 0;
  std::vector<double> mean;         // d
  std::vector<double> components;   // m_max x d row-major, orthonormal rows
  std::vector<double> eigenvalues;  // m_max, non-increasing
  // Set when fewer than m_max eigenvalues are meaningfully nonzero; the
  // trailing components are still returned (orthonormal, arbitrary within
  // the null space).
  bool rank_deficient = false;
};

namespace detail {

// Cyclic Jacobi for a symmetric matrix. `a` (d x d, row-major) is destroyed;
// eigenvalues land in `eigvals` and eigenvector j in column j of `vecs`.
inline void jacobi_eigh(std::vector<double>& a, std::size_t d, std::vector<double>& eigvals,
                        std::vector<double>& vecs) {
  vecs.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) vecs[i * d + i] = 1.0;

  auto off_diag_sq = [&]() {
    double s = 0.0;
    for (std::size_t p = 0; p < d; ++p)
      for (std::size_t q = p + 1; q < d; ++q) s += a[p * d + q] * a[p * d + q];
    return s;
  };

  double scale = 0.0;
  for (std::size_t i = 0; i < d * d; ++i) scale = std::max(scale, std::abs(a[i]));
  const double stop = std::max(scale * scale * 1e-30, 1e-300);

  for (int sweep = 0; sweep < 100 && off_diag_sq() > stop; ++sweep) {
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (std::abs(apq) <= scale * 1e-300) continue;
        const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < d; ++i) {
          const double aip = a[i * d + p], aiq = a[i * d + q];
          a[i * d + p] = c * aip - s * aiq;
          a[i * d + q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double api = a[p * d + i], aqi = a[q * d + i];
          a[p * d + i] = c * api - s * aqi;
          a[q * d + i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < d; ++i) {
          const double vip = vecs[i * d + p], viq = vecs[i * d + q];
          vecs[i * d + p] = c * vip - s * viq;
          vecs[i * d + q] = s * vip + c * viq;
        }
      }
    }
  }

  eigvals.resize(d);
  for (std::size_t i = 0; i < d; ++i) eigvals[i] = a[i * d + i];
}

}  // namespace detail

inline PcaModel pca_fit(const EmbeddingMatrix& corpus, std::uint32_t m_max) {
  const std::size_t n = corpus.size();
  const std::size_t d = corpus.dim;
  if (n == 0) throw CorpusTooSmall("pca_fit: empty corpus");
  if (m_max < 1 || m_max > std::min<std::size_t>(n, d))
    throw Error("pca_fit: m_max must be in [1, min(N, d)]");

  PcaModel model;
  model.d = static_cast<std::uint32_t>(d);
  model.m_max = m_max;

  model.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = corpus.row(i);
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += static_cast<double>(r[j]);
  }
  for (std::size_t j = 0; j < d; ++j) model.mean[j] /= static_cast<double>(n);

  // Sample covariance (1/(N-1)); N == 1 leaves the zero matrix.
  std::vector<double> cov(d * d, 0.0);
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = corpus.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = static_cast<double>(r[j]) - model.mean[j];
    for (std::size_t j = 0; j < d; ++j) {
      const double cj = centered[j];
      if (cj == 0.0) continue;
      double* row = cov.data() + j * d;
      for (std::size_t l = j; l < d; ++l) row[l] += cj * centered[l];
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t l = j; l < d; ++l) {
      cov[j * d + l] /= denom;
      cov[l * d + j] = cov[j * d + l];
    }

  std::vector<double> eigvals, vecs;
  detail::jacobi_eigh(cov, d, eigvals, vecs);

  std::vector<std::uint32_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (eigvals[a] != eigvals[b]) return eigvals[a] > eigvals[b];
    return a < b;
  });

  model.components.resize(static_cast<std::size_t>(m_max) * d);
  model.eigenvalues.resize(m_max);
  for (std::uint32_t c = 0; c < m_max; ++c) {
    const std::uint32_t src = order[c];
    model.eigenvalues[c] = eigvals[src];
    double* dst = model.components.data() + static_cast<std::size_t>(c) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = vecs[j * d + src];
    // Sign convention: flip so the largest-magnitude coordinate is positive
    // (first such coordinate on exact magnitude ties).
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t j = 0; j < d; ++j)
      if (std::abs(dst[j]) > best) {
        best = std::abs(dst[j]);
        arg = j;
      }
    if (dst[arg] < 0.0)
      for (std::size_t j = 0; j < d; ++j) dst[j] = -dst[j];
  }

  const double top = std::max(model.eigenvalues.empty() ? 0.0 : model.eigenvalues.front(), 0.0);
  std::uint32_t nonzero = 0;
  for (double ev : model.eigenvalues)
    if (ev > std::max(top, 1.0) * 1e-10) ++nonzero;
  model.rank_deficient = nonzero < m_max;
  return model;
}

namespace detail {

template <typename T>
void pca_transform_impl(const PcaModel& model, std::span<const T> x, std::size_t m,
                        std::span<double> out) {
  if (x.size() != model.d) throw DimMismatch("pca_transform: input dimension mismatch");
  if (m < 1 || m > model.m_max)
    throw PrefixOutOfRange("pca_transform: m=" + std::to_string(m) + " outside [1, " +
                           std::to_string(model.m_max) + "]");
  const std::size_t d = model.d;
  for (std::size_t c = 0; c < m; ++c) {
    const double* comp = model.components.data() + c * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      acc += comp[j] * (static_cast<double>(x[j]) - model.mean[j]);
    out[c] = acc;
  }
}

}  // namespace detail

inline std::vector<double> pca_transform(const PcaModel& model, std::span<const float> x,
                                         std::size_t m) {
  std::vector<double> out(m);
  detail::pca_transform_impl(model, x, m, out);
  return out;
}

inline std::vector<double> pca_transform(const PcaModel& model, std::span<const double> x,
                                         std::size_t m) {
  std::vector<double> out(m);
  detail::pca_transform_impl(model, x, m, out);
  return out;
}

}  // namespace matadapt
