#include "tvmerge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tvmerge::linalg {

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions disagree");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

double dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dot: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch");
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

void scale_inplace(Matrix& a, double s) {
  for (double& v : a.data) v *= s;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data.begin(), a.data.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

// One-sided Jacobi on the columns of w (rows >= cols). Accumulates the
// right rotations into v.
void jacobi_orthogonalize(Matrix& w, Matrix& v) {
  const std::size_t m = w.rows, n = w.cols;
  const std::size_t sweep_cap = 100 * n;
  const double tol = 1e-15;

  for (std::size_t sweep = 0; sweep < sweep_cap; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;

        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw std::runtime_error("svd: Jacobi sweeps did not converge");
}

// Fills any zero-norm column of u with a unit vector orthogonal to the
// other columns (Gram-Schmidt over canonical basis vectors).
void complete_orthonormal_basis(Matrix& u, const std::vector<bool>& filled) {
  const std::size_t m = u.rows, n = u.cols;
  for (std::size_t j = 0; j < n; ++j) {
    if (filled[j]) continue;
    for (std::size_t cand = 0; cand < m; ++cand) {
      std::vector<double> vec(m, 0.0);
      vec[cand] = 1.0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == j || (!filled[k] && k > j)) continue;
        double proj = 0.0;
        for (std::size_t i = 0; i < m; ++i) proj += vec[i] * u(i, k);
        for (std::size_t i = 0; i < m; ++i) vec[i] -= proj * u(i, k);
      }
      double norm = 0.0;
      for (double x : vec) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = vec[i] / norm;
        break;
      }
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& a) {
  if (a.rows == 0 || a.cols == 0)
    throw std::invalid_argument("svd: empty matrix");
  if (!all_finite(a)) throw std::invalid_argument("svd: non-finite input");

  const bool transposed = a.rows < a.cols;
  Matrix w = transposed ? transpose(a) : a;
  const std::size_t m = w.rows, n = w.cols;

  Matrix v = identity(n);
  jacobi_orthogonalize(w, v);

  // Column norms are the singular values; sort nonincreasing.
  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  Matrix u_sorted(m, n), v_sorted(n, n);
  std::vector<double> sigma_sorted(n);
  std::vector<bool> filled(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    sigma_sorted[j] = sigma[src];
    if (sigma[src] > 0.0) {
      filled[j] = true;
      for (std::size_t i = 0; i < m; ++i) u_sorted(i, j) = w(i, src) / sigma[src];
    }
    for (std::size_t i = 0; i < n; ++i) v_sorted(i, j) = v(i, src);
  }
  complete_orthonormal_basis(u_sorted, filled);

  // Sign convention: largest-magnitude entry of each U column positive.
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double mag = std::abs(u_sorted(i, j));
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (u_sorted(arg, j) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) u_sorted(i, j) = -u_sorted(i, j);
      for (std::size_t i = 0; i < n; ++i) v_sorted(i, j) = -v_sorted(i, j);
    }
  }

  SvdResult out;
  if (transposed) {
    out.u = std::move(v_sorted);
    out.v = std::move(u_sorted);
  } else {
    out.u = std::move(u_sorted);
    out.v = std::move(v_sorted);
  }
  out.singular_values = std::move(sigma_sorted);
  return out;
}

Matrix gaussian_smooth_2d(const Matrix& grid, double sigma) {
  if (grid.rows == 0 || grid.cols == 0)
    throw std::invalid_argument("gaussian_smooth_2d: empty grid");
  if (sigma < 0.0)
    throw std::invalid_argument("gaussian_smooth_2d: sigma must be >= 0");
  if (sigma == 0.0) return grid;

  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (long d = -radius; d <= radius; ++d)
    kernel[d + radius] = std::exp(-0.5 * (double(d) * double(d)) / (sigma * sigma));

  const long rows = static_cast<long>(grid.rows);
  const long cols = static_cast<long>(grid.cols);
  Matrix out(grid.rows, grid.cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) {
      double acc = 0.0, wsum = 0.0;
      for (long di = -radius; di <= radius; ++di) {
        const long ii = i + di;
        if (ii < 0 || ii >= rows) continue;
        for (long dj = -radius; dj <= radius; ++dj) {
          const long jj = j + dj;
          if (jj < 0 || jj >= cols) continue;
          const double wgt = kernel[di + radius] * kernel[dj + radius];
          acc += wgt * grid(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
          wsum += wgt;
        }
      }
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc / wsum;
    }
  }
  return out;
}

}  // namespace tvmerge::linalg
