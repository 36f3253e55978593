#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cssr/errors.hpp"
#include "cssr/rng.hpp"

namespace cssr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MeasurementMatrix {
  Matrix entries;
  std::uint64_t seed = 0;

  int rows() const { return static_cast<int>(entries.rows()); }
  int cols() const { return static_cast<int>(entries.cols()); }
  double sampling_rate() const { return static_cast<double>(rows()) / cols(); }
};

/// m x n matrix of i.i.d. N(0, 1/m) entries, filled row by row from Rng(seed).
inline MeasurementMatrix gaussian_matrix(int m, int n, std::uint64_t seed) {
  if (m < 1 || n < 1) throw InvalidArgument("measurement matrix dimensions must be positive");
  if (m > n) throw InvalidArgument("measurement matrix needs m <= n");
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  MeasurementMatrix phi{Matrix(m, n), seed};
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) phi.entries(i, j) = scale * rng.normal();
  return phi;
}

struct SparseCode {
  Vector coefficients;
  std::vector<int> support;  // ascending indices of nonzero coefficients
  double residualNorm = 0.0;
  int iterations = 0;
  std::vector<double> objectiveTrace;  // per accepted iteration (ISTA only)
};

inline std::vector<int> support_of(const Vector& a) {
  std::vector<int> s;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != 0.0) s.push_back(static_cast<int>(i));
  return s;
}

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from a
/// fixed, non-degenerate start vector.
inline double largest_eigenvalue(const Matrix& sym, int steps = 50) {
  const Eigen::Index n = sym.rows();
  if (n == 0) return 0.0;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
  v.normalize();
  double lambda = 0.0;
  for (int s = 0; s < steps; ++s) {
    Vector w = sym * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    lambda = v.dot(w);
    v = w / norm;
  }
  return std::max(lambda, (sym * v).norm());
}

// --- greedy l0 surrogate -------------------------------------------------------

/// Orthogonal matching pursuit. Each step picks the column whose normalized
/// correlation |a_j^T r| / |a_j| with the residual is largest (lowest index
/// on ties), then re-fits least squares on the whole support.
inline SparseCode omp_solve(const Matrix& A, const Vector& y, int maxSparsity, double residualTol) {
  if (A.rows() != y.size()) throw InvalidArgument("omp_solve: dimension mismatch");
  if (maxSparsity < 0 || maxSparsity > A.rows()) throw InvalidArgument("omp_solve: maxSparsity out of range");
  const Vector norms = A.colwise().norm();
  for (Eigen::Index j = 0; j < norms.size(); ++j)
    if (norms[j] == 0.0) throw InvalidArgument("omp_solve: dictionary has a zero column");

  SparseCode out;
  out.coefficients = Vector::Zero(A.cols());
  Vector residual = y;
  out.residualNorm = residual.norm();
  const double floor = 1e-14 * std::max(1.0, y.norm());
  std::vector<int> support;
  std::vector<char> chosen(A.cols(), 0);
  Vector x;

  while (static_cast<int>(support.size()) < maxSparsity && out.residualNorm > residualTol) {
    const Vector corr = (A.transpose() * residual).cwiseQuotient(norms);
    int best = -1;
    double best_val = -1.0;
    for (Eigen::Index j = 0; j < corr.size(); ++j) {
      if (chosen[j]) continue;
      const double v = std::abs(corr[j]);
      if (v > best_val) {
        best_val = v;
        best = static_cast<int>(j);
      }
    }
    if (best < 0 || best_val <= floor) break;
    support.push_back(best);
    chosen[best] = 1;

    Matrix sub(A.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t k = 0; k < support.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(support[k]);
    Eigen::ColPivHouseholderQR<Matrix> qr(sub);
    if (qr.rank() < static_cast<Eigen::Index>(support.size())) {
      std::string s;
      for (int i : support) s += (s.empty() ? "" : ",") + std::to_string(i);
      throw RankDeficiencyError("omp_solve: least-squares subproblem is singular on support {" + s + "}",
                                support);
    }
    x = qr.solve(y);
    residual = y - sub * x;
    out.residualNorm = residual.norm();
    ++out.iterations;
  }
  for (std::size_t k = 0; k < support.size(); ++k) out.coefficients[support[k]] = x[static_cast<Eigen::Index>(k)];
  out.support = support_of(out.coefficients);
  return out;
}

/// OMP driven by a precomputed Gram matrix (Batch-OMP). Intended for many
/// signals against one dictionary with unit-norm columns. Takes the
/// correlations D^T y and |y|^2 and never forms the residual.
inline SparseCode omp_solve_gram(const Matrix& gram, const Vector& correlations, double energy, int maxSparsity,
                                 double residualTol) {
  const Eigen::Index k_atoms = gram.rows();
  SparseCode out;
  out.coefficients = Vector::Zero(k_atoms);
  double res2 = energy;
  out.residualNorm = std::sqrt(std::max(0.0, res2));
  const double floor = 1e-14 * std::max(1.0, std::sqrt(std::max(0.0, energy)));
  std::vector<int> support;
  std::vector<char> chosen(k_atoms, 0);
  Vector current = correlations;  // D^T r
  Vector x;
  while (static_cast<int>(support.size()) < maxSparsity && out.residualNorm > residualTol) {
    int best = -1;
    double best_val = -1.0;
    for (Eigen::Index j = 0; j < k_atoms; ++j) {
      if (chosen[j]) continue;
      const double v = std::abs(current[j]);
      if (v > best_val) {
        best_val = v;
        best = static_cast<int>(j);
      }
    }
    if (best < 0 || best_val <= floor) break;
    support.push_back(best);
    chosen[best] = 1;
    const auto s = static_cast<Eigen::Index>(support.size());
    Matrix gss(s, s);
    Vector rhs(s);
    for (Eigen::Index a = 0; a < s; ++a) {
      rhs[a] = correlations[support[a]];
      for (Eigen::Index b = 0; b < s; ++b) gss(a, b) = gram(support[a], support[b]);
    }
    Eigen::LDLT<Matrix> ldlt(gss);
    const Vector d = ldlt.vectorD();
    if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff())) {
      throw RankDeficiencyError("omp_solve_gram: singular support", support);
    }
    x = ldlt.solve(rhs);
    current = correlations;
    for (Eigen::Index a = 0; a < s; ++a) current.noalias() -= gram.col(support[a]) * x[a];
    res2 = energy - x.dot(rhs);
    out.residualNorm = std::sqrt(std::max(0.0, res2));
    ++out.iterations;
  }
  for (std::size_t k = 0; k < support.size(); ++k) out.coefficients[support[k]] = x[static_cast<Eigen::Index>(k)];
  out.support = support_of(out.coefficients);
  return out;
}

// --- l1 surrogate: iterative shrinkage-thresholding -------------------------------

struct IstaOptions {
  double lambda = 0.1;
  int maxIter = 1000;
  double tol = 1e-8;
  bool recordObjective = false;
  bool accelerated = false;  // monotone FISTA instead of plain ISTA
};

/// Minimizes 1/2 a^T Q a - b^T a + c + lambda |a|_1 for symmetric PSD Q by
/// ISTA with step 1/L. L must bound the largest eigenvalue of Q; if an
/// accepted step would raise the objective (rounding, or an underestimated
/// L) the step is retried with L doubled, so accepted iterates never
/// increase the objective. Stops when the largest coefficient change is
/// below tol.
namespace detail {

/// Q (to - from) added to base, using column updates when the difference is sparse.
template <class GramOp>
Vector gram_update(const GramOp& Q, const Vector& base, const Vector& diff) {
  Vector out = base;
  Eigen::Index changed = 0;
  for (Eigen::Index i = 0; i < diff.size(); ++i) changed += diff[i] != 0.0;
  if (changed * 4 > diff.size()) {
    out += Q.apply(diff);
  } else {
    for (Eigen::Index i = 0; i < diff.size(); ++i)
      if (diff[i] != 0.0) Q.add_column(i, diff[i], out);
  }
  return out;
}

/// Monotone FISTA: the momentum point may raise the objective, but the
/// returned iterate only moves when the proximal step improves on it.
/// Stops when the proximal step from the momentum point moves less than tol.
template <class GramOp>
SparseCode solve_quadratic_l1_accelerated(const GramOp& Q, const Vector& b, double c, double L,
                                          const IstaOptions& opt, const Vector* warm) {
  const Eigen::Index n = b.size();
  SparseCode out;
  Vector x = warm ? *warm : Vector::Zero(n);
  Vector qx = Q.apply(x);
  auto objective = [&](const Vector& a, const Vector& qa) {
    return 0.5 * a.dot(qa) - b.dot(a) + c + opt.lambda * a.lpNorm<1>();
  };
  double fx = objective(x, qx);
  if (!(L > 0.0)) L = 1.0;
  if (opt.recordObjective) out.objectiveTrace.push_back(fx);
  Vector y = x, qy = qx, xPrev = x, qxPrev = qx, z(n);
  double t = 1.0;
  const double step = 1.0 / L, thresh = opt.lambda / L;
  for (int it = 0; it < opt.maxIter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = soft_threshold(y[i] - step * (qy[i] - b[i]), thresh);
    const Vector qz = gram_update(Q, qy, z - y);
    const double fz = objective(z, qz);
    if (!std::isfinite(fz) || !z.allFinite()) throw DivergenceError("accelerated ISTA produced non-finite values");
    const double move = (z - y).lpNorm<Eigen::Infinity>();
    xPrev = x;
    qxPrev = qx;
    if (fz <= fx) {
      x = z;
      qx = qz;
      fx = fz;
    }
    ++out.iterations;
    if (opt.recordObjective) out.objectiveTrace.push_back(fx);
    if (move < opt.tol) break;
    const double tNext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double a = t / tNext, bcoef = (t - 1.0) / tNext;
    y = x + a * (z - x) + bcoef * (x - xPrev);
    qy = qx + a * (qz - qx) + bcoef * (qx - qxPrev);
    t = tNext;
  }
  out.residualNorm = std::sqrt(std::max(0.0, 2.0 * (fx - opt.lambda * x.lpNorm<1>())));
  out.coefficients = std::move(x);
  out.support = support_of(out.coefficients);
  return out;
}

}  // namespace detail

template <class GramOp>
SparseCode solve_quadratic_l1_op(const GramOp& Q, const Vector& b, double c, double L, const IstaOptions& opt,
                                 const Vector* warm = nullptr) {
  if (!(opt.lambda > 0.0)) throw InvalidArgument("ISTA needs lambda > 0");
  if (opt.accelerated) return detail::solve_quadratic_l1_accelerated(Q, b, c, L, opt, warm);
  const Eigen::Index n = b.size();
  SparseCode out;
  Vector alpha = warm ? *warm : Vector::Zero(n);
  Vector g = Q.apply(alpha);
  auto objective = [&](const Vector& a, const Vector& qa) {
    return 0.5 * a.dot(qa) - b.dot(a) + c + opt.lambda * a.lpNorm<1>();
  };
  double f = objective(alpha, g);
  if (!(L > 0.0)) L = 1.0;
  if (opt.recordObjective) out.objectiveTrace.push_back(f);

  Vector next(n), delta(n), gnext(n);
  int backtracks = 0;
  for (int it = 0; it < opt.maxIter; ++it) {
    const double step = 1.0 / L;
    const double thresh = opt.lambda * step;
    for (Eigen::Index i = 0; i < n; ++i) next[i] = soft_threshold(alpha[i] - step * (g[i] - b[i]), thresh);
    delta = next - alpha;
    gnext = g;
    Eigen::Index changed = 0;
    for (Eigen::Index i = 0; i < n; ++i) changed += delta[i] != 0.0;
    if (changed * 4 > n) {
      gnext += Q.apply(delta);
    } else {
      for (Eigen::Index i = 0; i < n; ++i)
        if (delta[i] != 0.0) Q.add_column(i, delta[i], gnext);
    }
    const double fn = objective(next, gnext);
    if (!std::isfinite(fn) || !next.allFinite()) throw DivergenceError("ISTA produced non-finite values");
    if (fn > f + 1e-12 * std::max(1.0, std::abs(f))) {
      if (++backtracks > 60) throw DivergenceError("ISTA step size could not be stabilized");
      L *= 2.0;
      continue;
    }
    alpha.swap(next);
    g.swap(gnext);
    f = fn;
    ++out.iterations;
    if (opt.recordObjective) out.objectiveTrace.push_back(f);
    if (delta.lpNorm<Eigen::Infinity>() < opt.tol) break;
  }
  out.residualNorm = std::sqrt(std::max(0.0, 2.0 * (f - opt.lambda * alpha.lpNorm<1>())));
  out.coefficients = std::move(alpha);
  out.support = support_of(out.coefficients);
  return out;
}

/// Symmetric matrix as a Gram operator for solve_quadratic_l1_op.
struct DenseGram {
  const Matrix& q;
  Vector apply(const Vector& v) const { return q * v; }
  void add_column(Eigen::Index j, double s, Vector& out) const { out.noalias() += q.col(j) * s; }
};

inline SparseCode solve_quadratic_l1(const Matrix& Q, const Vector& b, double c, double L, const IstaOptions& opt,
                                     const Vector* warm = nullptr) {
  return solve_quadratic_l1_op(DenseGram{Q}, b, c, L, opt, warm);
}

/// Minimizes 1/2 |y - A a|^2 + lambda |a|_1. L comes from 50 power-iteration
/// steps on A^T A.
inline SparseCode ista_solve(const Matrix& A, const Vector& y, double lambda, int maxIter, double tol,
                             bool recordObjective = false) {
  if (A.rows() != y.size()) throw InvalidArgument("ista_solve: dimension mismatch");
  if (!(lambda > 0.0)) throw InvalidArgument("ista_solve: lambda must be positive");
  const Matrix gram = A.transpose() * A;
  const double L = largest_eigenvalue(gram, 50);
  SparseCode out = solve_quadratic_l1(gram, A.transpose() * y, 0.5 * y.squaredNorm(), L,
                                      IstaOptions{lambda, maxIter, tol, recordObjective});
  out.residualNorm = (y - A * out.coefficients).norm();
  return out;
}

inline double lasso_objective(const Matrix& A, const Vector& y, const Vector& a, double lambda) {
  return 0.5 * (y - A * a).squaredNorm() + lambda * a.lpNorm<1>();
}

}  // namespace cssr
