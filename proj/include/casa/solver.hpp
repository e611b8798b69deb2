#pragma once

// Minimizes J(m) = (m - m0)^T Lam (m - m0) + lambda m^T L m, whose unique
// minimizer solves (Lam + lambda L) m = Lam m0.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "casa/attention_prep.hpp"
#include "casa/config.hpp"
#include "casa/error.hpp"
#include "casa/graph.hpp"

namespace casa {

struct RefineResult {
  SaliencyMap m_star;
  double objective_initial = 0.0;
  double objective_final = 0.0;
  SolverKind solver_used = SolverKind::dense;
  long cg_iterations = 0;
  double residual_norm = 0.0;
  bool converged = true;
};

struct ObjectiveTerms {
  double fidelity = 0.0;    // (m - m0)^T Lam (m - m0)
  double smoothness = 0.0;  // m^T L m
};

namespace solver_detail {

inline void check_dims(const SaliencyMap& m, const SaliencyMap& m0, const ConfidenceWeights& w, const GraphLaplacian& l) {
  const auto n = m0.nodes();
  if (m.nodes() != n || w.diag.size() != n || l.nodes() != n)
    throw ShapeError("dimension mismatch: m=" + std::to_string(m.nodes()) + " m0=" + std::to_string(n) +
                     " weights=" + std::to_string(w.diag.size()) + " laplacian=" + std::to_string(l.nodes()));
}

inline void check_system(const SaliencyMap& m0, const ConfidenceWeights& w, const GraphLaplacian& l, double lambda) {
  check_dims(m0, m0, w, l);
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ParameterError("lambda must be >= 0");
  if (w.diag.size() > 0 && !(w.diag.minCoeff() > 0)) throw ParameterError("confidence weights must be strictly positive");
}

/// (Lam + lambda L) x
inline Eigen::VectorXd system_apply(const ConfidenceWeights& w, const GraphLaplacian& l, double lambda,
                                    const Eigen::VectorXd& x) {
  Eigen::VectorXd y = w.diag.cwiseProduct(x);
  if (lambda != 0.0) y += lambda * l.apply(x);
  return y;
}

inline Eigen::MatrixXd system_dense(const ConfidenceWeights& w, const GraphLaplacian& l, double lambda) {
  Eigen::MatrixXd a = lambda * l.to_dense();
  a.diagonal() += w.diag;
  return a;
}

inline SparseRowMatrix system_sparse(const ConfidenceWeights& w, const GraphLaplacian& l, double lambda) {
  SparseRowMatrix a = lambda * l.sparse();
  SparseRowMatrix d(a.rows(), a.cols());
  d.reserve(Eigen::VectorXi::Constant(a.rows(), 1));
  for (Eigen::Index i = 0; i < a.rows(); ++i) d.insert(i, i) = w.diag[i];
  a += d;
  a.makeCompressed();
  return a;
}

inline std::string diagnostics(const ConfidenceWeights& w, double lambda, const GraphLaplacian& l) {
  std::ostringstream os;
  os << "nodes=" << l.nodes() << " lambda=" << lambda << " min_weight=" << w.diag.minCoeff()
     << " max_weight=" << w.diag.maxCoeff() << " max_laplacian_diag=" << l.diagonal().maxCoeff();
  return os.str();
}

}  // namespace solver_detail

inline ObjectiveTerms objective_terms(const SaliencyMap& m, const SaliencyMap& m0, const ConfidenceWeights& w,
                                      const GraphLaplacian& l) {
  solver_detail::check_dims(m, m0, w, l);
  const Eigen::VectorXd d = m.values - m0.values;
  return {d.dot(w.diag.cwiseProduct(d)), quadratic_form(l, m.values)};
}

inline double objective(const SaliencyMap& m, const SaliencyMap& m0, const ConfidenceWeights& w,
                        const GraphLaplacian& l, double lambda) {
  if (!(lambda >= 0)) throw ParameterError("lambda must be >= 0");
  auto t = objective_terms(m, m0, w, l);
  return t.fidelity + lambda * t.smoothness;
}

/// 2 Lam (m - m0) + lambda (L + L^T) m, which is 2 Lam (m - m0) + 2 lambda L m for symmetric L.
inline Eigen::VectorXd gradient(const SaliencyMap& m, const SaliencyMap& m0, const ConfidenceWeights& w,
                                const GraphLaplacian& l, double lambda) {
  solver_detail::check_dims(m, m0, w, l);
  Eigen::VectorXd g = 2.0 * w.diag.cwiseProduct(m.values - m0.values);
  if (l.symmetric()) {
    g += 2.0 * lambda * l.apply(m.values);
  } else {
    Eigen::VectorXd lt = l.is_sparse() ? Eigen::VectorXd(l.sparse().transpose() * m.values)
                                       : Eigen::VectorXd(l.dense().transpose() * m.values);
    g += lambda * (l.apply(m.values) + lt);
  }
  return g;
}

namespace solver_detail {

inline RefineResult finish(Eigen::VectorXd x, const SaliencyMap& m0, const ConfidenceWeights& w,
                           const GraphLaplacian& l, double lambda, SolverKind used) {
  const Eigen::VectorXd b = w.diag.cwiseProduct(m0.values);
  RefineResult r;
  r.residual_norm = (b - system_apply(w, l, lambda, x)).norm();
  r.m_star = SaliencyMap(std::move(x), m0.side);
  r.objective_initial = objective(m0, m0, w, l, lambda);
  r.objective_final = objective(r.m_star, m0, w, l, lambda);
  r.solver_used = used;
  return r;
}

}  // namespace solver_detail

/// Direct solve by Cholesky factorization (LU when L is asymmetric), followed
/// by one step of iterative refinement.
inline RefineResult solve_dense(const SaliencyMap& m0, const ConfidenceWeights& w, const GraphLaplacian& l,
                                double lambda) {
  using namespace solver_detail;
  check_system(m0, w, l, lambda);
  const Eigen::VectorXd b = w.diag.cwiseProduct(m0.values);
  Eigen::VectorXd x;

  auto refine_once = [&](const auto& solve) {
    x = solve(b);
    Eigen::VectorXd r = b - system_apply(w, l, lambda, x);
    x += solve(r);
  };
  auto fail = [&](const char* what) {
    throw NumericalError(std::string(what) + " failed: " + diagnostics(w, lambda, l));
  };

  if (l.is_sparse()) {
    SparseRowMatrix a_rows = system_sparse(w, l, lambda);
    Eigen::SparseMatrix<double> a(a_rows);
    if (l.symmetric()) {
      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(a);
      if (llt.info() != Eigen::Success) fail("sparse Cholesky factorization");
      refine_once([&](const Eigen::VectorXd& rhs) { return Eigen::VectorXd(llt.solve(rhs)); });
    } else {
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(a);
      if (lu.info() != Eigen::Success) fail("sparse LU factorization");
      refine_once([&](const Eigen::VectorXd& rhs) { return Eigen::VectorXd(lu.solve(rhs)); });
    }
  } else {
    Eigen::MatrixXd a = system_dense(w, l, lambda);
    if (l.symmetric()) {
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      if (llt.info() != Eigen::Success) fail("Cholesky factorization");
      refine_once([&](const Eigen::VectorXd& rhs) { return Eigen::VectorXd(llt.solve(rhs)); });
    } else {
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
      const Eigen::VectorXd pivots = lu.matrixLU().diagonal();
      if (!pivots.allFinite() || !(pivots.cwiseAbs().minCoeff() > 0)) fail("LU factorization");
      refine_once([&](const Eigen::VectorXd& rhs) { return Eigen::VectorXd(lu.solve(rhs)); });
    }
  }
  if (!x.allFinite()) fail("dense solve");
  return finish(std::move(x), m0, w, l, lambda, SolverKind::dense);
}

/// Jacobi-preconditioned conjugate gradient started from m0. Stops when the
/// true residual is within tol * |Lam m0|. On hitting `max_iter` the result
/// carries the iterate with the smallest residual seen and `converged = false`.
inline RefineResult solve_cg(const SaliencyMap& m0, const ConfidenceWeights& w, const GraphLaplacian& l,
                             double lambda, double tol, long max_iter) {
  using namespace solver_detail;
  check_system(m0, w, l, lambda);
  if (!l.symmetric()) throw ParameterError("conjugate gradient requires a symmetric Laplacian");
  if (!(tol > 0)) throw ParameterError("cg tolerance must be > 0");
  if (max_iter < 1) throw ParameterError("cg max iterations must be >= 1");

  const Eigen::VectorXd b = w.diag.cwiseProduct(m0.values);
  const double target = tol * b.norm();
  const Eigen::VectorXd inv_diag = (w.diag + lambda * l.diagonal()).cwiseInverse();

  Eigen::VectorXd x = m0.values;
  Eigen::VectorXd r = b - system_apply(w, l, lambda, x);
  double r_norm = r.norm();
  Eigen::VectorXd best = x;
  double best_norm = r_norm;
  bool converged = r_norm <= target;
  long iters = 0;

  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  while (!converged && iters < max_iter) {
    const Eigen::VectorXd ap = system_apply(w, l, lambda, p);
    const double pap = p.dot(ap);
    if (!(pap > 0)) break;
    const double step = rz / pap;
    x += step * p;
    r -= step * ap;
    ++iters;
    r_norm = r.norm();
    if (r_norm <= target) {
      // Recursive residual can drift; confirm against the true one.
      r = b - system_apply(w, l, lambda, x);
      r_norm = r.norm();
      if (r_norm <= target) {
        converged = true;
        break;
      }
      z = inv_diag.cwiseProduct(r);
      p = z;
      rz = r.dot(z);
      continue;
    }
    if (r_norm < best_norm) {
      best_norm = r_norm;
      best = x;
    }
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }

  auto result = finish(converged ? std::move(x) : std::move(best), m0, w, l, lambda, SolverKind::cg);
  result.cg_iterations = iters;
  result.converged = converged;
  return result;
}

/// Confidence -> symmetrize -> Laplacian -> solve, honouring the ablation
/// switches in `config`. `self_attention` is the raw (possibly asymmetric)
/// R^2 x R^2 patch affinity. The no-symmetrize ablation always uses the
/// direct solver, since CG needs a symmetric system.
inline RefineResult refine(const SaliencyMap& m0, const Eigen::MatrixXd& self_attention, const RefineConfig& config,
                           LaplacianOptions opts = {}) {
  config.validate();
  if (self_attention.rows() != m0.nodes())
    throw ShapeError("self-attention is " + std::to_string(self_attention.rows()) + "x" +
                     std::to_string(self_attention.cols()) + " but saliency has " + std::to_string(m0.nodes()) +
                     " nodes");
  const auto weights = confidence(m0, config.alpha, config.ablation_uniform_weights, config.lambda_floor);
  const auto affinity = symmetrize(self_attention, config.ablation_no_symmetrize);
  opts.allow_asymmetric = config.ablation_no_symmetrize;
  const auto lap = laplacian(affinity, opts);
  const auto nodes = static_cast<std::size_t>(m0.nodes());
  const SolverKind kind = lap.symmetric() ? config.resolve_solver(nodes) : SolverKind::dense;
  if (kind == SolverKind::cg)
    return solve_cg(m0, weights, lap, config.lambda, config.cg_tol, config.max_iterations(nodes));
  return solve_dense(m0, weights, lap, config.lambda);
}

}  // namespace casa
