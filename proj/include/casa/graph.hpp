#pragma once

// Degree matrix, graph Laplacian L = D - S and its quadratic form.

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "casa/attention_prep.hpp"
#include "casa/config.hpp"
#include "casa/error.hpp"

namespace casa {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct LaplacianOptions {
  /// Node count at which storage switches to compressed sparse rows.
  std::size_t sparse_from_nodes = large_graph_nodes;
  /// When set, off-diagonal weights below `rel * max(rowmax_i, rowmax_j)` are
  /// dropped before the degrees are formed. Approximation; opt-in only.
  std::optional<double> sparsify_rel;
  /// Accept an asymmetric affinity (no-symmetrize ablation). Degrees are row sums.
  bool allow_asymmetric = false;
};

/// Immutable graph Laplacian, stored dense or as CSR.
class GraphLaplacian {
 public:
  explicit GraphLaplacian(Eigen::MatrixXd dense, bool symmetric = true)
      : storage_(std::move(dense)), symmetric_(symmetric) {}
  explicit GraphLaplacian(SparseRowMatrix sparse, bool symmetric = true)
      : storage_(std::move(sparse)), symmetric_(symmetric) {}

  Eigen::Index nodes() const {
    return std::visit([](const auto& m) { return m.rows(); }, storage_);
  }
  bool symmetric() const noexcept { return symmetric_; }
  bool is_sparse() const noexcept { return std::holds_alternative<SparseRowMatrix>(storage_); }

  const Eigen::MatrixXd& dense() const { return std::get<Eigen::MatrixXd>(storage_); }
  const SparseRowMatrix& sparse() const { return std::get<SparseRowMatrix>(storage_); }

  Eigen::MatrixXd to_dense() const {
    if (is_sparse()) return Eigen::MatrixXd(sparse());
    return dense();
  }

  /// L x
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    if (x.size() != nodes())
      throw ShapeError("vector of length " + std::to_string(x.size()) + " does not match graph with " +
                       std::to_string(nodes()) + " nodes");
    return std::visit([&](const auto& m) -> Eigen::VectorXd { return m * x; }, storage_);
  }

  Eigen::VectorXd diagonal() const {
    return std::visit([](const auto& m) -> Eigen::VectorXd { return m.diagonal(); }, storage_);
  }

 private:
  std::variant<Eigen::MatrixXd, SparseRowMatrix> storage_;
  bool symmetric_;
};

namespace graph_detail {

inline void require_square(const AffinityMatrix& s) {
  if (s.weights.rows() != s.weights.cols()) throw ShapeError("affinity must be square");
}

inline bool exactly_symmetric(const Eigen::MatrixXd& w) { return w == w.transpose(); }

}  // namespace graph_detail

/// Row sums of a symmetric nonnegative affinity.
inline Eigen::VectorXd degree(const AffinityMatrix& s) {
  graph_detail::require_square(s);
  if (!graph_detail::exactly_symmetric(s.weights)) throw DataError("degree requires a symmetric affinity");
  if ((s.weights.array() < 0.0).any()) throw DataError("degree requires a nonnegative affinity");
  return s.weights.rowwise().sum();
}

inline GraphLaplacian laplacian(const AffinityMatrix& s, const LaplacianOptions& opts = {}) {
  graph_detail::require_square(s);
  const Eigen::Index n = s.weights.rows();
  const bool symmetric = graph_detail::exactly_symmetric(s.weights);
  if (!symmetric && !opts.allow_asymmetric) throw DataError("laplacian requires a symmetric affinity");
  if ((s.weights.array() < 0.0).any()) throw DataError("laplacian requires a nonnegative affinity");

  const bool sparse = static_cast<std::size_t>(n) >= opts.sparse_from_nodes || opts.sparsify_rel.has_value();
  if (!sparse) {
    Eigen::VectorXd deg = s.weights.rowwise().sum();
    Eigen::MatrixXd l = -s.weights;
    l.diagonal() += deg;
    return GraphLaplacian(std::move(l), symmetric);
  }

  const double rel = opts.sparsify_rel.value_or(0.0);
  Eigen::VectorXd row_max = s.weights.rowwise().maxCoeff();
  std::vector<Eigen::Triplet<double>> triplets;
  for (Eigen::Index i = 0; i < n; ++i) {
    double deg = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double w = s.weights(i, j);
      if (i == j || w == 0.0) continue;
      if (rel > 0.0 && w < rel * std::max(row_max[i], row_max[j])) continue;
      deg += w;
      triplets.emplace_back(i, j, -w);
    }
    triplets.emplace_back(i, i, deg);
  }
  SparseRowMatrix l(n, n);
  l.setFromTriplets(triplets.begin(), triplets.end());
  l.makeCompressed();
  return GraphLaplacian(std::move(l), symmetric);
}

/// x^T L x
inline double quadratic_form(const GraphLaplacian& l, const Eigen::VectorXd& x) {
  return x.dot(l.apply(x));
}

}  // namespace casa
