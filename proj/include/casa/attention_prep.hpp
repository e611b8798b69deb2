#pragma once

// Turns raw cross/self-attention tensors into solver inputs.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "casa/array_io.hpp"
#include "casa/error.hpp"

namespace casa {

/// Row-major 2-D map, the natural layout of attention grids.
using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flattened R x R saliency map (row-major).
struct SaliencyMap {
  Eigen::VectorXd values;
  Eigen::Index side = 0;

  SaliencyMap() = default;
  SaliencyMap(Eigen::VectorXd v, Eigen::Index side_length) : values(std::move(v)), side(side_length) {
    if (side < 1 || values.size() != side * side)
      throw ShapeError("saliency map of side " + std::to_string(side) + " needs " + std::to_string(side * side) +
                       " values, got " + std::to_string(values.size()));
    if (!values.allFinite()) throw DataError("saliency map has non-finite entries");
  }

  /// Wraps a vector whose length is a perfect square.
  static SaliencyMap from_vector(Eigen::VectorXd v) {
    auto side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
    return SaliencyMap(std::move(v), side);
  }

  Eigen::Index nodes() const noexcept { return values.size(); }
};

/// Patch-to-patch weights. `symmetric` is false only on the no-symmetrize ablation path.
struct AffinityMatrix {
  Eigen::MatrixXd weights;
  bool symmetric = true;

  Eigen::Index nodes() const noexcept { return weights.rows(); }
};

/// Diagonal of the confidence matrix; every entry in [floor, 1].
struct ConfidenceWeights {
  Eigen::VectorXd diag;
};

namespace prep_detail {

inline void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what) {
  if (!m.allFinite()) throw DataError(std::string(what) + " contains non-finite values");
}

}  // namespace prep_detail

/// Elementwise mean over a list of equally-shaped maps.
inline Grid average_stack(std::span<const Grid> stack) {
  if (stack.empty()) throw DataError("cannot average an empty stack");
  Grid sum = Grid::Zero(stack.front().rows(), stack.front().cols());
  for (const auto& slice : stack) {
    if (slice.rows() != sum.rows() || slice.cols() != sum.cols()) throw ShapeError("stack slices differ in shape");
    if (!slice.allFinite()) throw DataError("stack contains non-finite values");
    sum += slice;
  }
  return sum / static_cast<double>(stack.size());
}

/// Splits a rank-3 array (B x H x W) into slices; a rank-2 array is a stack of one.
inline std::vector<Grid> stack_slices(const DenseArray& arr) {
  if (arr.rank() != 2 && arr.rank() != 3)
    throw ShapeError("attention stack must have rank 2 or 3, got shape " + shape_string(arr.shape()));
  const auto& s = arr.shape();
  std::size_t batches = arr.rank() == 3 ? s[0] : 1;
  auto rows = static_cast<Eigen::Index>(s[arr.rank() - 2]);
  auto cols = static_cast<Eigen::Index>(s[arr.rank() - 1]);
  auto values = arr.to_doubles();
  std::vector<Grid> out;
  out.reserve(batches);
  const std::size_t step = static_cast<std::size_t>(rows * cols);
  for (std::size_t b = 0; b < batches; ++b)
    out.emplace_back(Eigen::Map<const Grid>(values.data() + b * step, rows, cols));
  return out;
}

inline Grid average_stack(const DenseArray& stack) {
  auto slices = stack_slices(stack);
  return average_stack(std::span<const Grid>(slices));
}

/// Corner-aligned bilinear upsampling by an integer factor.
inline Grid upsample(const Grid& map, int gamma) {
  if (gamma < 1) throw ParameterError("upsampling factor gamma must be >= 1, got " + std::to_string(gamma));
  prep_detail::require_finite(map, "map");
  if (gamma == 1) return map;
  const Eigen::Index rows = map.rows(), cols = map.cols();
  const Eigen::Index out_rows = rows * gamma, out_cols = cols * gamma;
  Grid out(out_rows, out_cols);

  // Source coordinate of each output index, split into base cell and weight.
  auto axis = [](Eigen::Index in, Eigen::Index n_out, std::vector<Eigen::Index>& base, std::vector<double>& frac) {
    base.resize(n_out);
    frac.resize(n_out);
    for (Eigen::Index i = 0; i < n_out; ++i) {
      if (in == 1) {
        base[i] = 0;
        frac[i] = 0.0;
        continue;
      }
      double pos = static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(n_out - 1);
      auto b = static_cast<Eigen::Index>(std::floor(pos));
      if (b >= in - 1) b = in - 2;
      base[i] = b;
      frac[i] = pos - static_cast<double>(b);
    }
  };
  std::vector<Eigen::Index> rb, cb;
  std::vector<double> rf, cf;
  axis(rows, out_rows, rb, rf);
  axis(cols, out_cols, cb, cf);

  for (Eigen::Index i = 0; i < out_rows; ++i) {
    const Eigen::Index r0 = rb[i], r1 = rows == 1 ? r0 : r0 + 1;
    const double fy = rf[i];
    for (Eigen::Index j = 0; j < out_cols; ++j) {
      const Eigen::Index c0 = cb[j], c1 = cols == 1 ? c0 : c0 + 1;
      const double fx = cf[j];
      const double top = std::lerp(map(r0, c0), map(r0, c1), fx);
      const double bottom = std::lerp(map(r1, c0), map(r1, c1), fx);
      out(i, j) = std::lerp(top, bottom, fy);
    }
  }
  return out;
}

inline SaliencyMap flatten(const Grid& map) {
  if (map.rows() != map.cols())
    throw ShapeError("saliency grid must be square, got " + std::to_string(map.rows()) + "x" + std::to_string(map.cols()));
  return SaliencyMap(Eigen::Map<const Eigen::VectorXd>(map.data(), map.size()), map.rows());
}

inline Grid reshape(const SaliencyMap& m) {
  return Eigen::Map<const Grid>(m.values.data(), m.side, m.side);
}

/// Symmetrized affinity 0.5 (S + S^T). With `keep_asymmetric` the input is
/// passed through unchanged (no-symmetrize ablation).
inline AffinityMatrix symmetrize(const Eigen::MatrixXd& s, bool keep_asymmetric = false) {
  if (s.rows() != s.cols())
    throw ShapeError("affinity must be square, got " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
  prep_detail::require_finite(s, "affinity");
  if ((s.array() < 0.0).any()) throw DataError("affinity has negative entries");
  if (keep_asymmetric) return AffinityMatrix{s, s == s.transpose()};
  const Eigen::Index n = s.rows();
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j; i < n; ++i) {
      const double v = 0.5 * (s(i, j) + s(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  return AffinityMatrix{std::move(out), true};
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Per-node confidence sigmoid(alpha * m0)^2, floored; all ones when `uniform`.
inline ConfidenceWeights confidence(const SaliencyMap& m0, double alpha, bool uniform, double floor) {
  if (!(alpha > 0) || !std::isfinite(alpha)) throw ParameterError("alpha must be > 0");
  if (!(floor > 0) || floor > 1) throw ParameterError("confidence floor must be in (0, 1]");
  if (uniform) return ConfidenceWeights{Eigen::VectorXd::Ones(m0.nodes())};
  Eigen::VectorXd w(m0.nodes());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double s = sigmoid(alpha * m0.values[i]);
    w[i] = std::max(floor, s * s);
  }
  return ConfidenceWeights{std::move(w)};
}

}  // namespace casa
