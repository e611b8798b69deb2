#pragma once

// Dual-branch mask construction and latent blending.

#include <chrono>
#include <cstdint>
#include <functional>
#include <future>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "casa/array_io.hpp"
#include "casa/attention_prep.hpp"
#include "casa/config.hpp"
#include "casa/error.hpp"
#include "casa/solver.hpp"

namespace casa {

using MaskGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Edit mask with entries exactly 0 or 1.
struct BinaryMask {
  MaskGrid values;

  Eigen::Index rows() const noexcept { return values.rows(); }
  Eigen::Index cols() const noexcept { return values.cols(); }
  Eigen::Index count() const { return values.cast<Eigen::Index>().sum(); }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a.values == b.values;
  }
};

inline Grid fuse_max(const Grid& a, const Grid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("fuse_max operands differ in shape");
  return a.cwiseMax(b);
}

/// 1 where value >= delta.
inline BinaryMask threshold(const Grid& map, double delta) {
  if (!std::isfinite(delta)) throw ParameterError("threshold delta must be finite");
  return BinaryMask{(map.array() >= delta).cast<std::uint8_t>().matrix()};
}

inline Grid mask_to_grid(const BinaryMask& m) { return m.values.cast<double>(); }

/// Nearest-neighbour resize, used when latent spatial size differs from the mask.
inline BinaryMask resize_nearest(const BinaryMask& m, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1) throw ShapeError("resize target must be positive");
  if (rows == m.rows() && cols == m.cols()) return m;
  MaskGrid out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::Index si = std::min(m.rows() - 1, (2 * i + 1) * m.rows() / (2 * rows));
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Eigen::Index sj = std::min(m.cols() - 1, (2 * j + 1) * m.cols() / (2 * cols));
      out(i, j) = m.values(si, sj);
    }
  }
  return BinaryMask{std::move(out)};
}

namespace mask_detail {

template <typename T>
DenseArray select(const BinaryMask& m, const DenseArray& z_tgt, const DenseArray& z_src) {
  auto t = z_tgt.data<T>();
  auto s = z_src.data<T>();
  std::vector<T> out(t.size());
  const std::size_t plane = static_cast<std::size_t>(m.rows() * m.cols());
  const std::uint8_t* mv = m.values.data();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = mv[k % plane] ? t[k] : s[k];
  return DenseArray(z_tgt.shape(), std::move(out));
}

}  // namespace mask_detail

/// M * z_tgt + (1 - M) * z_src, broadcasting the mask over leading dims.
/// Entries are selected, not recomputed, so kept values are bit-identical.
inline DenseArray blend_latents(const BinaryMask& m, const DenseArray& z_tgt, const DenseArray& z_src) {
  if (z_tgt.shape() != z_src.shape())
    throw ShapeError("latent shapes differ: " + shape_string(z_tgt.shape()) + " vs " + shape_string(z_src.shape()));
  if (z_tgt.dtype() != z_src.dtype()) throw ShapeError("latent dtypes differ");
  const auto& s = z_tgt.shape();
  if (s.size() < 2 || s[s.size() - 2] != static_cast<std::size_t>(m.rows()) ||
      s[s.size() - 1] != static_cast<std::size_t>(m.cols()))
    throw ShapeError("latent shape " + shape_string(s) + " does not end in mask size " + std::to_string(m.rows()) +
                     "x" + std::to_string(m.cols()));
  return z_tgt.dtype() == Dtype::float32 ? mask_detail::select<float>(m, z_tgt, z_src)
                                         : mask_detail::select<double>(m, z_tgt, z_src);
}

struct BranchReport {
  double objective_initial = 0.0;
  double objective_final = 0.0;
  SolverKind solver = SolverKind::dense;
  long cg_iterations = 0;
  double residual_norm = 0.0;
  bool converged = true;
  double wall_ms = 0.0;
};

struct PipelineReport {
  BranchReport src;
  BranchReport tgt;
  double fused_min = 0.0;
  double fused_max = 0.0;
  Eigen::Index mask_count = 0;
  double prep_ms = 0.0;
  double total_ms = 0.0;

  bool converged() const noexcept { return src.converged && tgt.converged; }
};

struct PipelineResult {
  BinaryMask mask;
  SaliencyMap m_star_src;
  SaliencyMap m_star_tgt;
  Grid fused;
  PipelineReport report;
};

struct PipelineOptions {
  /// Refine the two branches on separate threads. Results do not depend on it.
  bool parallel_branches = false;
  LaplacianOptions laplacian;
};

namespace mask_detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Runs `fn`, prefixing any library error with the stage name.
template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), stage + ": " + e.what());
  }
}

inline Eigen::MatrixXd self_attention_matrix(const DenseArray& arr) {
  Grid avg = average_stack(arr);
  if (avg.rows() != avg.cols())
    throw ShapeError("self-attention must be square, got " + std::to_string(avg.rows()) + "x" +
                     std::to_string(avg.cols()));
  return avg;
}

}  // namespace mask_detail

/// average -> upsample -> flatten -> refine per branch -> reshape -> fuse_max -> threshold.
inline PipelineResult run_pipeline(const DenseArray& cross_src, const DenseArray& cross_tgt, const DenseArray& self_src,
                                   const DenseArray& self_tgt, const RefineConfig& config,
                                   const PipelineOptions& opts = {}) {
  using namespace mask_detail;
  const auto t_start = Clock::now();
  staged("config", [&] { config.validate(); });

  auto prepare = [&](const DenseArray& cross, const DenseArray& self, const char* branch) {
    std::string tag = std::string(branch) + " ";
    Grid avg = staged(tag + "average", [&] { return average_stack(cross); });
    Grid up = staged(tag + "upsample", [&] { return upsample(avg, config.gamma); });
    SaliencyMap m0 = staged(tag + "flatten", [&] { return flatten(up); });
    Eigen::MatrixXd s = staged(tag + "self-attention", [&] { return self_attention_matrix(self); });
    if (s.rows() != m0.nodes())
      throw ShapeError(tag + "self-attention: expected " + std::to_string(m0.nodes()) + "x" +
                       std::to_string(m0.nodes()) + " for R=" + std::to_string(m0.side) + " (gamma " +
                       std::to_string(config.gamma) + "), got " + std::to_string(s.rows()) + "x" +
                       std::to_string(s.cols()));
    return std::make_pair(std::move(m0), std::move(s));
  };
  auto [m0_src, s_src] = prepare(cross_src, self_src, "source");
  auto [m0_tgt, s_tgt] = prepare(cross_tgt, self_tgt, "target");
  if (m0_src.side != m0_tgt.side) throw ShapeError("source and target saliency sides differ");
  const double prep_ms = ms_since(t_start);

  auto solve_branch = [&](const SaliencyMap& m0, const Eigen::MatrixXd& s, const char* branch) {
    const auto t0 = Clock::now();
    RefineResult r = staged(std::string(branch) + " refine", [&] { return refine(m0, s, config, opts.laplacian); });
    return std::make_pair(std::move(r), ms_since(t0));
  };

  std::pair<RefineResult, double> src, tgt;
  if (opts.parallel_branches) {
    auto fut = std::async(std::launch::async, [&] { return solve_branch(m0_tgt, s_tgt, "target"); });
    src = solve_branch(m0_src, s_src, "source");
    tgt = fut.get();
  } else {
    src = solve_branch(m0_src, s_src, "source");
    tgt = solve_branch(m0_tgt, s_tgt, "target");
  }

  PipelineResult out;
  out.fused = fuse_max(reshape(src.first.m_star), reshape(tgt.first.m_star));
  out.mask = threshold(out.fused, config.delta);
  auto fill = [](BranchReport& b, const std::pair<RefineResult, double>& r) {
    b.objective_initial = r.first.objective_initial;
    b.objective_final = r.first.objective_final;
    b.solver = r.first.solver_used;
    b.cg_iterations = r.first.cg_iterations;
    b.residual_norm = r.first.residual_norm;
    b.converged = r.first.converged;
    b.wall_ms = r.second;
  };
  fill(out.report.src, src);
  fill(out.report.tgt, tgt);
  out.report.fused_min = out.fused.minCoeff();
  out.report.fused_max = out.fused.maxCoeff();
  out.report.mask_count = out.mask.count();
  out.report.prep_ms = prep_ms;
  out.m_star_src = std::move(src.first.m_star);
  out.m_star_tgt = std::move(tgt.first.m_star);
  out.report.total_ms = ms_since(t_start);
  return out;
}

}  // namespace casa
