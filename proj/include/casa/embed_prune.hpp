#pragma once

// Selective offset pruning for image-embedding interpolation.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "casa/error.hpp"

namespace casa {

enum class OffsetSign {
  paper,     // e_src_img + H(e_src_txt - e_tgt_txt)
  reversed,  // e_src_img + H(e_tgt_txt - e_src_txt)
};

inline OffsetSign parse_offset_sign(const std::string& name) {
  if (name == "paper") return OffsetSign::paper;
  if (name == "reversed") return OffsetSign::reversed;
  throw ParameterError("sign must be 'paper' or 'reversed', got '" + name + "'");
}

/// Percentile of |y| using linear interpolation between order statistics.
inline double percentile_threshold(const Eigen::VectorXd& y, double percentile) {
  if (!(percentile >= 0 && percentile <= 100)) throw ParameterError("tau_percentile must be in [0, 100]");
  if (y.size() == 0) throw ShapeError("cannot prune an empty vector");
  if (!y.allFinite()) throw DataError("embedding has non-finite entries");
  std::vector<double> mags(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) mags[static_cast<std::size_t>(i)] = std::abs(y[i]);
  std::sort(mags.begin(), mags.end());
  const double rank = percentile / 100.0 * static_cast<double>(mags.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, mags.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return std::clamp(std::lerp(mags[lo], mags[hi], frac), mags[lo], mags[hi]);
}

/// Keeps entries with |y_i| >= tau verbatim and zeroes the rest.
inline Eigen::VectorXd prune_with_threshold(const Eigen::VectorXd& y, double tau) {
  Eigen::VectorXd out = y;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (!(std::abs(y[i]) >= tau)) out[i] = 0.0;
  return out;
}

inline Eigen::VectorXd prune(const Eigen::VectorXd& y, double tau_percentile) {
  return prune_with_threshold(y, percentile_threshold(y, tau_percentile));
}

inline Eigen::VectorXd interpolate(const Eigen::VectorXd& src_img, const Eigen::VectorXd& src_txt,
                                   const Eigen::VectorXd& tgt_txt, double tau_percentile,
                                   OffsetSign sign = OffsetSign::paper) {
  if (src_img.size() != src_txt.size() || src_img.size() != tgt_txt.size())
    throw ShapeError("embedding dimensions differ: " + std::to_string(src_img.size()) + ", " +
                     std::to_string(src_txt.size()) + ", " + std::to_string(tgt_txt.size()));
  const Eigen::VectorXd offset = sign == OffsetSign::paper ? Eigen::VectorXd(src_txt - tgt_txt)
                                                           : Eigen::VectorXd(tgt_txt - src_txt);
  const Eigen::VectorXd kept = prune(offset, tau_percentile);
  Eigen::VectorXd out = src_img;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (kept[i] != 0.0) out[i] += kept[i];
  return out;
}

}  // namespace casa
