#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace glnbias {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Per-sample global contexts, one row per sample and one column per hidden
// unit. GLN entries are local contexts in 1..C; frozen-gate entries are 0/1.
using ContextMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A single global context gamma.
using GlobalContext = std::vector<std::int32_t>;

inline GlobalContext context_row(const ContextMatrix& ctx, Eigen::Index n) {
  GlobalContext g(static_cast<std::size_t>(ctx.cols()));
  for (Eigen::Index h = 0; h < ctx.cols(); ++h) g[static_cast<std::size_t>(h)] = ctx(n, h);
  return g;
}

}  // namespace glnbias
