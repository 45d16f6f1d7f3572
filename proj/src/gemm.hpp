#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace headsearch::detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

enum class Trans { No, Yes };

// C (+)= op(A) * op(B), all row-major; op(A) is m x k, op(B) is k x n.
inline void gemm(const float* a, Trans ta, const float* b, Trans tb, float* c, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  MutMap out(c, M, N);
  if (ta == Trans::No && tb == Trans::No) {
    ConstMap A(a, M, K), B(b, K, N);
    if (accumulate) out.noalias() += A * B; else out.noalias() = A * B;
  } else if (ta == Trans::Yes && tb == Trans::No) {
    ConstMap A(a, K, M), B(b, K, N);
    if (accumulate) out.noalias() += A.transpose() * B; else out.noalias() = A.transpose() * B;
  } else if (ta == Trans::No && tb == Trans::Yes) {
    ConstMap A(a, M, K), B(b, N, K);
    if (accumulate) out.noalias() += A * B.transpose(); else out.noalias() = A * B.transpose();
  } else {
    ConstMap A(a, K, M), B(b, N, K);
    if (accumulate) out.noalias() += A.transpose() * B.transpose();
    else out.noalias() = A.transpose() * B.transpose();
  }
}

}  // namespace headsearch::detail
