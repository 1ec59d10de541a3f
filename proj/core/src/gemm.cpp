#include "gemm.hpp"

#include <Eigen/Core>

namespace mvr::detail {

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  Eigen::Map<RowMat> out(c, m, n);
  const ConstMap am(a, trans_a ? k : m, trans_a ? m : k);
  const ConstMap bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!accumulate) out.setZero();
  if (trans_a && trans_b) {
    out.noalias() += am.transpose() * bm.transpose();
  } else if (trans_a) {
    out.noalias() += am.transpose() * bm;
  } else if (trans_b) {
    out.noalias() += am * bm.transpose();
  } else {
    out.noalias() += am * bm;
  }
}

template void gemm<float>(bool, bool, int, int, int, const float*, const float*, float*, bool);
template void gemm<double>(bool, bool, int, int, int, const double*, const double*, double*, bool);

}  // namespace mvr::detail
