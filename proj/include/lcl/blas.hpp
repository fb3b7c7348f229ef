#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace lcl::blas {

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, const T* b,
          T beta, T* c) {
    using CMap = Eigen::Map<const RowMajor<T>>;
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    Eigen::Map<RowMajor<T>> C(c, M, N);
    if (beta == T{0}) {
        C.setZero();
    } else if (beta != T{1}) {
        C *= beta;
    }
    // op(A) is M x K, op(B) is K x N; a transposed operand is stored the other way round.
    if (!trans_a && !trans_b) {
        C.noalias() += alpha * (CMap(a, M, K) * CMap(b, K, N));
    } else if (!trans_a && trans_b) {
        C.noalias() += alpha * (CMap(a, M, K) * CMap(b, N, K).transpose());
    } else if (trans_a && !trans_b) {
        C.noalias() += alpha * (CMap(a, K, M).transpose() * CMap(b, K, N));
    } else {
        C.noalias() += alpha * (CMap(a, K, M).transpose() * CMap(b, N, K).transpose());
    }
}

} // namespace detail

// Row-major C = alpha * op(A) * op(B) + beta * C, where op(A) is M x K and
// op(B) is K x N.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, const float* b, float beta, float* c) {
    detail::gemm(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
}

inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, const double* b, double beta, double* c) {
    detail::gemm(trans_a, trans_b, m, n, k, alpha, a, b, beta, c);
}

} // namespace lcl::blas
