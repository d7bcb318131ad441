#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "usae/errors.hpp"

namespace usae {

// Row-major dense storage. Matrix is the 32-bit working type; the float64
// instantiations are used by reference implementations and gradient checks.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<float>;
using Vector = VectorX<float>;
using MatrixD = MatrixX<double>;
using VectorD = VectorX<double>;

// Worker count used by row-partitioned kernels. Results never depend on it.
void set_num_threads(unsigned n);
unsigned num_threads();

namespace detail {
void parallel_rows_impl(std::ptrdiff_t rows, std::ptrdiff_t work_per_row,
                        const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& body);
}

// Calls body(begin, end) over disjoint row ranges covering [0, rows).
template <typename Body>
void parallel_rows(std::ptrdiff_t rows, std::ptrdiff_t work_per_row, Body&& body) {
    detail::parallel_rows_impl(rows, work_per_row, std::function<void(std::ptrdiff_t, std::ptrdiff_t)>(body));
}

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& a, const std::string& context) {
    if (!a.allFinite()) throw DataError(context + ": non-finite value");
}

inline void check_same_shape(Eigen::Index r1, Eigen::Index c1, Eigen::Index r2, Eigen::Index c2,
                             const char* context) {
    if (r1 != r2 || c1 != c2) {
        throw ShapeError(std::string(context) + ": shape " + std::to_string(r1) + "x" +
                         std::to_string(c1) + " vs " + std::to_string(r2) + "x" + std::to_string(c2));
    }
}

// a (n x p) * b (p x q). Each output entry is accumulated over p in ascending
// order, which makes the result identical to the textbook triple loop.
template <typename DA, typename DB>
MatrixX<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    using S = typename DA::Scalar;
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
    }
    const MatrixX<S> lhs = a;
    const MatrixX<S> rhs = b;
    const Eigen::Index n = lhs.rows(), p = lhs.cols(), q = rhs.cols();
    MatrixX<S> out = MatrixX<S>::Zero(n, q);
    parallel_rows(n, p * q, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
        for (std::ptrdiff_t i = begin; i < end; ++i) {
            S* o = out.row(i).data();
            for (Eigen::Index k = 0; k < p; ++k) {
                const S s = lhs(i, k);
                const S* r = rhs.row(k).data();
                for (Eigen::Index j = 0; j < q; ++j) o[j] += s * r[j];
            }
        }
    });
    return out;
}

// a (n x p) * b^T where b is (q x p).
template <typename DA, typename DB>
MatrixX<typename DA::Scalar> matmul_bt(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    using S = typename DA::Scalar;
    if (a.cols() != b.cols()) throw ShapeError("matmul_bt: inner dimensions differ");
    const MatrixX<S> lhs = a;
    const MatrixX<S> rhs = b;
    const Eigen::Index n = lhs.rows(), p = lhs.cols(), q = rhs.rows();
    MatrixX<S> out(n, q);
    parallel_rows(n, p * q, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
        for (std::ptrdiff_t i = begin; i < end; ++i) {
            const S* l = lhs.row(i).data();
            for (Eigen::Index j = 0; j < q; ++j) {
                const S* r = rhs.row(j).data();
                S acc = 0;
                for (Eigen::Index k = 0; k < p; ++k) acc += l[k] * r[k];
                out(i, j) = acc;
            }
        }
    });
    return out;
}

// a^T * b where a is (n x p) and b is (n x q); accumulation over n ascending.
template <typename DA, typename DB>
MatrixX<typename DA::Scalar> matmul_at(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    using S = typename DA::Scalar;
    if (a.rows() != b.rows()) throw ShapeError("matmul_at: inner dimensions differ");
    const MatrixX<S> lhs = a;
    const MatrixX<S> rhs = b;
    const Eigen::Index n = lhs.rows(), p = lhs.cols(), q = rhs.cols();
    MatrixX<S> out = MatrixX<S>::Zero(p, q);
    parallel_rows(p, n * q, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const S* r = rhs.row(i).data();
            for (std::ptrdiff_t k = begin; k < end; ++k) {
                const S s = lhs(i, k);
                S* o = out.row(k).data();
                for (Eigen::Index j = 0; j < q; ++j) o[j] += s * r[j];
            }
        }
    });
    return out;
}

// Indices of the k largest entries, ordered by value descending; equal values
// are ordered (and selected) by lowest index first.
template <typename Scalar>
std::vector<std::size_t> topk_select(std::span<const Scalar> v, std::size_t k) {
    if (k < 1 || k > v.size()) {
        throw ParameterError("topk_select: k=" + std::to_string(k) + " outside [1, " +
                             std::to_string(v.size()) + "]");
    }
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto before = [&](std::size_t a, std::size_t b) {
        return v[a] > v[b] || (v[a] == v[b] && a < b);
    };
    if (k < idx.size()) std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
    idx.resize(k);
    std::sort(idx.begin(), idx.end(), before);
    return idx;
}

template <typename Derived>
double fro_norm(const Eigen::MatrixBase<Derived>& a) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double x = static_cast<double>(a(i, j));
            acc += x * x;
        }
    return std::sqrt(acc);
}

template <typename Derived>
double l1_sum(const Eigen::MatrixBase<Derived>& a) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) acc += std::abs(static_cast<double>(a(i, j)));
    return acc;
}

struct PearsonResult {
    double r = 0.0;
    double slope = 0.0;  // OLS slope of y on x
};

PearsonResult pearson(std::span<const double> x, std::span<const double> y);

}  // namespace usae
