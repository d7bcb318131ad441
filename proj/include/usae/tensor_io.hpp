#pragma once

#include <string>

#include "usae/binary_io.hpp"
#include "usae/numerics.hpp"

namespace usae::io {

// u32 rows | u32 cols | row-major payload.
template <typename Derived>
void put_tensor(ByteWriter& w, const Eigen::PlainObjectBase<Derived>& t) {
    using S = typename Derived::Scalar;
    w.put(static_cast<std::uint32_t>(t.rows()));
    w.put(static_cast<std::uint32_t>(t.cols()));
    const MatrixX<S> rm = t;
    w.put_array(rm.data(), static_cast<std::size_t>(rm.size()));
}

template <typename Derived>
void get_tensor(ByteReader& r, Eigen::PlainObjectBase<Derived>& t, const char* field) {
    using S = typename Derived::Scalar;
    const auto rows = r.get<std::uint32_t>(field);
    const auto cols = r.get<std::uint32_t>(field);
    if (Derived::ColsAtCompileTime == 1 && cols != 1)
        throw FormatError(std::string(field) + ": expected a column vector", r.offset());
    MatrixX<S> rm(rows, cols);
    r.get_array(rm.data(), static_cast<std::size_t>(rows) * cols, field);
    if (!rm.allFinite()) throw DataError(std::string(field) + ": non-finite value");
    t = rm;
}

}  // namespace usae::io
