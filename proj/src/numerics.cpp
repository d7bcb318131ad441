#include "usae/numerics.hpp"

#include <atomic>
#include <functional>

namespace usae {

namespace {
std::atomic<unsigned> g_threads{1};
// Below this many multiply-adds a kernel stays on the calling thread.
constexpr std::ptrdiff_t kMinParallelWork = 1 << 16;
}  // namespace

void set_num_threads(unsigned n) { g_threads = std::max(1u, n); }
unsigned num_threads() { return g_threads; }

namespace detail {

void parallel_rows_impl(std::ptrdiff_t rows, std::ptrdiff_t work_per_row,
                        const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& body) {
    const auto threads = static_cast<std::ptrdiff_t>(g_threads.load());
    if (threads <= 1 || rows < 2 || rows * work_per_row < kMinParallelWork) {
        body(0, rows);
        return;
    }
    const std::ptrdiff_t workers = std::min(threads, rows);
    const std::ptrdiff_t chunk = (rows + workers - 1) / workers;
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (std::ptrdiff_t w = 1; w < workers; ++w) {
        const std::ptrdiff_t begin = w * chunk;
        const std::ptrdiff_t end = std::min(rows, begin + chunk);
        if (begin < end) pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(rows, chunk));
}

}  // namespace detail

PearsonResult pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
    if (x.size() < 2) throw ParameterError("pearson: need at least two pairs");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw DegenerateInputError("pearson: zero variance");
    return {sxy / std::sqrt(sxx * syy), sxy / sxx};
}

}  // namespace usae
