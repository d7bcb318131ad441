#include "usae/align.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace usae {

MatrixD cosine_matrix(const Matrix& d1, const Matrix& d2) {
    if (d1.cols() != d2.cols()) throw ShapeError("cosine_matrix: dictionaries have different widths");
    const auto sq_norms = [](const Matrix& d, const char* which) {
        VectorD n(d.rows());
        for (Eigen::Index r = 0; r < d.rows(); ++r) {
            double s = 0.0;
            for (Eigen::Index c = 0; c < d.cols(); ++c) s += static_cast<double>(d(r, c)) * static_cast<double>(d(r, c));
            if (s == 0.0) throw DegenerateInputError(std::string("cosine_matrix: zero-norm row ") + std::to_string(r) + " in " + which);
            n[r] = s;
        }
        return n;
    };
    const VectorD n1 = sq_norms(d1, "first dictionary");
    const VectorD n2 = sq_norms(d2, "second dictionary");
    MatrixD out(d1.rows(), d2.rows());
    parallel_rows(d1.rows(), d2.rows() * d1.cols(), [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
        for (std::ptrdiff_t a = begin; a < end; ++a)
            for (Eigen::Index b = 0; b < d2.rows(); ++b) {
                double dot = 0.0;
                for (Eigen::Index c = 0; c < d1.cols(); ++c)
                    dot += static_cast<double>(d1(a, c)) * static_cast<double>(d2(b, c));
                // sqrt(x * x) == x exactly, so identical rows give exactly 1.
                out(a, b) = std::clamp(dot / std::sqrt(n1[a] * n2[b]), -1.0, 1.0);
            }
    });
    return out;
}

Assignment hungarian_rectangular(const MatrixD& cost) {
    const Eigen::Index n = cost.rows(), m = cost.cols();
    if (n > m) throw ParameterError("hungarian: more rows than columns");
    if (!cost.allFinite()) throw DataError("hungarian: non-finite cost");
    Assignment out;
    if (n == 0) return out;

    // 1-based potentials u (rows), v (cols); p[j] = row matched to column j.
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<Eigen::Index> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
    std::vector<double> minv(static_cast<std::size_t>(m) + 1);
    std::vector<char> used(static_cast<std::size_t>(m) + 1);
    for (Eigen::Index i = 1; i <= n; ++i) {
        p[0] = i;
        Eigen::Index j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const Eigen::Index i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            Eigen::Index j1 = 0;
            for (Eigen::Index j = 1; j <= m; ++j) {
                const auto js = static_cast<std::size_t>(j);
                if (used[js]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[js];
                if (cur < minv[js]) {
                    minv[js] = cur;
                    way[js] = j0;
                }
                if (minv[js] < delta) {
                    delta = minv[js];
                    j1 = j;
                }
            }
            for (Eigen::Index j = 0; j <= m; ++j) {
                const auto js = static_cast<std::size_t>(j);
                if (used[js]) {
                    u[static_cast<std::size_t>(p[js])] += delta;
                    v[js] -= delta;
                } else {
                    minv[js] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    out.col_of_row.assign(static_cast<std::size_t>(n), 0);
    for (Eigen::Index j = 1; j <= m; ++j)
        if (p[static_cast<std::size_t>(j)] != 0)
            out.col_of_row[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = static_cast<std::size_t>(j - 1);
    for (Eigen::Index r = 0; r < n; ++r)
        out.total += cost(r, static_cast<Eigen::Index>(out.col_of_row[static_cast<std::size_t>(r)]));
    return out;
}

Assignment hungarian(const MatrixD& cost) {
    if (cost.rows() != cost.cols())
        throw ParameterError("hungarian: cost matrix is " + std::to_string(cost.rows()) + "x" +
                             std::to_string(cost.cols()) + ", expected square");
    return hungarian_rectangular(cost);
}

double survival_fraction(std::span<const double> sims, double t) {
    if (sims.empty()) return 0.0;
    std::size_t count = 0;
    for (double s : sims)
        if (s >= t) ++count;
    return static_cast<double>(count) / static_cast<double>(sims.size());
}

double survival_auc(std::span<const double> sims) {
    constexpr int kIntervals = 1000;
    double area = 0.0;
    double prev = survival_fraction(sims, 0.0);
    for (int g = 1; g <= kIntervals; ++g) {
        const double cur = survival_fraction(sims, static_cast<double>(g) / kIntervals);
        area += 0.5 * (prev + cur) / kIntervals;
        prev = cur;
    }
    return area;
}

ConceptMatchResult consistency(const Matrix& d1, const Matrix& d2, double threshold) {
    const MatrixD sim = cosine_matrix(d1, d2);
    ConceptMatchResult r;
    r.threshold = threshold;
    if (d1.rows() > d2.rows()) throw ParameterError("consistency: first dictionary has more rows than the second");
    r.assignment = hungarian_rectangular(-sim).col_of_row;
    for (std::size_t a = 0; a < r.assignment.size(); ++a)
        r.similarities.push_back(sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(r.assignment[a])));
    r.auc = survival_auc(r.similarities);
    std::size_t above = 0;
    for (double s : r.similarities)
        if (s > threshold) ++above;
    r.frac_above = r.similarities.empty() ? 0.0 : static_cast<double>(above) / static_cast<double>(r.similarities.size());
    return r;
}

Matrix random_baseline(const Matrix& dictionary, SeededRng& rng) {
    const Eigen::Index rows = dictionary.rows(), cols = dictionary.cols();
    Matrix out(rows, cols);
    if (rows == 0) return out;
    VectorD mean(cols), sd(cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        double mu = 0.0;
        for (Eigen::Index r = 0; r < rows; ++r) mu += static_cast<double>(dictionary(r, c));
        mu /= static_cast<double>(rows);
        double var = 0.0;
        for (Eigen::Index r = 0; r < rows; ++r) {
            const double dv = static_cast<double>(dictionary(r, c)) - mu;
            var += dv * dv;
        }
        mean[c] = mu;
        sd[c] = std::sqrt(var / static_cast<double>(rows));
    }
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = static_cast<float>(rng.normal(mean[c], sd[c]));
    return out;
}

std::string consistency_csv(const ConceptMatchResult& r) {
    std::string out = "concept,matched,similarity\n";
    char buf[128];
    for (std::size_t a = 0; a < r.assignment.size(); ++a) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", a, r.assignment[a], r.similarities[a]);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "summary,auc=%.9g,frac_above_%.3g=%.9g\n", r.auc, r.threshold, r.frac_above);
    return out + buf;
}

}  // namespace usae
