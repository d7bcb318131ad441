#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "usae/numerics.hpp"
#include "usae/rng.hpp"

namespace usae {

// cos(d1_a, d2_b) for every pair of rows, computed in double precision.
MatrixD cosine_matrix(const Matrix& d1, const Matrix& d2);

struct Assignment {
    std::vector<std::size_t> col_of_row;
    double total = 0.0;  // sum of cost(r, col_of_row[r]) in row order
};

// Minimum-cost perfect matching of a square cost matrix; O(m^3) shortest
// augmenting paths with dual potentials.
Assignment hungarian(const MatrixD& cost);

// Rows <= cols: every row gets a distinct column.
Assignment hungarian_rectangular(const MatrixD& cost);

struct ConceptMatchResult {
    std::vector<std::size_t> assignment;  // row a of d1 <-> row assignment[a] of d2
    std::vector<double> similarities;     // matched cosine per row of d1
    double auc = 0.0;
    double frac_above = 0.0;
    double threshold = 0.5;
};

// Survival curve C(t) = fraction of similarities >= t. The AUC integrates it
// over t in [0, 1] by the trapezoid rule on 1001 evenly spaced points, so
// negative similarities contribute nothing.
double survival_fraction(std::span<const double> similarities, double t);
double survival_auc(std::span<const double> similarities);

// Hungarian matching on -cosine, then the curve statistics. frac_above is the
// fraction of matched pairs with cosine strictly above `threshold`. d1 may have fewer
// rows than d2; every row of d1 is matched.
ConceptMatchResult consistency(const Matrix& d1, const Matrix& d2, double threshold = 0.5);

// Same shape as `dictionary`; entry (r, c) ~ N(mean_c, var_c) using the
// source's per-column population mean and variance.
Matrix random_baseline(const Matrix& dictionary, SeededRng& rng);

std::string consistency_csv(const ConceptMatchResult& r);

}  // namespace usae
