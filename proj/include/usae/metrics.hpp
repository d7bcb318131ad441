#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "usae/numerics.hpp"
#include "usae/sae.hpp"
#include "usae/trainer.hpp"

namespace usae {

// 1 - ||A - A_hat||_F^2 / ||A - mean(A)||_F^2, with the mean taken per column.
template <typename DA, typename DB>
double r2(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& a_hat) {
    check_same_shape(a.rows(), a.cols(), a_hat.rows(), a_hat.cols(), "r2");
    if (a.rows() == 0) throw DegenerateInputError("r2: no rows");
    double resid = 0.0, total = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
        double mean = 0.0;
        for (Eigen::Index i = 0; i < a.rows(); ++i) mean += static_cast<double>(a(i, j));
        mean /= static_cast<double>(a.rows());
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double x = static_cast<double>(a(i, j));
            const double e = x - static_cast<double>(a_hat(i, j));
            resid += e * e;
            total += (x - mean) * (x - mean);
        }
    }
    if (total <= 0.0) throw DegenerateInputError("r2: zero total sum of squares");
    return 1.0 - resid / total;
}

// Entry (i, j): R^2 of model j's activations decoded through D_j from model
// i's eval-mode codes. `standardized` holds the aligned evaluation rows.
MatrixD r2_matrix(const UsaeModel& model, const std::vector<Matrix>& standardized);

// Standardized rows `rows` of every model (all rows when empty).
std::vector<Matrix> standardized_rows(const UsaeModel& model, const ActivationDataset& data,
                                      std::span<const std::size_t> rows = {});

// (mean_x Z_k(x))^2 * ||D_k||^2 per concept.
VectorD concept_energy(const CodeBatch<float>& codes, const Dictionary<float>& dict);

struct ConceptEnergy {
    MatrixD per_model;  // M x m

    VectorD mean_over_models() const { return per_model.colwise().mean().transpose(); }
};

ConceptEnergy energies(const UsaeModel& model, const std::vector<CodeBatch<float>>& codes);

struct FiringStats {
    double tau = 0.0;
    std::size_t rows = 0;
    Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic> fires;  // M x m, |F_k^(i)|
    std::vector<std::uint64_t> cofires;                                   // |C_k|
    MatrixD p;    // M x m
    VectorD fe;   // m
    MatrixD cfp;  // M x m

    std::size_t model_count() const { return static_cast<std::size_t>(fires.rows()); }
    std::size_t concepts() const { return static_cast<std::size_t>(fires.cols()); }
};

// Fires: Z_k^(i)(x) > tau. Co-fires: fires in every model on the same row.
// FE uses 0 log 0 := 0; CFP is 0 for a model with no fires.
FiringStats firing_stats(std::span<const CodeBatch<float>> codes, double tau = 0.0);

struct EnergyUniversality {
    PearsonResult all;
    std::optional<PearsonResult> filtered;  // concepts with >= min_cofires; empty if < 2 or degenerate
    std::size_t n_all = 0;
    std::size_t n_filtered = 0;
    std::uint64_t min_cofires = 0;
};

// Pearson r / OLS slope of energy against co-fire count.
EnergyUniversality energy_universality(const FiringStats& stats, const VectorD& energy,
                                       std::uint64_t min_cofires = 1000);

std::string r2_csv(const MatrixD& r2, const std::vector<std::string>& ids);
std::string firing_csv(const FiringStats& stats, const ConceptEnergy& energy);

}  // namespace usae
