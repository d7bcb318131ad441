#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "usae/activation_store.hpp"
#include "usae/align.hpp"
#include "usae/metrics.hpp"
#include "usae/sae.hpp"
#include "usae/trainer.hpp"

namespace usae {

// Generative model for M token-aligned activation sets sharing sparse concepts.
struct SynthSpec {
    std::vector<Eigen::Index> dims{16, 24, 32};  // one width per model
    std::size_t concepts = 48;                   // m*
    std::size_t sparsity = 4;                    // k*
    std::size_t tokens = 50000;
    double value_lo = 0.5;
    double value_hi = 2.0;
    double noise_sigma = 0.01;
    double universal_fraction = 0.75;
    std::uint64_t seed = 0;

    std::size_t models() const { return dims.size(); }
    void validate() const;
};

using PresenceMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GroundTruth {
    CodeBatch<float> codes;            // n x m*, exactly k* entries per row, unmasked values
    std::vector<Matrix> dictionaries;  // per model, m* x d_i, unit rows
    PresenceMask mask;                 // m* x M

    std::size_t models() const { return dictionaries.size(); }
    Eigen::Index concepts() const { return mask.rows(); }
    bool universal(Eigen::Index c) const { return (mask.row(c).array() != 0).all(); }
};

struct SynthDataset {
    GroundTruth truth;
    std::vector<ActivationShard> shards;
};

// Per token, k* distinct concepts with values ~ U[value_lo, value_hi]; model
// i sees sum over present concepts of value * D*_i row, plus N(0, sigma^2).
// round(u * m*) concepts are present everywhere; each remaining concept is
// absent from a uniformly drawn nonempty proper subset of the models.
SynthDataset generate(const SynthSpec& spec);

// manifest.json, model_<i>.usae, truth.usgt under `dir`.
std::filesystem::path write_synth(const SynthDataset& data, const std::filesystem::path& dir);

void write_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth read_truth(const std::filesystem::path& path);

struct ModelRecovery {
    std::vector<std::size_t> truth_concepts;    // truth concepts present in this model
    std::vector<std::size_t> learned_concepts;  // matched learned row, same order
    std::vector<double> cosines;
    double mean_cosine = 0.0;
    double hit_rate = 0.0;
};

// Per model: Hungarian matching of the present truth atoms against the
// learned atoms (zero-norm learned rows score cosine 0).
std::vector<ModelRecovery> recovery_score(const std::vector<Matrix>& learned, const GroundTruth& truth,
                                          double hit_threshold = 0.9);
std::vector<ModelRecovery> recovery_score(const UsaeModel& model, const GroundTruth& truth,
                                          double hit_threshold = 0.9);

struct UniversalityReport {
    double mean_fe_universal = 0.0;
    double mean_fe_partial = 0.0;
    std::size_t n_universal = 0;
    std::size_t n_partial = 0;
    std::size_t skipped = 0;    // matches below min_cosine
    std::size_t conflicts = 0;  // learned concepts matched to both kinds
};

// Mean firing entropy of learned concepts matched (cosine >= min_cosine) to
// universal truth concepts versus those matched to partial ones.
UniversalityReport universality_oracle(const GroundTruth& truth, const FiringStats& stats,
                                       const std::vector<ModelRecovery>& recovery, double min_cosine = 0.9);

// Model whose pairs are built from the truth: D_i = D*_i and
// W_i = (D*_i D*_i^T)^-1 D*_i, BN off, identity standardizers. Exact when
// m* <= every d_i and all concepts are present everywhere.
UsaeModel oracle_model(const GroundTruth& truth, std::size_t k);

std::string recovery_csv(const std::vector<ModelRecovery>& rec, const std::vector<std::string>& ids);

}  // namespace usae
