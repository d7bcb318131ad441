#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "usae/numerics.hpp"
#include "usae/rng.hpp"

namespace usae {

// One model's token-level activations.
//
// On-disk layout (little-endian throughout):
//   "USAE" | u16 version=1 | u8 dtype (1 = f32) | u32 len + model_id UTF-8 |
//   u64 n_tokens | u32 dim | n_tokens*dim f32, row-major
struct ActivationShard {
    std::string model_id;
    Matrix values;  // n_tokens x dim

    std::uint64_t n_tokens() const { return static_cast<std::uint64_t>(values.rows()); }
    std::uint32_t dim() const { return static_cast<std::uint32_t>(values.cols()); }
};

inline constexpr std::uint16_t kShardVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

std::vector<unsigned char> encode_shard(const ActivationShard& shard);
ActivationShard decode_shard(std::vector<unsigned char> bytes);
void write_shard(const ActivationShard& shard, const std::filesystem::path& path);
ActivationShard read_shard(const std::filesystem::path& path);

struct ModelEntry {
    std::string model_id;
    std::uint32_t dim = 0;
    std::vector<std::filesystem::path> shards;  // relative to the manifest directory
};

// JSON document listing models in a fixed order; the order defines the model index.
struct DatasetManifest {
    std::vector<ModelEntry> models;
    std::uint64_t n_tokens_total = 0;
    bool token_alignment = true;
    std::filesystem::path base_dir;  // not serialized; set on read

    std::size_t model_count() const { return models.size(); }
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Manifest with every shard loaded and concatenated per model.
struct ActivationDataset {
    DatasetManifest manifest;
    std::vector<Matrix> activations;  // per model, n_tokens_total x dim

    std::size_t model_count() const { return activations.size(); }
    Eigen::Index n_tokens() const { return activations.empty() ? 0 : activations.front().rows(); }
};

ActivationDataset load_dataset(const DatasetManifest& manifest);
ActivationDataset load_dataset(const std::filesystem::path& manifest_path);

// Per-dimension affine normalization x -> (x - mean) / std, std floored at eps.
struct Standardizer {
    Vector mean;
    Vector stddev;
    std::uint64_t sample_count = 0;
    float eps = 1e-6f;

    static Standardizer identity(Eigen::Index dim);

    Matrix apply(const Matrix& raw) const;
    Matrix invert(const Matrix& standardized) const;
};

// Fits one Standardizer per model from `samples` rows drawn without
// replacement; the same rows are used for every model. Population variance.
std::vector<Standardizer> fit_standardizers(const ActivationDataset& data, std::size_t samples, SeededRng& rng,
                                            float eps = 1e-6f);

// Rows `indices` of `values`, standardized.
Matrix gather_rows(const Matrix& values, std::span<const std::size_t> indices, const Standardizer& standardizer);

// Epoch-based index sampler: a shuffled permutation is consumed batch by
// batch without replacement and reshuffled when fewer than batch_size rows
// remain. One index list serves every model, which keeps batches aligned.
class BatchSampler {
public:
    BatchSampler(std::size_t n_rows, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next();

    std::size_t batch_size() const noexcept { return batch_size_; }
    std::size_t n_rows() const noexcept { return order_.size(); }

    // Full state, for checkpoint/resume.
    struct State {
        SeededRng::State rng;
        std::vector<std::uint32_t> order;
        std::uint64_t cursor = 0;
    };
    State state() const;
    void set_state(const State& s);

private:
    void reshuffle();

    std::size_t batch_size_;
    SeededRng rng_;
    std::vector<std::uint32_t> order_;
    std::size_t cursor_ = 0;
};

// One-off batch of distinct rows for model `model_index`.
Matrix sample_batch(const ActivationDataset& data, const std::vector<Standardizer>& standardizers,
                    std::size_t model_index, std::size_t batch_size, SeededRng& rng);

struct AlignedBatch {
    std::vector<std::size_t> rows;
    std::vector<Matrix> per_model;
};

// Same row indices for every model.
AlignedBatch sample_aligned_batch(const ActivationDataset& data, const std::vector<Standardizer>& standardizers,
                                  std::size_t batch_size, SeededRng& rng);

}  // namespace usae
