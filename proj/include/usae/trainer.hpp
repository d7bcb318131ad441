#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "usae/activation_store.hpp"
#include "usae/rng.hpp"
#include "usae/sae.hpp"

namespace usae {

struct TrainConfig {
    std::uint64_t total_steps = 1000;
    std::size_t batch_size = 256;
    std::size_t k = 4;
    std::size_t m = 0;  // 0 selects 8 x the widest model
    double lr0 = 3e-4;
    double lr_final = 1e-6;
    double warmup_fraction = 0.01;
    LossMode loss = LossMode::l1;
    std::uint64_t seed = 0;
    bool unit_norm = true;
    bool bn_enabled = true;
    bool step_all_decoders = false;
    std::uint64_t checkpoint_every = 0;  // 0: final checkpoint only
    std::size_t standardizer_samples = 1000;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

// M encoder/dictionary pairs sharing one m-dimensional code space, plus the
// complete optimizer and sampler state needed to resume bit-exactly.
struct UsaeModel {
    TrainConfig config;
    std::vector<std::string> model_ids;
    std::vector<Standardizer> standardizers;
    std::vector<EncoderParams<float>> encoders;
    std::vector<Dictionary<float>> dictionaries;
    std::vector<EncoderAdam<float>> encoder_adam;
    std::vector<DictionaryAdam<float>> dictionary_adam;
    std::vector<std::uint64_t> updates;  // optimizer steps taken per pair

    std::uint64_t step = 0;
    SeededRng selection_rng;
    std::optional<BatchSampler::State> sampler;

    std::size_t model_count() const { return encoders.size(); }
    Eigen::Index concepts() const { return dictionaries.empty() ? 0 : dictionaries.front().concepts(); }
    void validate() const;
};

// Seeds for the independent random streams derived from TrainConfig::seed.
struct StreamSeeds {
    std::uint64_t selection, batches, standardizer, init;
    static StreamSeeds from(std::uint64_t seed);
};

// Fresh model: W_enc ~ N(0, 1/d_i), b_pre = 0, gamma = 1, beta = 0, atoms
// ~ N(0, 1/d_j) with unit rows.
UsaeModel init_model(const std::vector<std::string>& model_ids, const std::vector<Eigen::Index>& dims,
                     const TrainConfig& config, std::vector<Standardizer> standardizers);

// Linear warmup 0 -> lr0, then cosine decay lr0 -> lr_final at step T-1.
double lr_at(std::uint64_t step, const TrainConfig& config);
std::uint64_t warmup_steps(const TrainConfig& config);

struct StepReport {
    std::uint64_t step = 0;
    std::size_t chosen = 0;
    double loss_total = 0.0;
    std::vector<double> losses;
    double lr = 0.0;
};

// One universal update: encode model `chosen`'s batch, decode through every
// dictionary, sum the losses, and step only pair `chosen` (every decoder
// when config.step_all_decoders). `batch` holds aligned rows for all models.
StepReport train_step(UsaeModel& model, const std::vector<Matrix>& batch, std::size_t chosen, double lr);

// Drives train_step with the model's own selection stream and a BatchSampler.
class Trainer {
public:
    Trainer(UsaeModel& model, const ActivationDataset& data);

    bool done() const { return model_.step >= model_.config.total_steps; }
    StepReport step();

private:
    UsaeModel& model_;
    const ActivationDataset& data_;
    BatchSampler sampler_;
};

struct TrainOptions {
    std::filesystem::path out_dir;  // checkpoints + log; empty: nothing written
    std::optional<UsaeModel> resume;
    std::function<void(const StepReport&)> on_step;
};

struct TrainResult {
    UsaeModel model;
    std::vector<StepReport> log;
};

// Fits standardizers, initializes (or resumes) and runs to total_steps.
// Writes train_log.csv, checkpoint_<step>.usae at the configured cadence and
// model.usae at the end when out_dir is set.
TrainResult train(const ActivationDataset& data, const TrainConfig& config, TrainOptions options = {});

std::string log_csv_header(std::size_t model_count);
std::string log_csv_row(const StepReport& r);

std::vector<unsigned char> encode_checkpoint(const UsaeModel& model);
UsaeModel decode_checkpoint(std::vector<unsigned char> bytes);
void save_checkpoint(const UsaeModel& model, const std::filesystem::path& path);
UsaeModel load_checkpoint(const std::filesystem::path& path);

// Eval-mode codes of model i for rows already standardized with its Standardizer.
CodeBatch<float> encode_standardized(const UsaeModel& model, std::size_t i, const Matrix& standardized);
// Standardizes raw activations with model i's Standardizer first.
CodeBatch<float> encode_raw(const UsaeModel& model, std::size_t i, const Matrix& raw);

}  // namespace usae
