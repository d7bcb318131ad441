#include "usae/activation_store.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

#include "usae/binary_io.hpp"

namespace usae {

using nlohmann::json;

std::vector<unsigned char> encode_shard(const ActivationShard& shard) {
    check_finite(shard.values, "write_shard(" + shard.model_id + ")");
    io::ByteWriter w;
    w.put_magic("USAE");
    w.put(kShardVersion);
    w.put(kDtypeF32);
    w.put_string(shard.model_id);
    w.put(shard.n_tokens());
    w.put(shard.dim());
    w.put_array(shard.values.data(), static_cast<std::size_t>(shard.values.size()));
    return w.bytes();
}

ActivationShard decode_shard(std::vector<unsigned char> bytes) {
    io::ByteReader r(std::move(bytes));
    r.expect_magic("USAE");
    const auto version_at = r.offset();
    if (r.get<std::uint16_t>("version") != kShardVersion) throw FormatError("unsupported shard version", version_at);
    const auto dtype_at = r.offset();
    if (r.get<std::uint8_t>("dtype") != kDtypeF32) throw FormatError("unsupported dtype", dtype_at);
    ActivationShard shard;
    shard.model_id = r.get_string("model_id");
    const auto n = r.get<std::uint64_t>("n_tokens");
    const auto d = r.get<std::uint32_t>("dim");
    const auto payload_at = r.offset();
    if (d != 0 && n > r.remaining() / sizeof(float) / d) {
        throw FormatError("truncated payload: header declares " + std::to_string(n) + "x" + std::to_string(d) +
                              " floats, file holds " + std::to_string(r.remaining() / sizeof(float)),
                          payload_at);
    }
    shard.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    r.get_array(shard.values.data(), static_cast<std::size_t>(n) * d, "payload");
    r.expect_end();
    for (Eigen::Index i = 0; i < shard.values.rows(); ++i)
        for (Eigen::Index j = 0; j < shard.values.cols(); ++j)
            if (!std::isfinite(shard.values(i, j)))
                throw DataError("shard " + shard.model_id + ": non-finite value at row " + std::to_string(i) +
                                ", column " + std::to_string(j));
    return shard;
}

void write_shard(const ActivationShard& shard, const std::filesystem::path& path) {
    io::write_binary_file(path, encode_shard(shard));
}

ActivationShard read_shard(const std::filesystem::path& path) {
    try {
        return decode_shard(io::read_binary_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    const std::string text = io::read_text_file(path);
    DatasetManifest m;
    try {
        const json doc = json::parse(text);
        m.token_alignment = doc.value("token_alignment", true);
        m.n_tokens_total = doc.at("n_tokens_total").get<std::uint64_t>();
        for (const auto& entry : doc.at("models")) {
            ModelEntry e;
            e.model_id = entry.at("model_id").get<std::string>();
            e.dim = entry.at("dim").get<std::uint32_t>();
            for (const auto& s : entry.at("shards")) e.shards.emplace_back(s.get<std::string>());
            m.models.push_back(std::move(e));
        }
    } catch (const json::parse_error& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what(), e.byte);
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    if (m.models.empty()) throw DataError("manifest " + path.string() + ": no models");
    m.base_dir = path.parent_path();
    return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    json doc;
    doc["format"] = "usae-manifest";
    doc["version"] = 1;
    doc["token_alignment"] = manifest.token_alignment;
    doc["n_tokens_total"] = manifest.n_tokens_total;
    doc["models"] = json::array();
    for (const auto& e : manifest.models) {
        json shards = json::array();
        for (const auto& s : e.shards) shards.push_back(s.generic_string());
        doc["models"].push_back({{"model_id", e.model_id}, {"dim", e.dim}, {"shards", shards}});
    }
    io::write_text_file(path, doc.dump(2) + "\n");
}

ActivationDataset load_dataset(const DatasetManifest& manifest) {
    ActivationDataset data;
    data.manifest = manifest;
    for (const auto& entry : manifest.models) {
        std::vector<Matrix> parts;
        Eigen::Index rows = 0;
        for (const auto& rel : entry.shards) {
            ActivationShard s = read_shard(manifest.base_dir / rel);
            if (s.dim() != entry.dim) {
                throw DataError("shard " + (manifest.base_dir / rel).string() + " has dim " +
                                std::to_string(s.dim()) + ", manifest says " + std::to_string(entry.dim));
            }
            rows += s.values.rows();
            parts.push_back(std::move(s.values));
        }
        Matrix all(rows, entry.dim);
        Eigen::Index at = 0;
        for (const auto& p : parts) {
            all.middleRows(at, p.rows()) = p;
            at += p.rows();
        }
        if (manifest.token_alignment && static_cast<std::uint64_t>(rows) != manifest.n_tokens_total) {
            throw DataError("model " + entry.model_id + " has " + std::to_string(rows) +
                            " tokens, manifest declares " + std::to_string(manifest.n_tokens_total));
        }
        data.activations.push_back(std::move(all));
    }
    if (data.n_tokens() == 0) throw DataError("dataset is empty");
    return data;
}

ActivationDataset load_dataset(const std::filesystem::path& manifest_path) {
    return load_dataset(read_manifest(manifest_path));
}

Standardizer Standardizer::identity(Eigen::Index dim) {
    Standardizer s;
    s.mean = Vector::Zero(dim);
    s.stddev = Vector::Ones(dim);
    return s;
}

Matrix Standardizer::apply(const Matrix& raw) const {
    if (raw.cols() != mean.size()) throw ShapeError("Standardizer::apply: width mismatch");
    Matrix out(raw.rows(), raw.cols());
    for (Eigen::Index i = 0; i < raw.rows(); ++i)
        for (Eigen::Index j = 0; j < raw.cols(); ++j) out(i, j) = (raw(i, j) - mean[j]) / stddev[j];
    return out;
}

Matrix Standardizer::invert(const Matrix& standardized) const {
    if (standardized.cols() != mean.size()) throw ShapeError("Standardizer::invert: width mismatch");
    Matrix out(standardized.rows(), standardized.cols());
    for (Eigen::Index i = 0; i < standardized.rows(); ++i)
        for (Eigen::Index j = 0; j < standardized.cols(); ++j)
            out(i, j) = standardized(i, j) * stddev[j] + mean[j];
    return out;
}

std::vector<Standardizer> fit_standardizers(const ActivationDataset& data, std::size_t samples, SeededRng& rng,
                                            float eps) {
    const auto n = static_cast<std::size_t>(data.n_tokens());
    if (n == 0 || data.model_count() == 0) throw DataError("fit_standardizer: empty dataset");
    if (samples < 1 || samples > n)
        throw ParameterError("fit_standardizer: samples=" + std::to_string(samples) + " exceeds " +
                             std::to_string(n) + " tokens");
    // Partial Fisher-Yates: the first `samples` slots are a uniform draw without replacement.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < samples; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
    idx.resize(samples);

    std::vector<Standardizer> out;
    for (const Matrix& a : data.activations) {
        const Eigen::Index d = a.cols();
        VectorD sum = VectorD::Zero(d), sq = VectorD::Zero(d);
        for (std::size_t r : idx) {
            const auto row = a.row(static_cast<Eigen::Index>(r)).cast<double>();
            sum += row.transpose();
        }
        const VectorD mu = sum / static_cast<double>(samples);
        for (std::size_t r : idx) {
            const VectorD dev = a.row(static_cast<Eigen::Index>(r)).cast<double>().transpose() - mu;
            sq += dev.cwiseProduct(dev);
        }
        Standardizer s;
        s.eps = eps;
        s.sample_count = samples;
        s.mean = mu.cast<float>();
        s.stddev = (sq / static_cast<double>(samples)).cwiseSqrt().cast<float>().cwiseMax(eps);
        out.push_back(std::move(s));
    }
    return out;
}

Matrix gather_rows(const Matrix& values, std::span<const std::size_t> indices, const Standardizer& st) {
    if (st.mean.size() != values.cols()) throw ShapeError("gather_rows: standardizer width mismatch");
    Matrix out(static_cast<Eigen::Index>(indices.size()), values.cols());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto r = static_cast<Eigen::Index>(indices[b]);
        if (r >= values.rows()) throw DataError("gather_rows: row index out of range");
        for (Eigen::Index j = 0; j < values.cols(); ++j)
            out(static_cast<Eigen::Index>(b), j) = (values(r, j) - st.mean[j]) / st.stddev[j];
    }
    return out;
}

BatchSampler::BatchSampler(std::size_t n_rows, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed), order_(n_rows) {
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (batch_size > n_rows)
        throw ParameterError("batch_size " + std::to_string(batch_size) + " exceeds " + std::to_string(n_rows) +
                             " tokens");
    reshuffle();
}

void BatchSampler::reshuffle() {
    std::iota(order_.begin(), order_.end(), 0u);
    rng_.shuffle(std::span<std::uint32_t>(order_));
    cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
    if (order_.size() - cursor_ < batch_size_) reshuffle();
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
    cursor_ += batch_size_;
    return out;
}

BatchSampler::State BatchSampler::state() const { return {rng_.state(), order_, cursor_}; }

void BatchSampler::set_state(const State& s) {
    if (s.order.size() != order_.size() || s.cursor > s.order.size())
        throw ContractError("BatchSampler::set_state: state does not match sampler size");
    rng_.set_state(s.rng);
    order_ = s.order;
    cursor_ = static_cast<std::size_t>(s.cursor);
}

namespace {
std::vector<std::size_t> draw_rows(std::size_t n, std::size_t batch_size, SeededRng& rng) {
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (batch_size > n)
        throw ParameterError("batch_size " + std::to_string(batch_size) + " exceeds " + std::to_string(n) +
                             " tokens");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < batch_size; ++i) std::swap(idx[i], idx[i + rng.uniform_int(n - i)]);
    idx.resize(batch_size);
    return idx;
}
}  // namespace

Matrix sample_batch(const ActivationDataset& data, const std::vector<Standardizer>& standardizers,
                    std::size_t model_index, std::size_t batch_size, SeededRng& rng) {
    if (model_index >= data.model_count()) throw ParameterError("sample_batch: model index out of range");
    const auto rows = draw_rows(static_cast<std::size_t>(data.n_tokens()), batch_size, rng);
    return gather_rows(data.activations[model_index], rows, standardizers.at(model_index));
}

AlignedBatch sample_aligned_batch(const ActivationDataset& data, const std::vector<Standardizer>& standardizers,
                                  std::size_t batch_size, SeededRng& rng) {
    AlignedBatch batch;
    batch.rows = draw_rows(static_cast<std::size_t>(data.n_tokens()), batch_size, rng);
    for (std::size_t i = 0; i < data.model_count(); ++i)
        batch.per_model.push_back(gather_rows(data.activations[i], batch.rows, standardizers.at(i)));
    return batch;
}

}  // namespace usae
