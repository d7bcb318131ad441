#include "usae/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "usae/codes_io.hpp"
#include "usae/tensor_io.hpp"

namespace usae {

void SynthSpec::validate() const {
    if (dims.empty()) throw ParameterError("synth: need at least one model");
    for (auto d : dims)
        if (d < 1) throw ParameterError("synth: dims must be >= 1");
    if (concepts < 1) throw ParameterError("synth: need at least one concept");
    if (sparsity < 1 || sparsity > concepts) throw ParameterError("synth: k* must lie in [1, m*]");
    if (tokens < 1) throw ParameterError("synth: need at least one token");
    if (!(value_lo > 0 && value_hi >= value_lo)) throw ParameterError("synth: value range must be positive");
    if (noise_sigma < 0) throw ParameterError("synth: noise_sigma must be >= 0");
    if (!(universal_fraction >= 0 && universal_fraction <= 1))
        throw ParameterError("synth: universal_fraction must lie in [0, 1]");
}

SynthDataset generate(const SynthSpec& spec) {
    spec.validate();
    SeededRng rng(spec.seed);
    const std::size_t n_models = spec.models();
    const auto m = static_cast<Eigen::Index>(spec.concepts);

    SynthDataset out;
    GroundTruth& t = out.truth;
    for (const Eigen::Index d : spec.dims) {
        Matrix D(m, d);
        for (Eigen::Index r = 0; r < m; ++r)
            for (Eigen::Index c = 0; c < d; ++c) D(r, c) = static_cast<float>(rng.normal());
        Dictionary<float> tmp{std::move(D), true};
        tmp.normalize_rows();
        t.dictionaries.push_back(std::move(tmp.atoms));
    }

    t.mask.setOnes(m, static_cast<Eigen::Index>(n_models));
    std::vector<std::size_t> order(spec.concepts);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_universal = static_cast<std::size_t>(std::llround(spec.universal_fraction * static_cast<double>(spec.concepts)));
    if (n_models >= 2) {
        // Nonempty proper subsets of [M] are the bit patterns 1 .. 2^M - 2.
        const std::uint64_t patterns = (std::uint64_t{1} << n_models) - 2;
        for (std::size_t q = n_universal; q < spec.concepts; ++q) {
            const std::uint64_t zeroed = 1 + rng.uniform_int(patterns);
            for (std::size_t i = 0; i < n_models; ++i)
                if (zeroed & (std::uint64_t{1} << i)) t.mask(static_cast<Eigen::Index>(order[q]), static_cast<Eigen::Index>(i)) = 0;
        }
    }

    t.codes.m = m;
    t.codes.entries.reserve(spec.tokens * spec.sparsity);
    std::vector<std::size_t> pool(spec.concepts);
    std::vector<CodeBatch<float>::Entry> row;
    for (std::size_t tok = 0; tok < spec.tokens; ++tok) {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        row.clear();
        for (std::size_t s = 0; s < spec.sparsity; ++s) {
            std::swap(pool[s], pool[s + rng.uniform_int(spec.concepts - s)]);
            row.push_back({static_cast<std::uint32_t>(pool[s]), 0.0f});
        }
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
        for (auto& e : row) e.value = static_cast<float>(rng.uniform(spec.value_lo, spec.value_hi));
        t.codes.push_row(row);
    }

    for (std::size_t i = 0; i < n_models; ++i) {
        const Matrix& D = t.dictionaries[i];
        ActivationShard shard;
        shard.model_id = "model_" + std::to_string(i);
        shard.values.setZero(static_cast<Eigen::Index>(spec.tokens), D.cols());
        for (Eigen::Index r = 0; r < shard.values.rows(); ++r) {
            float* o = shard.values.row(r).data();
            for (const auto& e : t.codes.row(r)) {
                if (!t.mask(e.index, static_cast<Eigen::Index>(i))) continue;
                const float* atom = D.row(e.index).data();
                for (Eigen::Index c = 0; c < D.cols(); ++c) o[c] += e.value * atom[c];
            }
            if (spec.noise_sigma > 0)
                for (Eigen::Index c = 0; c < D.cols(); ++c) o[c] += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
        }
        out.shards.push_back(std::move(shard));
    }
    return out;
}

namespace {
constexpr std::uint16_t kTruthVersion = 1;
}

void write_truth(const GroundTruth& truth, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.put_magic("USGT");
    w.put(kTruthVersion);
    w.put(static_cast<std::uint32_t>(truth.models()));
    w.put(static_cast<std::uint32_t>(truth.concepts()));
    w.put_array(truth.mask.data(), static_cast<std::size_t>(truth.mask.size()));
    for (const auto& D : truth.dictionaries) io::put_tensor(w, D);
    put_codes(w, truth.codes);
    w.save(path);
}

GroundTruth read_truth(const std::filesystem::path& path) {
    io::ByteReader r = io::ByteReader::load(path);
    try {
        r.expect_magic("USGT");
        const auto at = r.offset();
        if (r.get<std::uint16_t>("version") != kTruthVersion) throw FormatError("unsupported truth version", at);
        GroundTruth t;
        const auto n_models = r.get<std::uint32_t>("model count");
        const auto m = r.get<std::uint32_t>("concept count");
        t.mask.resize(m, n_models);
        r.get_array(t.mask.data(), static_cast<std::size_t>(t.mask.size()), "mask");
        for (std::uint32_t i = 0; i < n_models; ++i) {
            Matrix D;
            io::get_tensor(r, D, "truth dictionary");
            if (D.rows() != static_cast<Eigen::Index>(m)) throw FormatError("truth dictionary row count", r.offset());
            t.dictionaries.push_back(std::move(D));
        }
        t.codes = get_codes(r);
        r.expect_end();
        return t;
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

std::filesystem::path write_synth(const SynthDataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    DatasetManifest manifest;
    manifest.token_alignment = true;
    manifest.n_tokens_total = data.shards.empty() ? 0 : data.shards.front().n_tokens();
    for (const auto& s : data.shards) {
        const std::string file = s.model_id + ".usae";
        write_shard(s, dir / file);
        manifest.models.push_back({s.model_id, s.dim(), {file}});
    }
    const auto manifest_path = dir / "manifest.json";
    write_manifest(manifest, manifest_path);
    write_truth(data.truth, dir / "truth.usgt");
    return manifest_path;
}

std::vector<ModelRecovery> recovery_score(const std::vector<Matrix>& learned, const GroundTruth& truth,
                                          double hit_threshold) {
    if (learned.size() != truth.models()) throw ShapeError("recovery_score: model count mismatch");
    std::vector<ModelRecovery> out;
    for (std::size_t i = 0; i < learned.size(); ++i) {
        const Matrix& L = learned[i];
        const Matrix& T = truth.dictionaries[i];
        if (L.cols() != T.cols()) throw ShapeError("recovery_score: learned width differs from truth");
        ModelRecovery rec;
        for (Eigen::Index c = 0; c < truth.concepts(); ++c)
            if (truth.mask(c, static_cast<Eigen::Index>(i))) rec.truth_concepts.push_back(static_cast<std::size_t>(c));
        if (rec.truth_concepts.size() > static_cast<std::size_t>(L.rows()))
            throw ParameterError("recovery_score: fewer learned atoms than truth concepts");
        if (rec.truth_concepts.empty()) {
            out.push_back(std::move(rec));
            continue;
        }
        // Zero learned rows cannot match anything: their cosine is 0.
        MatrixD sim = MatrixD::Zero(static_cast<Eigen::Index>(rec.truth_concepts.size()), L.rows());
        VectorD ln(L.rows());
        for (Eigen::Index b = 0; b < L.rows(); ++b) ln[b] = L.row(b).cast<double>().squaredNorm();
        for (std::size_t a = 0; a < rec.truth_concepts.size(); ++a) {
            const auto t_row = T.row(static_cast<Eigen::Index>(rec.truth_concepts[a])).cast<double>().eval();
            const double tn = t_row.squaredNorm();
            for (Eigen::Index b = 0; b < L.rows(); ++b) {
                if (ln[b] == 0.0 || tn == 0.0) continue;
                sim(static_cast<Eigen::Index>(a), b) =
                    std::clamp(t_row.dot(L.row(b).cast<double>()) / std::sqrt(tn * ln[b]), -1.0, 1.0);
            }
        }
        const Assignment asg = hungarian_rectangular(-sim);
        std::size_t hits = 0;
        double sum = 0.0;
        for (std::size_t a = 0; a < asg.col_of_row.size(); ++a) {
            const double c = sim(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(asg.col_of_row[a]));
            rec.learned_concepts.push_back(asg.col_of_row[a]);
            rec.cosines.push_back(c);
            sum += c;
            if (c >= hit_threshold) ++hits;
        }
        rec.mean_cosine = sum / static_cast<double>(rec.cosines.size());
        rec.hit_rate = static_cast<double>(hits) / static_cast<double>(rec.cosines.size());
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<ModelRecovery> recovery_score(const UsaeModel& model, const GroundTruth& truth, double hit_threshold) {
    std::vector<Matrix> learned;
    for (const auto& d : model.dictionaries) learned.push_back(d.atoms);
    return recovery_score(learned, truth, hit_threshold);
}

UniversalityReport universality_oracle(const GroundTruth& truth, const FiringStats& stats,
                                       const std::vector<ModelRecovery>& recovery, double min_cosine) {
    // kind per learned concept: 0 unseen, 1 universal, 2 partial, 3 both.
    std::vector<std::uint8_t> kind(stats.concepts(), 0);
    UniversalityReport rep;
    for (const auto& rec : recovery) {
        for (std::size_t a = 0; a < rec.truth_concepts.size(); ++a) {
            if (rec.cosines[a] < min_cosine) {
                ++rep.skipped;
                continue;
            }
            const std::size_t learned = rec.learned_concepts[a];
            if (learned >= kind.size()) throw ShapeError("universality_oracle: learned index outside firing stats");
            kind[learned] |= truth.universal(static_cast<Eigen::Index>(rec.truth_concepts[a])) ? 1 : 2;
        }
    }
    double sum_u = 0.0, sum_p = 0.0;
    for (std::size_t k = 0; k < kind.size(); ++k) {
        if (kind[k] == 1) {
            sum_u += stats.fe[static_cast<Eigen::Index>(k)];
            ++rep.n_universal;
        } else if (kind[k] == 2) {
            sum_p += stats.fe[static_cast<Eigen::Index>(k)];
            ++rep.n_partial;
        } else if (kind[k] == 3) {
            ++rep.conflicts;
        }
    }
    if (rep.n_universal > 0) rep.mean_fe_universal = sum_u / static_cast<double>(rep.n_universal);
    if (rep.n_partial > 0) rep.mean_fe_partial = sum_p / static_cast<double>(rep.n_partial);
    return rep;
}

UsaeModel oracle_model(const GroundTruth& truth, std::size_t k) {
    UsaeModel model;
    model.config.k = k;
    model.config.m = static_cast<std::size_t>(truth.concepts());
    model.config.bn_enabled = false;
    model.config.unit_norm = false;
    for (std::size_t i = 0; i < truth.models(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        Matrix D = truth.dictionaries[i];
        for (Eigen::Index c = 0; c < D.rows(); ++c)
            if (!truth.mask(c, ii)) D.row(c).setZero();
        // h = W a with a = D^T z: W = pinv(D^T) recovers z whenever D has full row rank.
        const MatrixD Dt = D.cast<double>().transpose();
        const MatrixD W = Dt.completeOrthogonalDecomposition().pseudoInverse();
        model.model_ids.push_back("model_" + std::to_string(i));
        model.standardizers.push_back(Standardizer::identity(D.cols()));
        model.encoders.push_back(EncoderParams<float>::linear(W.cast<float>(), k));
        model.dictionaries.push_back({std::move(D), false});
    }
    model.encoder_adam.resize(truth.models());
    model.dictionary_adam.resize(truth.models());
    model.updates.assign(truth.models(), 0);
    model.validate();
    return model;
}

std::string recovery_csv(const std::vector<ModelRecovery>& rec, const std::vector<std::string>& ids) {
    std::string out = "model,truth_concepts,mean_cosine,hit_rate\n";
    char buf[160];
    for (std::size_t i = 0; i < rec.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g\n", ids.at(i).c_str(), rec[i].truth_concepts.size(),
                      rec[i].mean_cosine, rec[i].hit_rate);
        out += buf;
    }
    return out;
}

}  // namespace usae
