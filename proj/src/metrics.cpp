#include "usae/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace usae {

std::vector<Matrix> standardized_rows(const UsaeModel& model, const ActivationDataset& data,
                                      std::span<const std::size_t> rows) {
    if (data.model_count() != model.model_count()) throw ShapeError("dataset and model disagree on M");
    std::vector<std::size_t> all;
    if (rows.empty()) {
        all.resize(static_cast<std::size_t>(data.n_tokens()));
        std::iota(all.begin(), all.end(), std::size_t{0});
        rows = all;
    }
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < model.model_count(); ++i)
        out.push_back(gather_rows(data.activations[i], rows, model.standardizers[i]));
    return out;
}

MatrixD r2_matrix(const UsaeModel& model, const std::vector<Matrix>& standardized) {
    const std::size_t n_models = model.model_count();
    if (standardized.size() != n_models) throw ShapeError("r2_matrix: one evaluation matrix per model");
    MatrixD out(n_models, n_models);
    for (std::size_t i = 0; i < n_models; ++i) {
        const auto codes = encode_standardized(model, i, standardized[i]);
        for (std::size_t j = 0; j < n_models; ++j) {
            if (standardized[j].rows() != standardized[i].rows())
                throw ShapeError("r2_matrix: evaluation rows are not aligned");
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                r2(standardized[j], decode(codes, model.dictionaries[j]));
        }
    }
    return out;
}

VectorD concept_energy(const CodeBatch<float>& codes, const Dictionary<float>& dict) {
    if (codes.m != dict.concepts()) throw ShapeError("concept_energy: code width != dictionary rows");
    if (codes.rows() == 0) throw ParameterError("concept_energy: no rows");
    VectorD sums = VectorD::Zero(codes.m);
    for (const auto& e : codes.entries) sums[e.index] += static_cast<double>(e.value);
    VectorD out(codes.m);
    for (Eigen::Index k = 0; k < codes.m; ++k) {
        const double mean = sums[k] / static_cast<double>(codes.rows());
        double sq = 0.0;
        for (Eigen::Index c = 0; c < dict.dim(); ++c) {
            const double v = static_cast<double>(dict.atoms(k, c));
            sq += v * v;
        }
        out[k] = mean * mean * sq;
    }
    return out;
}

ConceptEnergy energies(const UsaeModel& model, const std::vector<CodeBatch<float>>& codes) {
    if (codes.size() != model.model_count()) throw ShapeError("energies: one code batch per model");
    ConceptEnergy e;
    e.per_model.resize(static_cast<Eigen::Index>(model.model_count()), model.concepts());
    for (std::size_t i = 0; i < model.model_count(); ++i)
        e.per_model.row(static_cast<Eigen::Index>(i)) = concept_energy(codes[i], model.dictionaries[i]).transpose();
    return e;
}

FiringStats firing_stats(std::span<const CodeBatch<float>> codes, double tau) {
    const std::size_t n_models = codes.size();
    if (n_models < 2) throw ParameterError("firing_stats: firing entropy needs M >= 2 (log M = 0 otherwise)");
    if (tau < 0) throw ParameterError("firing_stats: tau must be >= 0");
    const Eigen::Index m = codes[0].m, n = codes[0].rows();
    for (const auto& c : codes)
        if (c.rows() != n || c.m != m) throw ShapeError("firing_stats: code batches are not aligned");

    FiringStats s;
    s.tau = tau;
    s.rows = static_cast<std::size_t>(n);
    s.fires.setZero(static_cast<Eigen::Index>(n_models), m);
    s.cofires.assign(static_cast<std::size_t>(m), 0);
    std::vector<std::uint32_t> fired_in(static_cast<std::size_t>(m));
    std::vector<std::uint32_t> touched;
    for (Eigen::Index r = 0; r < n; ++r) {
        touched.clear();
        for (std::size_t i = 0; i < n_models; ++i) {
            for (const auto& e : codes[i].row(r)) {
                if (static_cast<double>(e.value) > tau) {
                    ++s.fires(static_cast<Eigen::Index>(i), e.index);
                    if (fired_in[e.index]++ == 0) touched.push_back(e.index);
                }
            }
        }
        for (auto k : touched) {
            if (fired_in[k] == n_models) ++s.cofires[k];
            fired_in[k] = 0;
        }
    }

    const double log_m = std::log(static_cast<double>(n_models));
    s.p.setZero(static_cast<Eigen::Index>(n_models), m);
    s.fe.setZero(m);
    s.cfp.setZero(static_cast<Eigen::Index>(n_models), m);
    for (Eigen::Index k = 0; k < m; ++k) {
        std::uint64_t total = 0;
        for (std::size_t i = 0; i < n_models; ++i) total += s.fires(static_cast<Eigen::Index>(i), k);
        double h = 0.0;
        for (std::size_t i = 0; i < n_models; ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const std::uint64_t f = s.fires(ii, k);
            if (total > 0) {
                const double p = static_cast<double>(f) / static_cast<double>(total);
                s.p(ii, k) = p;
                if (p > 0) h -= p * std::log(p);
            }
            s.cfp(ii, k) = f > 0 ? static_cast<double>(s.cofires[static_cast<std::size_t>(k)]) / static_cast<double>(f) : 0.0;
        }
        s.fe[k] = h / log_m;
    }
    return s;
}

EnergyUniversality energy_universality(const FiringStats& stats, const VectorD& energy, std::uint64_t min_cofires) {
    if (static_cast<std::size_t>(energy.size()) != stats.concepts())
        throw ShapeError("energy_universality: one energy value per concept");
    EnergyUniversality out;
    out.min_cofires = min_cofires;
    std::vector<double> x_all, y_all, x_f, y_f;
    for (std::size_t k = 0; k < stats.concepts(); ++k) {
        const auto c = static_cast<double>(stats.cofires[k]);
        x_all.push_back(c);
        y_all.push_back(energy[static_cast<Eigen::Index>(k)]);
        if (stats.cofires[k] >= min_cofires) {
            x_f.push_back(c);
            y_f.push_back(energy[static_cast<Eigen::Index>(k)]);
        }
    }
    out.n_all = x_all.size();
    out.n_filtered = x_f.size();
    out.all = pearson(x_all, y_all);
    if (x_f.size() >= 2) {
        try {
            out.filtered = pearson(x_f, y_f);
        } catch (const DegenerateInputError&) {
        }
    }
    return out;
}

namespace {
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}
}  // namespace

std::string r2_csv(const MatrixD& r2, const std::vector<std::string>& ids) {
    std::string out = "encoder\\decoder";
    for (const auto& id : ids) out += "," + id;
    out += "\n";
    for (Eigen::Index i = 0; i < r2.rows(); ++i) {
        out += ids.at(static_cast<std::size_t>(i));
        for (Eigen::Index j = 0; j < r2.cols(); ++j) out += "," + fmt(r2(i, j));
        out += "\n";
    }
    return out;
}

std::string firing_csv(const FiringStats& s, const ConceptEnergy& energy) {
    const std::size_t n_models = s.model_count();
    std::string out = "concept";
    for (std::size_t i = 0; i < n_models; ++i) out += ",fires_" + std::to_string(i);
    out += ",cofires";
    for (std::size_t i = 0; i < n_models; ++i) out += ",p_" + std::to_string(i);
    out += ",fe";
    for (std::size_t i = 0; i < n_models; ++i) out += ",cfp_" + std::to_string(i);
    for (std::size_t i = 0; i < n_models; ++i) out += ",energy_" + std::to_string(i);
    out += ",energy_mean\n";
    const VectorD mean_energy = energy.mean_over_models();
    for (std::size_t k = 0; k < s.concepts(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        out += std::to_string(k);
        for (std::size_t i = 0; i < n_models; ++i) out += "," + std::to_string(s.fires(static_cast<Eigen::Index>(i), kk));
        out += "," + std::to_string(s.cofires[k]);
        for (std::size_t i = 0; i < n_models; ++i) out += "," + fmt(s.p(static_cast<Eigen::Index>(i), kk));
        out += "," + fmt(s.fe[kk]);
        for (std::size_t i = 0; i < n_models; ++i) out += "," + fmt(s.cfp(static_cast<Eigen::Index>(i), kk));
        for (std::size_t i = 0; i < n_models; ++i) out += "," + fmt(energy.per_model(static_cast<Eigen::Index>(i), kk));
        out += "," + fmt(mean_energy[kk]) + "\n";
    }
    return out;
}

}  // namespace usae
