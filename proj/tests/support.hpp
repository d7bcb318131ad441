#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "usae/actmax.hpp"
#include "usae/metrics.hpp"
#include "usae/rng.hpp"
#include "usae/sae.hpp"

namespace usae::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("usae_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

template <typename Scalar = float>
MatrixX<Scalar> random_matrix(Eigen::Index r, Eigen::Index c, SeededRng& rng, double sd = 1.0) {
    MatrixX<Scalar> m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<Scalar>(rng.normal(0.0, sd));
    return m;
}

template <typename Scalar>
MatrixX<Scalar> naive_matmul(const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
    MatrixX<Scalar> out(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            Scalar acc = 0;
            for (Eigen::Index t = 0; t < a.cols(); ++t) acc += a(i, t) * b(t, j);
            out(i, j) = acc;
        }
    return out;
}

// Stable full sort by value descending; ties keep the lower index first.
template <typename Scalar>
std::vector<std::size_t> topk_full_sort(const std::vector<Scalar>& v, std::size_t k) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    idx.resize(k);
    return idx;
}

inline double brute_force_assignment(const MatrixD& cost) {
    std::vector<std::size_t> perm(static_cast<std::size_t>(cost.cols()));
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
        double total = 0.0;
        for (Eigen::Index r = 0; r < cost.rows(); ++r) total += cost(r, static_cast<Eigen::Index>(perm[r]));
        best = std::min(best, total);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Exhaustive per-concept enumeration from dense code matrices.
struct EnumeratedStats {
    std::vector<std::vector<std::uint64_t>> fires;  // [model][concept]
    std::vector<std::uint64_t> cofires;
    std::vector<std::vector<double>> p, cfp;
    std::vector<double> fe;
};

inline EnumeratedStats enumerate_firing(const std::vector<Matrix>& dense, double tau) {
    const std::size_t M = dense.size();
    const auto m = static_cast<std::size_t>(dense[0].cols());
    EnumeratedStats s;
    s.fires.assign(M, std::vector<std::uint64_t>(m, 0));
    s.p.assign(M, std::vector<double>(m, 0.0));
    s.cfp.assign(M, std::vector<double>(m, 0.0));
    s.cofires.assign(m, 0);
    s.fe.assign(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        for (Eigen::Index r = 0; r < dense[0].rows(); ++r) {
            bool all = true;
            for (std::size_t i = 0; i < M; ++i) {
                const bool f = dense[i](r, static_cast<Eigen::Index>(k)) > tau;
                s.fires[i][k] += f;
                all = all && f;
            }
            s.cofires[k] += all;
        }
        double total = 0;
        for (std::size_t i = 0; i < M; ++i) total += static_cast<double>(s.fires[i][k]);
        double h = 0;
        for (std::size_t i = 0; i < M; ++i) {
            if (total > 0) s.p[i][k] = static_cast<double>(s.fires[i][k]) / total;
            if (s.p[i][k] > 0) h -= s.p[i][k] * std::log(s.p[i][k]);
            if (s.fires[i][k] > 0)
                s.cfp[i][k] = static_cast<double>(s.cofires[k]) / static_cast<double>(s.fires[i][k]);
        }
        s.fe[k] = h / std::log(static_cast<double>(M));
    }
    return s;
}

inline CodeBatch<float> codes_from_dense(const Matrix& z) {
    CodeBatch<float> c;
    c.m = z.cols();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        std::vector<CodeBatch<float>::Entry> row;
        for (Eigen::Index k = 0; k < z.cols(); ++k)
            if (z(r, k) > 0) row.push_back({static_cast<std::uint32_t>(k), z(r, k)});
        c.push_row(row);
    }
    return c;
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheckConfig {
    Eigen::Index batch = 6, dim = 4, concepts = 8;
    std::size_t k = 3;
    std::size_t decoders = 2;
    bool bn = true;
    Mode mode = Mode::train;
    LossMode loss = LossMode::l1;
    bool unit_norm = true;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose TopK set or residual sign flips within +-h
};

// Analytic backward vs central differences, in double, over every encoder
// and dictionary coordinate.
class SaeGradCheck {
public:
    explicit SaeGradCheck(const GradCheckConfig& c) : cfg_(c) {
        SeededRng rng(c.seed);
        enc_.w_enc = random_matrix<double>(c.concepts, c.dim, rng);
        enc_.b_pre = random_matrix<double>(c.dim, 1, rng, 0.3);
        enc_.bn_gamma = (random_matrix<double>(c.concepts, 1, rng, 0.2).array() + 1.0).matrix();
        enc_.bn_beta = random_matrix<double>(c.concepts, 1, rng, 0.5);
        enc_.bn_running_mean = random_matrix<double>(c.concepts, 1, rng, 0.5);
        enc_.bn_running_var = (random_matrix<double>(c.concepts, 1, rng, 0.2).array().abs() + 0.5).matrix();
        enc_.k = c.k;
        enc_.bn_enabled = c.bn;
        a_in_ = random_matrix<double>(c.batch, c.dim, rng);
        for (std::size_t j = 0; j < c.decoders; ++j) {
            const Eigen::Index dj = c.dim + static_cast<Eigen::Index>(j);
            Dictionary<double> d{random_matrix<double>(c.concepts, dj, rng), c.unit_norm};
            if (c.unit_norm) d.normalize_rows();
            dicts_.push_back(std::move(d));
            targets_.push_back(random_matrix<double>(c.batch, dj, rng));
        }
    }

    GradCheckResult run(double h = 1e-4) {
        const auto fwd = forward(enc_);
        std::vector<MatrixX<double>> upstream;
        for (std::size_t j = 0; j < dicts_.size(); ++j)
            upstream.push_back(recon_loss_grad(targets_[j], decode(fwd.codes, dicts_[j]), cfg_.loss));
        const auto g = backward<double>(enc_, fwd.cache, fwd.codes, dicts_, upstream);

        GradCheckResult res;
        const auto base_sig = signature(enc_, dicts_);
        auto check = [&](double& coord, double analytic) {
            const double saved = coord;
            coord = saved + h;
            const auto sp = signature(enc_, dicts_);
            const double lp = loss(enc_, dicts_);
            coord = saved - h;
            const auto sm = signature(enc_, dicts_);
            const double lm = loss(enc_, dicts_);
            coord = saved;
            if (sp != base_sig || sm != base_sig) {
                ++res.skipped;
                return;
            }
            res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic, (lp - lm) / (2 * h)));
            ++res.checked;
        };
        for (Eigen::Index r = 0; r < enc_.w_enc.rows(); ++r)
            for (Eigen::Index c = 0; c < enc_.w_enc.cols(); ++c) check(enc_.w_enc(r, c), g.encoder.w_enc(r, c));
        for (Eigen::Index c = 0; c < enc_.b_pre.size(); ++c) check(enc_.b_pre[c], g.encoder.b_pre[c]);
        if (cfg_.bn)
            for (Eigen::Index c = 0; c < enc_.bn_gamma.size(); ++c) {
                check(enc_.bn_gamma[c], g.encoder.bn_gamma[c]);
                check(enc_.bn_beta[c], g.encoder.bn_beta[c]);
            }
        for (std::size_t j = 0; j < dicts_.size(); ++j)
            for (Eigen::Index r = 0; r < dicts_[j].atoms.rows(); ++r)
                for (Eigen::Index c = 0; c < dicts_[j].atoms.cols(); ++c)
                    check(dicts_[j].atoms(r, c), g.dictionaries[j](r, c));
        return res;
    }

private:
    EncodeResult<double> forward(const EncoderParams<double>& p) const {
        return cfg_.mode == Mode::train ? encode_train_pure(p, a_in_) : encode_eval(p, a_in_);
    }

    double loss(const EncoderParams<double>& p, const std::vector<Dictionary<double>>& d) const {
        const auto z = forward(p).codes;
        double total = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) total += recon_loss(targets_[j], decode(z, d[j]), cfg_.loss);
        return total;
    }

    // Selected support plus residual signs: the loss is smooth while both are fixed.
    std::vector<int> signature(const EncoderParams<double>& p, const std::vector<Dictionary<double>>& d) const {
        const auto fwd = forward(p);
        std::vector<int> sig(fwd.cache.topk_mask.data(), fwd.cache.topk_mask.data() + fwd.cache.topk_mask.size());
        if (cfg_.loss == LossMode::l1)
            for (std::size_t j = 0; j < d.size(); ++j) {
                const MatrixX<double> r = targets_[j] - decode(fwd.codes, d[j]);
                for (Eigen::Index i = 0; i < r.size(); ++i) sig.push_back(r.data()[i] > 0 ? 1 : (r.data()[i] < 0 ? -1 : 0));
            }
        return sig;
    }

    GradCheckConfig cfg_;
    EncoderParams<double> enc_;
    MatrixX<double> a_in_;
    std::vector<Dictionary<double>> dicts_;
    std::vector<MatrixX<double>> targets_;
};

// Central differences of the activation-maximization objective at x.
inline double actmax_grad_error(const EncoderParams<double>& enc, const ToyVisionModel<double>& toy,
                                const ActMaxTask& task, const VectorD& x, double h = 1e-5) {
    const auto base = actmax_objective(x, enc, toy, task);
    double worst = 0.0;
    VectorD xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double lp = actmax_objective(xp, enc, toy, task).value;
        xp[i] = x[i] - h;
        const double lm = actmax_objective(xp, enc, toy, task).value;
        xp[i] = x[i];
        worst = std::max(worst, relative_error(base.gradient[i], (lp - lm) / (2 * h)));
    }
    return worst;
}

}  // namespace usae::testing
