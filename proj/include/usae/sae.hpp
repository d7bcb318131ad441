#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "usae/numerics.hpp"

namespace usae {

enum class Mode { train, eval };
enum class LossMode { l1, fro };

inline const char* to_string(LossMode m) { return m == LossMode::l1 ? "l1" : "fro"; }
LossMode parse_loss_mode(const std::string& s);

// Per-model encoder: linear -> batch norm -> ReLU -> TopK.
template <typename Scalar>
struct EncoderParams {
    MatrixX<Scalar> w_enc;  // m x d
    VectorX<Scalar> b_pre;  // d
    VectorX<Scalar> bn_gamma, bn_beta;                // m
    VectorX<Scalar> bn_running_mean, bn_running_var;  // m
    Scalar bn_momentum = Scalar(0.1);
    Scalar bn_eps = Scalar(1e-5);
    std::size_t k = 1;
    bool bn_enabled = true;

    Eigen::Index concepts() const { return w_enc.rows(); }
    Eigen::Index dim() const { return w_enc.cols(); }

    // Plain linear encoder: W (m x d), zero b_pre, unit BN affine, BN disabled.
    static EncoderParams linear(MatrixX<Scalar> w, std::size_t k) {
        EncoderParams p;
        const Eigen::Index m = w.rows();
        p.b_pre = VectorX<Scalar>::Zero(w.cols());
        p.w_enc = std::move(w);
        p.bn_gamma = VectorX<Scalar>::Ones(m);
        p.bn_beta = VectorX<Scalar>::Zero(m);
        p.bn_running_mean = VectorX<Scalar>::Zero(m);
        p.bn_running_var = VectorX<Scalar>::Ones(m);
        p.k = k;
        p.bn_enabled = false;
        return p;
    }

    template <typename T>
    EncoderParams<T> cast() const {
        EncoderParams<T> o;
        o.w_enc = w_enc.template cast<T>();
        o.b_pre = b_pre.template cast<T>();
        o.bn_gamma = bn_gamma.template cast<T>();
        o.bn_beta = bn_beta.template cast<T>();
        o.bn_running_mean = bn_running_mean.template cast<T>();
        o.bn_running_var = bn_running_var.template cast<T>();
        o.bn_momentum = static_cast<T>(bn_momentum);
        o.bn_eps = static_cast<T>(bn_eps);
        o.k = k;
        o.bn_enabled = bn_enabled;
        return o;
    }

    void validate() const {
        const Eigen::Index m = concepts();
        if (b_pre.size() != dim() || bn_gamma.size() != m || bn_beta.size() != m || bn_running_mean.size() != m ||
            bn_running_var.size() != m)
            throw ShapeError("EncoderParams: inconsistent tensor shapes");
        if (k < 1 || static_cast<Eigen::Index>(k) > m) throw ParameterError("EncoderParams: K must be in [1, m]");
        if (!(bn_eps > 0)) throw ParameterError("EncoderParams: bn_eps must be positive");
        if ((bn_running_var.array() < 0).any()) throw DataError("EncoderParams: negative running variance");
    }
};

// m x d decoder; one atom per row.
template <typename Scalar>
struct Dictionary {
    MatrixX<Scalar> atoms;
    bool unit_norm = true;

    Eigen::Index concepts() const { return atoms.rows(); }
    Eigen::Index dim() const { return atoms.cols(); }

    void normalize_rows() {
        for (Eigen::Index r = 0; r < atoms.rows(); ++r) {
            double sq = 0.0;
            for (Eigen::Index c = 0; c < atoms.cols(); ++c)
                sq += static_cast<double>(atoms(r, c)) * static_cast<double>(atoms(r, c));
            if (sq > 0.0) atoms.row(r) /= static_cast<Scalar>(std::sqrt(sq));
        }
    }

    template <typename T>
    Dictionary<T> cast() const {
        return {atoms.template cast<T>(), unit_norm};
    }
};

// K-sparse codes in compressed-row form. Only strictly positive values are
// stored; entries within a row are ordered by concept index.
template <typename Scalar>
struct CodeBatch {
    struct Entry {
        std::uint32_t index;
        Scalar value;
    };

    Eigen::Index m = 0;
    std::vector<std::size_t> offsets{0};  // rows()+1 entries
    std::vector<Entry> entries;

    Eigen::Index rows() const { return static_cast<Eigen::Index>(offsets.size()) - 1; }

    std::span<const Entry> row(Eigen::Index i) const {
        const auto b = offsets[static_cast<std::size_t>(i)], e = offsets[static_cast<std::size_t>(i) + 1];
        return {entries.data() + b, e - b};
    }

    void push_row(std::span<const Entry> row_entries) {
        entries.insert(entries.end(), row_entries.begin(), row_entries.end());
        offsets.push_back(entries.size());
    }

    MatrixX<Scalar> to_dense() const {
        MatrixX<Scalar> z = MatrixX<Scalar>::Zero(rows(), m);
        for (Eigen::Index i = 0; i < rows(); ++i)
            for (const auto& e : row(i)) z(i, e.index) = e.value;
        return z;
    }

    // Code value of concept k on row i (0 when not selected).
    Scalar value(Eigen::Index i, std::uint32_t k) const {
        for (const auto& e : row(i))
            if (e.index == k) return e.value;
        return Scalar(0);
    }
};

// Everything the backward pass needs from a forward pass.
template <typename Scalar>
struct ForwardCache {
    Mode mode = Mode::eval;
    bool bn_applied = false;
    MatrixX<Scalar> centered;     // a - b_pre, batch x d
    MatrixX<Scalar> pre_bn;       // batch x m
    VectorX<Scalar> batch_mean;   // m (train mode)
    VectorX<Scalar> batch_var;    // m, biased (train mode)
    VectorX<Scalar> inv_std;      // m, 1/sqrt(var + eps) of the statistics used
    MatrixX<Scalar> normalized;   // batch x m, (h - mean) * inv_std
    MatrixX<Scalar> post_bn;      // batch x m
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> topk_mask;  // selected & > 0

    Eigen::Index batch() const { return centered.rows(); }
};

template <typename Scalar>
struct EncodeResult {
    CodeBatch<Scalar> codes;
    ForwardCache<Scalar> cache;
};

namespace detail {

template <typename Scalar>
EncodeResult<Scalar> encode_impl(const EncoderParams<Scalar>& p, const MatrixX<Scalar>& a, Mode mode) {
    const Eigen::Index m = p.concepts();
    if (a.cols() != p.dim())
        throw ShapeError("encode: input width " + std::to_string(a.cols()) + " != encoder width " +
                         std::to_string(p.dim()));
    if (static_cast<Eigen::Index>(p.k) > m || p.k < 1) throw ParameterError("encode: K must be in [1, m]");
    if (mode == Mode::train && p.bn_enabled && a.rows() < 2)
        throw ParameterError("encode: train-mode batch norm needs a batch of at least 2 rows");

    EncodeResult<Scalar> res;
    auto& c = res.cache;
    c.mode = mode;
    c.bn_applied = p.bn_enabled;
    c.centered = a.rowwise() - p.b_pre.transpose();
    c.pre_bn = matmul_bt(c.centered, p.w_enc);
    const Eigen::Index n = a.rows();

    if (p.bn_enabled) {
        c.inv_std.resize(m);
        if (mode == Mode::train) {
            c.batch_mean.resize(m);
            c.batch_var.resize(m);
            for (Eigen::Index k = 0; k < m; ++k) {
                Scalar mu = 0;
                for (Eigen::Index i = 0; i < n; ++i) mu += c.pre_bn(i, k);
                mu /= static_cast<Scalar>(n);
                Scalar var = 0;
                for (Eigen::Index i = 0; i < n; ++i) var += (c.pre_bn(i, k) - mu) * (c.pre_bn(i, k) - mu);
                var /= static_cast<Scalar>(n);
                c.batch_mean[k] = mu;
                c.batch_var[k] = var;
                c.inv_std[k] = Scalar(1) / std::sqrt(var + p.bn_eps);
            }
        } else {
            c.batch_mean = p.bn_running_mean;
            for (Eigen::Index k = 0; k < m; ++k) c.inv_std[k] = Scalar(1) / std::sqrt(p.bn_running_var[k] + p.bn_eps);
        }
        c.normalized.resize(n, m);
        c.post_bn.resize(n, m);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index k = 0; k < m; ++k) {
                c.normalized(i, k) = (c.pre_bn(i, k) - c.batch_mean[k]) * c.inv_std[k];
                c.post_bn(i, k) = p.bn_gamma[k] * c.normalized(i, k) + p.bn_beta[k];
            }
    } else {
        c.post_bn = c.pre_bn;
    }

    res.codes.m = m;
    res.codes.entries.reserve(static_cast<std::size_t>(n) * p.k);
    c.topk_mask.setZero(n, m);
    std::vector<Scalar> activated(static_cast<std::size_t>(m));
    std::vector<typename CodeBatch<Scalar>::Entry> row;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < m; ++k) activated[static_cast<std::size_t>(k)] = std::max(Scalar(0), c.post_bn(i, k));
        auto sel = topk_select(std::span<const Scalar>(activated), p.k);
        std::sort(sel.begin(), sel.end());
        row.clear();
        for (std::size_t k : sel) {
            const Scalar v = activated[k];
            if (v > 0) {
                row.push_back({static_cast<std::uint32_t>(k), v});
                c.topk_mask(i, static_cast<Eigen::Index>(k)) = 1;
            }
        }
        res.codes.push_row(row);
    }
    return res;
}

}  // namespace detail

// Train mode uses batch statistics and advances the running statistics;
// eval mode uses the running statistics and leaves params untouched.
template <typename Scalar>
EncodeResult<Scalar> encode(EncoderParams<Scalar>& params, const MatrixX<Scalar>& a, Mode mode) {
    EncodeResult<Scalar> res = detail::encode_impl(params, a, mode);
    if (mode == Mode::train && params.bn_enabled) {
        const Eigen::Index n = a.rows();
        const Scalar mom = params.bn_momentum;
        for (Eigen::Index k = 0; k < params.concepts(); ++k) {
            // Running variance tracks the unbiased batch variance.
            const Scalar unbiased = res.cache.batch_var[k] * static_cast<Scalar>(n) / static_cast<Scalar>(n - 1);
            params.bn_running_mean[k] = (Scalar(1) - mom) * params.bn_running_mean[k] + mom * res.cache.batch_mean[k];
            params.bn_running_var[k] = (Scalar(1) - mom) * params.bn_running_var[k] + mom * unbiased;
        }
    }
    return res;
}

template <typename Scalar>
EncodeResult<Scalar> encode_eval(const EncoderParams<Scalar>& params, const MatrixX<Scalar>& a) {
    return detail::encode_impl(params, a, Mode::eval);
}

// Train-mode forward without touching the running statistics.
template <typename Scalar>
EncodeResult<Scalar> encode_train_pure(const EncoderParams<Scalar>& params, const MatrixX<Scalar>& a) {
    return detail::encode_impl(params, a, Mode::train);
}

template <typename Scalar>
MatrixX<Scalar> decode(const CodeBatch<Scalar>& z, const Dictionary<Scalar>& dict) {
    if (z.m != dict.concepts())
        throw ShapeError("decode: code width " + std::to_string(z.m) + " != dictionary rows " +
                         std::to_string(dict.concepts()));
    MatrixX<Scalar> out = MatrixX<Scalar>::Zero(z.rows(), dict.dim());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Scalar* o = out.row(i).data();
        for (const auto& e : z.row(i)) {
            if (static_cast<Eigen::Index>(e.index) >= dict.concepts())
                throw DataError("decode: concept index " + std::to_string(e.index) + " out of range");
            const Scalar* atom = dict.atoms.row(e.index).data();
            for (Eigen::Index j = 0; j < dict.dim(); ++j) o[j] += e.value * atom[j];
        }
    }
    return out;
}

template <typename DA, typename DB>
double recon_loss(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& a_hat, LossMode mode) {
    check_same_shape(a.rows(), a.cols(), a_hat.rows(), a_hat.cols(), "recon_loss");
    const auto residual = (a - a_hat).eval();
    return mode == LossMode::l1 ? l1_sum(residual) : fro_norm(residual);
}

// dL/dA_hat for L = recon_loss(a, a_hat). sign(0) := 0 for l1; the Frobenius
// gradient at an exact reconstruction is taken to be 0.
template <typename Scalar>
MatrixX<Scalar> recon_loss_grad(const MatrixX<Scalar>& a, const MatrixX<Scalar>& a_hat, LossMode mode) {
    check_same_shape(a.rows(), a.cols(), a_hat.rows(), a_hat.cols(), "recon_loss_grad");
    const MatrixX<Scalar> residual = a - a_hat;
    if (mode == LossMode::l1) {
        return residual.unaryExpr([](Scalar r) { return r > 0 ? Scalar(-1) : (r < 0 ? Scalar(1) : Scalar(0)); });
    }
    const double norm = fro_norm(residual);
    if (norm == 0.0) return MatrixX<Scalar>::Zero(a.rows(), a.cols());
    return -residual / static_cast<Scalar>(norm);
}

template <typename Scalar>
struct EncoderGrads {
    MatrixX<Scalar> w_enc;
    VectorX<Scalar> b_pre, bn_gamma, bn_beta;
};

template <typename Scalar>
struct BackwardResult {
    EncoderGrads<Scalar> encoder;
    std::vector<MatrixX<Scalar>> dictionaries;  // one per decoder, same order as input
    MatrixX<Scalar> codes;                      // dL/dZ on selected entries, 0 elsewhere
};

// Exact gradients of sum_j L_j(Z D_j) with Z the encoding of the cached batch.
// grad_ahat[j] is dL_j/dA_hat_j. TopK and ReLU pass gradient through the
// selected positive entries only; batch norm is differentiated through the
// batch statistics in train mode.
template <typename Scalar>
BackwardResult<Scalar> backward(const EncoderParams<Scalar>& p, const ForwardCache<Scalar>& cache,
                                const CodeBatch<Scalar>& codes, std::span<const Dictionary<Scalar>> dicts,
                                std::span<const MatrixX<Scalar>> grad_ahat) {
    const Eigen::Index n = cache.batch(), m = p.concepts();
    if (cache.pre_bn.rows() != n || cache.pre_bn.cols() != m || cache.centered.cols() != p.dim() ||
        codes.rows() != n || codes.m != m || cache.topk_mask.rows() != n || cache.topk_mask.cols() != m)
        throw ContractError("backward: cache does not match encoder parameters");
    if (dicts.size() != grad_ahat.size()) throw ContractError("backward: one upstream gradient per dictionary");
    if (cache.bn_applied != p.bn_enabled) throw ContractError("backward: batch-norm flag changed since forward");

    BackwardResult<Scalar> g;
    g.codes = MatrixX<Scalar>::Zero(n, m);
    for (std::size_t j = 0; j < dicts.size(); ++j) {
        const auto& D = dicts[j].atoms;
        const auto& G = grad_ahat[j];
        if (D.rows() != m || G.rows() != n || G.cols() != D.cols())
            throw ContractError("backward: decoder " + std::to_string(j) + " shape mismatch");
        MatrixX<Scalar> dD = MatrixX<Scalar>::Zero(D.rows(), D.cols());
        for (Eigen::Index i = 0; i < n; ++i) {
            const Scalar* gr = G.row(i).data();
            for (const auto& e : codes.row(i)) {
                const Scalar* atom = D.row(e.index).data();
                Scalar* dd = dD.row(e.index).data();
                Scalar acc = 0;
                for (Eigen::Index c = 0; c < D.cols(); ++c) {
                    acc += gr[c] * atom[c];
                    dd[c] += e.value * gr[c];
                }
                g.codes(i, e.index) += acc;
            }
        }
        g.dictionaries.push_back(std::move(dD));
    }

    // Through TopK and ReLU: only selected, positive entries carry gradient.
    MatrixX<Scalar> d_post = MatrixX<Scalar>::Zero(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < m; ++k)
            if (cache.topk_mask(i, k)) d_post(i, k) = g.codes(i, k);

    MatrixX<Scalar> d_pre(n, m);
    g.encoder.bn_gamma = VectorX<Scalar>::Zero(m);
    g.encoder.bn_beta = VectorX<Scalar>::Zero(m);
    if (!p.bn_enabled) {
        d_pre = d_post;
    } else if (cache.mode == Mode::train) {
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
        for (Eigen::Index k = 0; k < m; ++k) {
            Scalar sum_dy = 0, sum_dy_xhat = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                sum_dy += d_post(i, k);
                sum_dy_xhat += d_post(i, k) * cache.normalized(i, k);
            }
            g.encoder.bn_beta[k] = sum_dy;
            g.encoder.bn_gamma[k] = sum_dy_xhat;
            const Scalar scale = p.bn_gamma[k] * cache.inv_std[k] * inv_n;
            for (Eigen::Index i = 0; i < n; ++i)
                d_pre(i, k) = scale * (static_cast<Scalar>(n) * d_post(i, k) - sum_dy - cache.normalized(i, k) * sum_dy_xhat);
        }
    } else {
        for (Eigen::Index k = 0; k < m; ++k) {
            Scalar sum_dy = 0, sum_dy_xhat = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                sum_dy += d_post(i, k);
                sum_dy_xhat += d_post(i, k) * cache.normalized(i, k);
                d_pre(i, k) = d_post(i, k) * p.bn_gamma[k] * cache.inv_std[k];
            }
            g.encoder.bn_beta[k] = sum_dy;
            g.encoder.bn_gamma[k] = sum_dy_xhat;
        }
    }

    g.encoder.w_enc = matmul_at(d_pre, cache.centered);
    const MatrixX<Scalar> d_centered = matmul(d_pre, p.w_enc);
    g.encoder.b_pre = -d_centered.colwise().sum().transpose();
    return g;
}

// Independent Adam moments for one parameter tensor.
template <typename Scalar>
struct AdamSlot {
    MatrixX<Scalar> m1, m2;
    std::uint64_t step = 0;

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    template <typename P, typename G>
    void update(Eigen::PlainObjectBase<P>& param, const Eigen::MatrixBase<G>& grad, double lr) {
        if (grad.rows() != param.rows() || grad.cols() != param.cols())
            throw ShapeError("adam_step: gradient shape does not match parameter");
        if (m1.rows() != param.rows() || m1.cols() != param.cols()) {
            m1 = MatrixX<Scalar>::Zero(param.rows(), param.cols());
            m2 = MatrixX<Scalar>::Zero(param.rows(), param.cols());
        }
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (Eigen::Index r = 0; r < param.rows(); ++r)
            for (Eigen::Index c = 0; c < param.cols(); ++c) {
                const double gr = static_cast<double>(grad(r, c));
                const double a = beta1 * static_cast<double>(m1(r, c)) + (1.0 - beta1) * gr;
                const double b = beta2 * static_cast<double>(m2(r, c)) + (1.0 - beta2) * gr * gr;
                m1(r, c) = static_cast<Scalar>(a);
                m2(r, c) = static_cast<Scalar>(b);
                const double update = lr * (a / bc1) / (std::sqrt(b / bc2) + eps);
                param(r, c) = static_cast<Scalar>(static_cast<double>(param(r, c)) - update);
            }
    }
};

template <typename Scalar>
struct EncoderAdam {
    AdamSlot<Scalar> w_enc, b_pre, bn_gamma, bn_beta;
};

template <typename Scalar>
struct DictionaryAdam {
    AdamSlot<Scalar> atoms;
};

template <typename Scalar>
void adam_step(EncoderParams<Scalar>& p, const EncoderGrads<Scalar>& g, EncoderAdam<Scalar>& s, double lr) {
    s.w_enc.update(p.w_enc, g.w_enc, lr);
    s.b_pre.update(p.b_pre, g.b_pre, lr);
    if (p.bn_enabled) {
        s.bn_gamma.update(p.bn_gamma, g.bn_gamma, lr);
        s.bn_beta.update(p.bn_beta, g.bn_beta, lr);
    }
}

// Unit-norm dictionaries are renormalized row-wise after the update; the
// moment estimates are left as accumulated.
template <typename Scalar>
void adam_step(Dictionary<Scalar>& d, const MatrixX<Scalar>& grad, DictionaryAdam<Scalar>& s, double lr) {
    s.atoms.update(d.atoms, grad, lr);
    if (d.unit_norm) d.normalize_rows();
}

}  // namespace usae
