#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "usae/rng.hpp"
#include "usae/sae.hpp"
#include "usae/trainer.hpp"

namespace usae {

// Frozen differentiable stand-in for a vision backbone: an h x w image
// (flattened row-major) maps to tanh(W x + b) in R^d.
template <typename Scalar>
struct ToyVisionModel {
    Eigen::Index height = 0, width = 0;
    MatrixX<Scalar> weights;  // d x (h*w)
    VectorX<Scalar> bias;     // d
    bool saturating = true;   // tanh; identity when false

    Eigen::Index pixels() const { return height * width; }
    Eigen::Index dim() const { return weights.rows(); }

    VectorX<Scalar> pre_activation(const VectorX<Scalar>& x) const {
        if (x.size() != pixels()) throw ShapeError("ToyVisionModel: image has wrong pixel count");
        VectorX<Scalar> u = bias;
        for (Eigen::Index r = 0; r < weights.rows(); ++r) {
            Scalar acc = 0;
            for (Eigen::Index c = 0; c < weights.cols(); ++c) acc += weights(r, c) * x[c];
            u[r] += acc;
        }
        return u;
    }

    VectorX<Scalar> forward(const VectorX<Scalar>& x) const {
        VectorX<Scalar> u = pre_activation(x);
        if (saturating) u = u.array().tanh().matrix();
        return u;
    }

    template <typename T>
    ToyVisionModel<T> cast() const {
        return {height, width, weights.template cast<T>(), bias.template cast<T>(), saturating};
    }
};

// W ~ N(0, gain^2 / (h*w)), zero bias.
ToyVisionModel<float> make_toy_model(Eigen::Index height, Eigen::Index width, Eigen::Index dim, double gain,
                                     std::uint64_t seed);

enum class ActMaxInit { zeros, noise };

struct ActMaxTask {
    std::uint32_t concept_index = 0;
    double lambda = 0.1;
    double alpha = 1.0;  // weight of ||x||^2
    double beta = 1.0;   // weight of TV(x)
    std::size_t steps = 200;
    double step_size = 0.1;
    ActMaxInit init = ActMaxInit::zeros;
    double noise_scale = 0.01;
    std::uint64_t seed = 0;
    double ball_radius = 0.0;  // > 0: project iterates onto the l2 ball

    void validate(Eigen::Index concepts) const;
};

template <typename Scalar>
struct ConceptActivation {
    Scalar gated = 0;       // code value after TopK (0 when k is not selected)
    Scalar ungated = 0;     // post-ReLU, pre-TopK value
    Scalar pre_relu = 0;    // post-batch-norm value
};

namespace detail {

// Slope and offset of concept k's post-BN value as a function of the
// encoder's pre-BN activation h_k (eval mode).
template <typename Scalar>
std::pair<Scalar, Scalar> bn_affine(const EncoderParams<Scalar>& enc, std::uint32_t k) {
    if (!enc.bn_enabled) return {Scalar(1), Scalar(0)};
    const Scalar inv = Scalar(1) / std::sqrt(enc.bn_running_var[k] + enc.bn_eps);
    const Scalar slope = enc.bn_gamma[k] * inv;
    return {slope, enc.bn_beta[k] - slope * enc.bn_running_mean[k]};
}

template <typename Scalar>
Scalar concept_pre_relu(const EncoderParams<Scalar>& enc, std::uint32_t k, const VectorX<Scalar>& activations) {
    Scalar h = 0;
    for (Eigen::Index c = 0; c < enc.dim(); ++c) h += enc.w_enc(k, c) * (activations[c] - enc.b_pre[c]);
    const auto [slope, offset] = bn_affine(enc, k);
    return slope * h + offset;
}

}  // namespace detail

template <typename Scalar>
ConceptActivation<Scalar> concept_activation(const VectorX<Scalar>& x, const EncoderParams<Scalar>& enc,
                                             std::uint32_t k, const ToyVisionModel<Scalar>& toy) {
    if (static_cast<Eigen::Index>(k) >= enc.concepts())
        throw ParameterError("concept_activation: concept " + std::to_string(k) + " out of range");
    if (toy.dim() != enc.dim()) throw ShapeError("concept_activation: toy output width != encoder width");
    const VectorX<Scalar> f = toy.forward(x);
    ConceptActivation<Scalar> out;
    out.pre_relu = detail::concept_pre_relu(enc, k, f);
    out.ungated = std::max(Scalar(0), out.pre_relu);
    const MatrixX<Scalar> row = f.transpose();
    out.gated = encode_eval(enc, row).codes.value(0, k);
    return out;
}

// Anisotropic total variation of an h x w image stored row-major.
template <typename Scalar>
Scalar total_variation(const VectorX<Scalar>& x, Eigen::Index h, Eigen::Index w) {
    Scalar tv = 0;
    for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index c = 0; c < w; ++c) {
            if (r + 1 < h) tv += std::abs(x[(r + 1) * w + c] - x[r * w + c]);
            if (c + 1 < w) tv += std::abs(x[r * w + c + 1] - x[r * w + c]);
        }
    return tv;
}

template <typename Scalar>
VectorX<Scalar> total_variation_grad(const VectorX<Scalar>& x, Eigen::Index h, Eigen::Index w) {
    VectorX<Scalar> g = VectorX<Scalar>::Zero(x.size());
    const auto sgn = [](Scalar v) { return v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0)); };
    for (Eigen::Index r = 0; r < h; ++r)
        for (Eigen::Index c = 0; c < w; ++c) {
            const Eigen::Index i = r * w + c;
            if (r + 1 < h) {
                const Scalar s = sgn(x[i + w] - x[i]);
                g[i + w] += s;
                g[i] -= s;
            }
            if (c + 1 < w) {
                const Scalar s = sgn(x[i + 1] - x[i]);
                g[i + 1] += s;
                g[i] -= s;
            }
        }
    return g;
}

template <typename Scalar>
struct ObjectiveEval {
    Scalar value = 0;
    VectorX<Scalar> gradient;
    ConceptActivation<Scalar> activation;
};

// J(x) = y_k(x) - lambda * (alpha ||x||^2 + beta TV(x)), with y_k the
// post-BN pre-ReLU value of concept k. J coincides with the ungated
// objective wherever concept k is active, and still has a useful gradient
// where the ReLU is closed.
template <typename Scalar>
ObjectiveEval<Scalar> actmax_objective(const VectorX<Scalar>& x, const EncoderParams<Scalar>& enc,
                                       const ToyVisionModel<Scalar>& toy, const ActMaxTask& task) {
    const std::uint32_t k = task.concept_index;
    ObjectiveEval<Scalar> out;
    out.activation = concept_activation(x, enc, k, toy);
    const auto lam = static_cast<Scalar>(task.lambda), alpha = static_cast<Scalar>(task.alpha),
               beta = static_cast<Scalar>(task.beta);
    const Scalar reg = alpha * x.squaredNorm() + beta * total_variation(x, toy.height, toy.width);
    out.value = out.activation.pre_relu - lam * reg;

    // dy/df = slope * W_enc[k, :]; df/du = 1 - tanh^2; du/dx = W_f.
    const auto [slope, offset] = detail::bn_affine(enc, k);
    (void)offset;
    const VectorX<Scalar> u = toy.pre_activation(x);
    VectorX<Scalar> du(u.size());
    for (Eigen::Index r = 0; r < u.size(); ++r) {
        const Scalar deriv = toy.saturating ? Scalar(1) - std::tanh(u[r]) * std::tanh(u[r]) : Scalar(1);
        du[r] = slope * enc.w_enc(k, r) * deriv;
    }
    out.gradient = VectorX<Scalar>::Zero(x.size());
    for (Eigen::Index r = 0; r < toy.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < toy.weights.cols(); ++c) out.gradient[c] += du[r] * toy.weights(r, c);
    out.gradient -= lam * (Scalar(2) * alpha * x + beta * total_variation_grad(x, toy.height, toy.width));
    return out;
}

struct ActMaxTrace {
    Matrix image;                   // h x w
    std::vector<double> objective;  // J after init and after every accepted step
    double initial_ungated = 0.0;
    double final_ungated = 0.0;
    double final_gated = 0.0;
    std::size_t accepted_steps = 0;
};

// Gradient ascent on J with backtracking: a step is taken only if J does not
// decrease, halving the step size on rejection; the trace is nondecreasing.
ActMaxTrace optimize_input(const EncoderParams<float>& encoder, const ToyVisionModel<float>& toy,
                           const ActMaxTask& task);

// Optimizes one input per model for the same concept index.
std::vector<ActMaxTrace> coordinated_actmax(const ActMaxTask& task, const UsaeModel& model,
                                            const std::vector<ToyVisionModel<float>>& toys);

// Values of concept k on every row of a code batch (0 where it does not fire).
std::vector<float> concept_values(const CodeBatch<float>& codes, std::uint32_t k);

// Fraction of dataset values strictly below `value`.
double percentile_check(double value, std::span<const float> dataset_values);

std::string trace_csv(const std::vector<ActMaxTrace>& traces);

}  // namespace usae
