#include "usae/actmax.hpp"

#include <cstdio>

namespace usae {

ToyVisionModel<float> make_toy_model(Eigen::Index height, Eigen::Index width, Eigen::Index dim, double gain,
                                     std::uint64_t seed) {
    if (height < 1 || width < 1 || dim < 1) throw ParameterError("make_toy_model: dimensions must be >= 1");
    SeededRng rng(seed);
    ToyVisionModel<float> toy;
    toy.height = height;
    toy.width = width;
    toy.weights.resize(dim, height * width);
    const double sd = gain / std::sqrt(static_cast<double>(height * width));
    for (Eigen::Index r = 0; r < dim; ++r)
        for (Eigen::Index c = 0; c < height * width; ++c) toy.weights(r, c) = static_cast<float>(rng.normal(0.0, sd));
    toy.bias = Vector::Zero(dim);
    return toy;
}

void ActMaxTask::validate(Eigen::Index concepts) const {
    if (static_cast<Eigen::Index>(concept_index) >= concepts)
        throw ParameterError("actmax: concept " + std::to_string(concept_index) + " >= m=" + std::to_string(concepts));
    if (lambda < 0 || alpha < 0 || beta < 0) throw ParameterError("actmax: regularizer weights must be >= 0");
    if (steps < 1) throw ParameterError("actmax: steps must be >= 1");
    if (!(step_size > 0)) throw ParameterError("actmax: step size must be positive");
    if (ball_radius < 0) throw ParameterError("actmax: ball radius must be >= 0");
}

ActMaxTrace optimize_input(const EncoderParams<float>& encoder, const ToyVisionModel<float>& toy,
                           const ActMaxTask& task) {
    task.validate(encoder.concepts());
    const EncoderParams<double> enc = encoder.cast<double>();
    const ToyVisionModel<double> model = toy.cast<double>();

    VectorD x = VectorD::Zero(model.pixels());
    if (task.init == ActMaxInit::noise) {
        SeededRng rng(task.seed);
        for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal(0.0, task.noise_scale);
    }
    const auto project = [&](VectorD& v) {
        if (task.ball_radius > 0) {
            const double n = v.norm();
            if (n > task.ball_radius) v *= task.ball_radius / n;
        }
    };
    project(x);

    ActMaxTrace trace;
    ObjectiveEval<double> cur = actmax_objective(x, enc, model, task);
    if (!std::isfinite(cur.value)) throw DivergenceError("actmax: non-finite objective at step 0");
    trace.initial_ungated = cur.activation.ungated;
    trace.objective.push_back(cur.value);

    double eta = task.step_size;
    for (std::size_t step = 1; step <= task.steps; ++step) {
        if (cur.gradient.squaredNorm() == 0.0) break;
        bool accepted = false;
        for (int attempt = 0; attempt < 50; ++attempt) {
            VectorD cand = x + eta * cur.gradient;
            project(cand);
            ObjectiveEval<double> next = actmax_objective(cand, enc, model, task);
            if (!std::isfinite(next.value))
                throw DivergenceError("actmax: non-finite objective at step " + std::to_string(step));
            if (next.value >= cur.value) {
                x = std::move(cand);
                cur = std::move(next);
                eta *= 1.5;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted) break;
        ++trace.accepted_steps;
        trace.objective.push_back(cur.value);
    }
    trace.final_ungated = cur.activation.ungated;
    trace.final_gated = cur.activation.gated;
    trace.image.resize(model.height, model.width);
    for (Eigen::Index r = 0; r < model.height; ++r)
        for (Eigen::Index c = 0; c < model.width; ++c) trace.image(r, c) = static_cast<float>(x[r * model.width + c]);
    return trace;
}

std::vector<ActMaxTrace> coordinated_actmax(const ActMaxTask& task, const UsaeModel& model,
                                            const std::vector<ToyVisionModel<float>>& toys) {
    if (toys.size() != model.model_count()) throw ShapeError("coordinated_actmax: one toy model per USAE model");
    std::vector<ActMaxTrace> out;
    for (std::size_t i = 0; i < toys.size(); ++i) out.push_back(optimize_input(model.encoders[i], toys[i], task));
    return out;
}

std::vector<float> concept_values(const CodeBatch<float>& codes, std::uint32_t k) {
    if (static_cast<Eigen::Index>(k) >= codes.m) throw ParameterError("concept_values: concept out of range");
    std::vector<float> v(static_cast<std::size_t>(codes.rows()), 0.0f);
    for (Eigen::Index i = 0; i < codes.rows(); ++i) v[static_cast<std::size_t>(i)] = codes.value(i, k);
    return v;
}

double percentile_check(double value, std::span<const float> dataset_values) {
    if (dataset_values.empty()) return 0.0;
    std::size_t below = 0;
    for (float v : dataset_values)
        if (static_cast<double>(v) < value) ++below;
    return static_cast<double>(below) / static_cast<double>(dataset_values.size());
}

std::string trace_csv(const std::vector<ActMaxTrace>& traces) {
    std::string out = "model,iteration,objective\n";
    char buf[96];
    for (std::size_t i = 0; i < traces.size(); ++i)
        for (std::size_t s = 0; s < traces[i].objective.size(); ++s) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", i, s, traces[i].objective[s]);
            out += buf;
        }
    return out;
}

}  // namespace usae
