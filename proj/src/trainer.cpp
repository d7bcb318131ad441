#include "usae/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"
#include "usae/tensor_io.hpp"

namespace usae {

using nlohmann::json;

LossMode parse_loss_mode(const std::string& s) {
    if (s == "l1") return LossMode::l1;
    if (s == "fro") return LossMode::fro;
    throw ParameterError("unknown loss mode '" + s + "' (expected l1 or fro)");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
    if (k < 1) throw ParameterError("K must be >= 1");
    if (m != 0 && k > m) throw ParameterError("K must not exceed m");
    if (!(lr0 > 0)) throw ParameterError("lr0 must be positive");
    if (lr_final < 0 || lr_final > lr0) throw ParameterError("lr_final must lie in [0, lr0]");
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ParameterError("warmup_fraction must lie in [0, 1)");
    if (standardizer_samples < 1) throw ParameterError("standardizer_samples must be >= 1");
}

std::string TrainConfig::to_json() const {
    json j{{"total_steps", total_steps},
           {"batch_size", batch_size},
           {"k", k},
           {"m", m},
           {"lr0", lr0},
           {"lr_final", lr_final},
           {"warmup_fraction", warmup_fraction},
           {"loss", to_string(loss)},
           {"seed", seed},
           {"unit_norm", unit_norm},
           {"bn_enabled", bn_enabled},
           {"step_all_decoders", step_all_decoders},
           {"checkpoint_every", checkpoint_every},
           {"standardizer_samples", standardizer_samples}};
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    TrainConfig c;
    try {
        const json j = json::parse(text);
        c.total_steps = j.at("total_steps").get<std::uint64_t>();
        c.batch_size = j.at("batch_size").get<std::size_t>();
        c.k = j.at("k").get<std::size_t>();
        c.m = j.at("m").get<std::size_t>();
        c.lr0 = j.at("lr0").get<double>();
        c.lr_final = j.at("lr_final").get<double>();
        c.warmup_fraction = j.at("warmup_fraction").get<double>();
        c.loss = parse_loss_mode(j.at("loss").get<std::string>());
        c.seed = j.at("seed").get<std::uint64_t>();
        c.unit_norm = j.at("unit_norm").get<bool>();
        c.bn_enabled = j.at("bn_enabled").get<bool>();
        c.step_all_decoders = j.at("step_all_decoders").get<bool>();
        c.checkpoint_every = j.at("checkpoint_every").get<std::uint64_t>();
        c.standardizer_samples = j.at("standardizer_samples").get<std::size_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string("train config: ") + e.what());
    }
    return c;
}

void UsaeModel::validate() const {
    const std::size_t n = encoders.size();
    if (n == 0) throw DataError("model has no encoder/dictionary pairs");
    if (dictionaries.size() != n || model_ids.size() != n || standardizers.size() != n ||
        encoder_adam.size() != n || dictionary_adam.size() != n || updates.size() != n)
        throw DataError("model component counts disagree");
    const Eigen::Index m = dictionaries.front().concepts();
    for (std::size_t i = 0; i < n; ++i) {
        encoders[i].validate();
        if (dictionaries[i].concepts() != m) throw ShapeError("dictionaries disagree on concept count");
        if (encoders[i].concepts() != m) throw ShapeError("encoder concept count differs from dictionaries");
        if (encoders[i].dim() != dictionaries[i].dim())
            throw ShapeError("encoder width differs from its dictionary width for model " + model_ids[i]);
        if (standardizers[i].mean.size() != encoders[i].dim()) throw ShapeError("standardizer width mismatch");
    }
}

StreamSeeds StreamSeeds::from(std::uint64_t seed) {
    SeededRng root(seed);
    return {root.next_u64(), root.next_u64(), root.next_u64(), root.next_u64()};
}

UsaeModel init_model(const std::vector<std::string>& model_ids, const std::vector<Eigen::Index>& dims,
                     const TrainConfig& config, std::vector<Standardizer> standardizers) {
    config.validate();
    if (model_ids.empty() || model_ids.size() != dims.size() || standardizers.size() != dims.size())
        throw ParameterError("init_model: need one id, width and standardizer per model");
    Eigen::Index widest = 0;
    for (auto d : dims) widest = std::max(widest, d);
    const auto m = static_cast<Eigen::Index>(config.m == 0 ? 8 * static_cast<std::size_t>(widest) : config.m);
    if (static_cast<Eigen::Index>(config.k) > m) throw ParameterError("K must not exceed m");

    const StreamSeeds seeds = StreamSeeds::from(config.seed);
    SeededRng rng(seeds.init);
    UsaeModel model;
    model.config = config;
    model.config.m = static_cast<std::size_t>(m);
    model.model_ids = model_ids;
    model.standardizers = std::move(standardizers);
    for (const Eigen::Index d : dims) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        Matrix w(m, d);
        for (Eigen::Index r = 0; r < m; ++r)
            for (Eigen::Index c = 0; c < d; ++c) w(r, c) = static_cast<float>(rng.normal(0.0, sd));
        EncoderParams<float> enc = EncoderParams<float>::linear(std::move(w), config.k);
        enc.bn_enabled = config.bn_enabled;
        model.encoders.push_back(std::move(enc));
    }
    for (const Eigen::Index d : dims) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        Dictionary<float> dict;
        dict.unit_norm = config.unit_norm;
        dict.atoms.resize(m, d);
        for (Eigen::Index r = 0; r < m; ++r)
            for (Eigen::Index c = 0; c < d; ++c) dict.atoms(r, c) = static_cast<float>(rng.normal(0.0, sd));
        dict.normalize_rows();
        model.dictionaries.push_back(std::move(dict));
    }
    model.encoder_adam.resize(dims.size());
    model.dictionary_adam.resize(dims.size());
    model.updates.assign(dims.size(), 0);
    model.selection_rng.reseed(seeds.selection);
    return model;
}

std::uint64_t warmup_steps(const TrainConfig& c) {
    return static_cast<std::uint64_t>(std::floor(c.warmup_fraction * static_cast<double>(c.total_steps)));
}

double lr_at(std::uint64_t step, const TrainConfig& c) {
    if (step >= c.total_steps)
        throw ParameterError("lr_at: step " + std::to_string(step) + " outside [0, " +
                             std::to_string(c.total_steps) + ")");
    const std::uint64_t warm = warmup_steps(c);
    if (step < warm) return c.lr0 * static_cast<double>(step) / static_cast<double>(warm);
    const std::uint64_t last = c.total_steps - 1;
    if (last <= warm) return c.lr0;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(last - warm);
    return c.lr_final + 0.5 * (c.lr0 - c.lr_final) * (1.0 + std::cos(std::numbers::pi * progress));
}

StepReport train_step(UsaeModel& model, const std::vector<Matrix>& batch, std::size_t chosen, double lr) {
    const std::size_t n_models = model.model_count();
    if (chosen >= n_models) throw ParameterError("train_step: model index out of range");
    if (batch.size() != n_models) throw ShapeError("train_step: need one aligned batch per model");
    for (std::size_t j = 1; j < n_models; ++j)
        if (batch[j].rows() != batch[0].rows()) throw ShapeError("train_step: batches are not row-aligned");

    auto fwd = encode(model.encoders[chosen], batch[chosen], Mode::train);
    StepReport rep;
    rep.step = model.step;
    rep.chosen = chosen;
    rep.lr = lr;
    std::vector<Matrix> upstream;
    upstream.reserve(n_models);
    for (std::size_t j = 0; j < n_models; ++j) {
        const Matrix recon = decode(fwd.codes, model.dictionaries[j]);
        const double l = recon_loss(batch[j], recon, model.config.loss);
        rep.losses.push_back(l);
        rep.loss_total += l;
        upstream.push_back(recon_loss_grad(batch[j], recon, model.config.loss));
    }
    auto grads = backward(model.encoders[chosen], fwd.cache, fwd.codes,
                          std::span<const Dictionary<float>>(model.dictionaries), std::span<const Matrix>(upstream));

    adam_step(model.encoders[chosen], grads.encoder, model.encoder_adam[chosen], lr);
    for (std::size_t j = 0; j < n_models; ++j) {
        if (j == chosen || model.config.step_all_decoders)
            adam_step(model.dictionaries[j], grads.dictionaries[j], model.dictionary_adam[j], lr);
    }
    ++model.updates[chosen];
    ++model.step;
    return rep;
}

Trainer::Trainer(UsaeModel& model, const ActivationDataset& data)
    : model_(model),
      data_(data),
      sampler_(static_cast<std::size_t>(data.n_tokens()), model.config.batch_size,
               StreamSeeds::from(model.config.seed).batches) {
    if (data.model_count() != model.model_count()) throw ShapeError("Trainer: dataset and model disagree on M");
    for (std::size_t i = 0; i < data.model_count(); ++i)
        if (data.activations[i].cols() != model.encoders[i].dim())
            throw ShapeError("Trainer: width of model " + model.model_ids[i] + " differs from the dataset");
    if (model.sampler) sampler_.set_state(*model.sampler);
}

StepReport Trainer::step() {
    const std::size_t chosen = model_.selection_rng.uniform_int(model_.model_count());
    const auto rows = sampler_.next();
    std::vector<Matrix> batch;
    batch.reserve(data_.model_count());
    for (std::size_t j = 0; j < data_.model_count(); ++j)
        batch.push_back(gather_rows(data_.activations[j], rows, model_.standardizers[j]));
    const double lr = lr_at(model_.step, model_.config);
    StepReport rep = train_step(model_, batch, chosen, lr);
    model_.sampler = sampler_.state();
    return rep;
}

std::string log_csv_header(std::size_t model_count) {
    std::string h = "step,i,loss_total";
    for (std::size_t j = 0; j < model_count; ++j) h += ",loss_" + std::to_string(j);
    return h + ",lr\n";
}

std::string log_csv_row(const StepReport& r) {
    char buf[64];
    std::string line = std::to_string(r.step) + "," + std::to_string(r.chosen);
    std::snprintf(buf, sizeof buf, ",%.9g", r.loss_total);
    line += buf;
    for (double l : r.losses) {
        std::snprintf(buf, sizeof buf, ",%.9g", l);
        line += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.9g\n", r.lr);
    return line + buf;
}

TrainResult train(const ActivationDataset& data, const TrainConfig& config, TrainOptions options) {
    config.validate();
    if (!data.manifest.token_alignment) throw DataError("train: manifest is not token-aligned");
    if (data.model_count() == 0) throw DataError("train: no models");

    TrainResult result;
    if (options.resume) {
        result.model = std::move(*options.resume);
        result.model.validate();
    } else {
        SeededRng st_rng(StreamSeeds::from(config.seed).standardizer);
        const std::size_t samples =
            std::min<std::size_t>(config.standardizer_samples, static_cast<std::size_t>(data.n_tokens()));
        auto standardizers = fit_standardizers(data, samples, st_rng);
        std::vector<std::string> ids;
        std::vector<Eigen::Index> dims;
        for (std::size_t i = 0; i < data.model_count(); ++i) {
            ids.push_back(data.manifest.models.at(i).model_id);
            dims.push_back(data.activations[i].cols());
        }
        result.model = init_model(ids, dims, config, std::move(standardizers));
    }
    UsaeModel& model = result.model;

    std::string log = log_csv_header(model.model_count());
    if (model.config.total_steps > 0) {
        Trainer trainer(model, data);
        while (!trainer.done()) {
            StepReport rep = trainer.step();
            if (!std::isfinite(rep.loss_total))
                throw DivergenceError("train: non-finite loss at step " + std::to_string(rep.step));
            log += log_csv_row(rep);
            if (options.on_step) options.on_step(rep);
            const std::uint64_t every = model.config.checkpoint_every;
            if (!options.out_dir.empty() && every > 0 && model.step % every == 0 &&
                model.step != model.config.total_steps)
                save_checkpoint(model, options.out_dir / ("checkpoint_" + std::to_string(model.step) + ".usae"));
            result.log.push_back(std::move(rep));
        }
    }
    if (!options.out_dir.empty()) {
        io::write_text_file(options.out_dir / "train_log.csv", log);
        save_checkpoint(model, options.out_dir / "model.usae");
    }
    return result;
}

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

template <typename S>
void put_slot(io::ByteWriter& w, const AdamSlot<S>& s) {
    w.put(s.step);
    w.put(static_cast<std::uint8_t>(s.m1.size() > 0));
    if (s.m1.size() > 0) {
        io::put_tensor(w, s.m1);
        io::put_tensor(w, s.m2);
    }
}

template <typename S>
void get_slot(io::ByteReader& r, AdamSlot<S>& s) {
    s.step = r.get<std::uint64_t>("adam step");
    if (r.get<std::uint8_t>("adam flag")) {
        io::get_tensor(r, s.m1, "adam m1");
        io::get_tensor(r, s.m2, "adam m2");
    }
}

void put_rng(io::ByteWriter& w, const SeededRng::State& s) {
    for (auto v : s) w.put(v);
}

SeededRng::State get_rng(io::ByteReader& r) {
    SeededRng::State s{};
    for (auto& v : s) v = r.get<std::uint64_t>("rng state");
    return s;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const UsaeModel& model) {
    model.validate();
    io::ByteWriter w;
    w.put_magic("USCK");
    w.put(kCheckpointVersion);
    w.put_string(model.config.to_json());
    w.put(model.step);
    put_rng(w, model.selection_rng.state());
    w.put(static_cast<std::uint8_t>(model.sampler.has_value()));
    if (model.sampler) {
        put_rng(w, model.sampler->rng);
        w.put(static_cast<std::uint64_t>(model.sampler->order.size()));
        w.put_array(model.sampler->order.data(), model.sampler->order.size());
        w.put(model.sampler->cursor);
    }
    w.put(static_cast<std::uint32_t>(model.model_count()));
    for (std::size_t i = 0; i < model.model_count(); ++i) {
        w.put_string(model.model_ids[i]);
        const auto& st = model.standardizers[i];
        io::put_tensor(w, st.mean);
        io::put_tensor(w, st.stddev);
        w.put(st.sample_count);
        w.put(st.eps);
        const auto& e = model.encoders[i];
        w.put(static_cast<std::uint32_t>(e.k));
        w.put(static_cast<std::uint8_t>(e.bn_enabled));
        w.put(e.bn_momentum);
        w.put(e.bn_eps);
        io::put_tensor(w, e.w_enc);
        io::put_tensor(w, e.b_pre);
        io::put_tensor(w, e.bn_gamma);
        io::put_tensor(w, e.bn_beta);
        io::put_tensor(w, e.bn_running_mean);
        io::put_tensor(w, e.bn_running_var);
        const auto& d = model.dictionaries[i];
        w.put(static_cast<std::uint8_t>(d.unit_norm));
        io::put_tensor(w, d.atoms);
        put_slot(w, model.encoder_adam[i].w_enc);
        put_slot(w, model.encoder_adam[i].b_pre);
        put_slot(w, model.encoder_adam[i].bn_gamma);
        put_slot(w, model.encoder_adam[i].bn_beta);
        put_slot(w, model.dictionary_adam[i].atoms);
        w.put(model.updates[i]);
    }
    return w.bytes();
}

UsaeModel decode_checkpoint(std::vector<unsigned char> bytes) {
    io::ByteReader r(std::move(bytes));
    r.expect_magic("USCK");
    const auto at = r.offset();
    if (r.get<std::uint16_t>("version") != kCheckpointVersion) throw FormatError("unsupported checkpoint version", at);
    UsaeModel model;
    model.config = TrainConfig::from_json(r.get_string("config"));
    model.step = r.get<std::uint64_t>("step");
    model.selection_rng.set_state(get_rng(r));
    if (r.get<std::uint8_t>("sampler flag")) {
        BatchSampler::State s;
        s.rng = get_rng(r);
        const auto n = r.get<std::uint64_t>("sampler size");
        if (n > r.remaining() / sizeof(std::uint32_t)) throw FormatError("truncated sampler order", r.offset());
        s.order.resize(static_cast<std::size_t>(n));
        r.get_array(s.order.data(), s.order.size(), "sampler order");
        s.cursor = r.get<std::uint64_t>("sampler cursor");
        model.sampler = std::move(s);
    }
    const auto count = r.get<std::uint32_t>("model count");
    for (std::uint32_t i = 0; i < count; ++i) {
        model.model_ids.push_back(r.get_string("model_id"));
        Standardizer st;
        io::get_tensor(r, st.mean, "standardizer mean");
        io::get_tensor(r, st.stddev, "standardizer std");
        st.sample_count = r.get<std::uint64_t>("standardizer samples");
        st.eps = r.get<float>("standardizer eps");
        model.standardizers.push_back(std::move(st));
        EncoderParams<float> e;
        e.k = r.get<std::uint32_t>("k");
        e.bn_enabled = r.get<std::uint8_t>("bn flag") != 0;
        e.bn_momentum = r.get<float>("bn momentum");
        e.bn_eps = r.get<float>("bn eps");
        io::get_tensor(r, e.w_enc, "w_enc");
        io::get_tensor(r, e.b_pre, "b_pre");
        io::get_tensor(r, e.bn_gamma, "bn_gamma");
        io::get_tensor(r, e.bn_beta, "bn_beta");
        io::get_tensor(r, e.bn_running_mean, "bn_running_mean");
        io::get_tensor(r, e.bn_running_var, "bn_running_var");
        model.encoders.push_back(std::move(e));
        Dictionary<float> d;
        d.unit_norm = r.get<std::uint8_t>("unit_norm flag") != 0;
        io::get_tensor(r, d.atoms, "dictionary");
        model.dictionaries.push_back(std::move(d));
        EncoderAdam<float> ea;
        get_slot(r, ea.w_enc);
        get_slot(r, ea.b_pre);
        get_slot(r, ea.bn_gamma);
        get_slot(r, ea.bn_beta);
        model.encoder_adam.push_back(std::move(ea));
        DictionaryAdam<float> da;
        get_slot(r, da.atoms);
        model.dictionary_adam.push_back(std::move(da));
        model.updates.push_back(r.get<std::uint64_t>("updates"));
    }
    r.expect_end();
    model.validate();
    return model;
}

void save_checkpoint(const UsaeModel& model, const std::filesystem::path& path) {
    io::write_binary_file(path, encode_checkpoint(model));
}

UsaeModel load_checkpoint(const std::filesystem::path& path) {
    std::vector<unsigned char> bytes = io::read_binary_file(path);
    try {
        return decode_checkpoint(std::move(bytes));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

CodeBatch<float> encode_standardized(const UsaeModel& model, std::size_t i, const Matrix& standardized) {
    if (i >= model.model_count()) throw ParameterError("encode: model index out of range");
    return encode_eval(model.encoders[i], standardized).codes;
}

CodeBatch<float> encode_raw(const UsaeModel& model, std::size_t i, const Matrix& raw) {
    if (i >= model.model_count()) throw ParameterError("encode: model index out of range");
    return encode_standardized(model, i, model.standardizers[i].apply(raw));
}

}  // namespace usae
