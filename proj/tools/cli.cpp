#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "usae/actmax.hpp"
#include "usae/align.hpp"
#include "usae/binary_io.hpp"
#include "usae/codes_io.hpp"
#include "usae/heatmap.hpp"
#include "usae/metrics.hpp"
#include "usae/numerics.hpp"
#include "usae/synth.hpp"
#include "usae/trainer.hpp"

namespace usae {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

struct Common {
    std::string out_dir;
    unsigned threads = 1;
};

struct SynthArgs {
    SynthSpec spec;
};

struct TrainArgs {
    std::string manifest;
    std::string resume;
    TrainConfig config;
    std::string loss = "l1";
    bool no_unit_norm = false;
    bool no_bn = false;
};

struct EncodeArgs {
    std::string checkpoint, manifest;
};

struct MetricsArgs {
    std::string checkpoint, manifest;
    double tau = 0.0;
    std::uint64_t min_cofires = 1000;
};

struct AlignArgs {
    std::string checkpoint, other, truth;
    std::size_t model = 0;
    bool baseline = false;
    double threshold = 0.5;
    std::uint64_t seed = 0;
};

struct RecoveryArgs {
    std::string checkpoint, truth, manifest;
    double hit_threshold = 0.9;
    double min_cosine = 0.9;
    double tau = 0.0;
};

struct ActMaxArgs {
    std::string checkpoint, manifest;
    std::vector<std::uint32_t> concepts;
    ActMaxTask task;
    std::string init = "zeros";
    Eigen::Index height = 8, width = 8;
    double gain = 3.0;
    bool linear = false;
};

struct HeatmapArgs {
    std::string codes;
    std::uint32_t concept_index = 0;
    std::size_t grid_h = 0, grid_w = 0;
};

// Only the selected subcommand's options, so `--config` on the echo re-runs it.
void echo_config(const CLI::App& sub, const fs::path& out) {
    const std::string name = sub.get_name();
    io::write_text_file(out / (name + ".config.toml"), "[" + name + "]\n" + sub.config_to_str(true, false));
}

void run_gen_synth(const SynthArgs& a, const fs::path& out) {
    const SynthDataset data = generate(a.spec);
    const fs::path manifest = write_synth(data, out);
    std::cout << "wrote " << manifest.string() << " (" << data.shards.size() << " models, "
              << a.spec.tokens << " tokens)\n";
}

void run_train(TrainArgs a, const fs::path& out) {
    a.config.loss = parse_loss_mode(a.loss);
    a.config.unit_norm = !a.no_unit_norm;
    a.config.bn_enabled = !a.no_bn;
    const ActivationDataset data = load_dataset(fs::path(a.manifest));
    TrainOptions opt;
    opt.out_dir = out;
    if (!a.resume.empty()) opt.resume = load_checkpoint(a.resume);
    const TrainResult r = train(data, a.config, std::move(opt));
    double last = r.log.empty() ? 0.0 : r.log.back().loss_total;
    std::cout << "trained " << r.model.step << " steps, final loss " << fmt(last) << ", checkpoint "
              << (out / "model.usae").string() << "\n";
}

std::vector<CodeBatch<float>> encode_all(const UsaeModel& model, const std::vector<Matrix>& standardized) {
    std::vector<CodeBatch<float>> codes;
    for (std::size_t i = 0; i < model.model_count(); ++i) codes.push_back(encode_standardized(model, i, standardized[i]));
    return codes;
}

void run_encode(const EncodeArgs& a, const fs::path& out) {
    const UsaeModel model = load_checkpoint(a.checkpoint);
    const ActivationDataset data = load_dataset(fs::path(a.manifest));
    const auto codes = encode_all(model, standardized_rows(model, data));
    fs::create_directories(out);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        const fs::path p = out / ("codes_" + model.model_ids[i] + ".uscb");
        write_codes(codes[i], model.model_ids[i], p);
        std::cout << "wrote " << p.string() << "\n";
    }
}

json pearson_json(const PearsonResult& p) { return {{"r", p.r}, {"slope", p.slope}}; }

void run_metrics(const MetricsArgs& a, const fs::path& out) {
    const UsaeModel model = load_checkpoint(a.checkpoint);
    const ActivationDataset data = load_dataset(fs::path(a.manifest));
    const auto standardized = standardized_rows(model, data);
    const MatrixD r2 = r2_matrix(model, standardized);
    io::write_text_file(out / "r2.csv", r2_csv(r2, model.model_ids));

    const auto codes = encode_all(model, standardized);
    const FiringStats stats = firing_stats(codes, a.tau);
    const ConceptEnergy energy = energies(model, codes);
    io::write_text_file(out / "firing.csv", firing_csv(stats, energy));

    const VectorD mean_energy = energy.mean_over_models();
    std::string ecsv = "concept";
    for (const auto& id : model.model_ids) ecsv += ",energy_" + id;
    ecsv += ",energy_mean\n";
    for (Eigen::Index k = 0; k < mean_energy.size(); ++k) {
        ecsv += std::to_string(k);
        for (Eigen::Index i = 0; i < energy.per_model.rows(); ++i) ecsv += "," + fmt(energy.per_model(i, k));
        ecsv += "," + fmt(mean_energy[k]) + "\n";
    }
    io::write_text_file(out / "energy.csv", ecsv);

    json report;
    try {
        const EnergyUniversality eu = energy_universality(stats, mean_energy, a.min_cofires);
        report["all"] = pearson_json(eu.all);
        report["n_all"] = eu.n_all;
        report["n_filtered"] = eu.n_filtered;
        report["min_cofires"] = eu.min_cofires;
        report["filtered"] = eu.filtered ? pearson_json(*eu.filtered) : json(nullptr);
    } catch (const DegenerateInputError& e) {
        report["error"] = e.what();
    }
    io::write_text_file(out / "correlation.json", report.dump(2) + "\n");

    for (Eigen::Index i = 0; i < r2.rows(); ++i) {
        std::cout << "r2[" << model.model_ids[static_cast<std::size_t>(i)] << "]";
        for (Eigen::Index j = 0; j < r2.cols(); ++j) std::cout << " " << fmt(r2(i, j));
        std::cout << "\n";
    }
    std::cout << "cofire/energy correlation: " << report.dump() << "\n";
}

void run_align(const AlignArgs& a, const fs::path& out) {
    const UsaeModel model = load_checkpoint(a.checkpoint);
    if (a.model >= model.model_count())
        throw ParameterError("align: --model " + std::to_string(a.model) + " out of range");
    const Matrix& mine = model.dictionaries[a.model].atoms;
    const int sources = int(!a.other.empty()) + int(!a.truth.empty()) + int(a.baseline);
    if (sources != 1) throw ParameterError("align: give exactly one of --other, --truth, --baseline");
    ConceptMatchResult r;
    if (!a.other.empty()) {
        const UsaeModel other = load_checkpoint(a.other);
        if (a.model >= other.model_count()) throw ParameterError("align: --model out of range for --other");
        r = consistency(mine, other.dictionaries[a.model].atoms, a.threshold);
    } else if (!a.truth.empty()) {
        const GroundTruth truth = read_truth(a.truth);
        if (a.model >= truth.models()) throw ParameterError("align: --model out of range for --truth");
        r = consistency(truth.dictionaries[a.model], mine, a.threshold);
    } else {
        SeededRng rng(a.seed);
        r = consistency(mine, random_baseline(mine, rng), a.threshold);
    }
    io::write_text_file(out / "consistency.csv", consistency_csv(r));
    std::cout << "auc " << fmt(r.auc) << " frac_above_" << fmt(a.threshold) << " " << fmt(r.frac_above) << "\n";
}

void run_recovery(const RecoveryArgs& a, const fs::path& out) {
    const UsaeModel model = load_checkpoint(a.checkpoint);
    const GroundTruth truth = read_truth(a.truth);
    const auto rec = recovery_score(model, truth, a.hit_threshold);
    io::write_text_file(out / "recovery.csv", recovery_csv(rec, model.model_ids));
    json report;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        report["models"].push_back(
            {{"model_id", model.model_ids[i]}, {"hit_rate", rec[i].hit_rate}, {"mean_cosine", rec[i].mean_cosine}});
        std::cout << "hit_rate " << model.model_ids[i] << " " << fmt(rec[i].hit_rate) << " mean_cosine "
                  << fmt(rec[i].mean_cosine) << "\n";
    }
    if (!a.manifest.empty()) {
        const ActivationDataset data = load_dataset(fs::path(a.manifest));
        const auto codes = encode_all(model, standardized_rows(model, data));
        const UniversalityReport u = universality_oracle(truth, firing_stats(codes, a.tau), rec, a.min_cosine);
        report["universality"] = {{"mean_fe_universal", u.mean_fe_universal}, {"mean_fe_partial", u.mean_fe_partial},
                                  {"n_universal", u.n_universal},           {"n_partial", u.n_partial},
                                  {"skipped", u.skipped},                   {"conflicts", u.conflicts}};
        std::cout << "mean FE universal " << fmt(u.mean_fe_universal) << " partial " << fmt(u.mean_fe_partial) << "\n";
    }
    io::write_text_file(out / "recovery.json", report.dump(2) + "\n");
}

void run_actmax(ActMaxArgs a, const fs::path& out, std::uint64_t seed) {
    if (a.init == "zeros")
        a.task.init = ActMaxInit::zeros;
    else if (a.init == "noise")
        a.task.init = ActMaxInit::noise;
    else
        throw ParameterError("actmax: --init must be zeros or noise");
    a.task.seed = seed;
    const UsaeModel model = load_checkpoint(a.checkpoint);
    std::vector<ToyVisionModel<float>> toys;
    for (std::size_t i = 0; i < model.model_count(); ++i) {
        toys.push_back(make_toy_model(a.height, a.width, model.encoders[i].dim(), a.gain, seed + i));
        toys.back().saturating = !a.linear;
    }
    std::vector<CodeBatch<float>> codes;
    if (!a.manifest.empty()) codes = encode_all(model, standardized_rows(model, load_dataset(fs::path(a.manifest))));

    std::string summary = "concept,model,initial_ungated,final_ungated,final_gated,accepted_steps,percentile\n";
    for (std::uint32_t k : a.concepts) {
        a.task.concept_index = k;
        const auto traces = coordinated_actmax(a.task, model, toys);
        io::write_text_file(out / ("actmax_c" + std::to_string(k) + "_trace.csv"), trace_csv(traces));
        for (std::size_t i = 0; i < traces.size(); ++i) {
            const auto& t = traces[i];
            write_pgm(to_gray(t.image), out / ("actmax_c" + std::to_string(k) + "_" + model.model_ids[i] + ".pgm"));
            std::string pct = "";
            if (!codes.empty()) {
                const auto vals = concept_values(codes[i], k);
                pct = fmt(percentile_check(t.final_gated, vals));
            }
            summary += std::to_string(k) + "," + model.model_ids[i] + "," + fmt(t.initial_ungated) + "," +
                       fmt(t.final_ungated) + "," + fmt(t.final_gated) + "," + std::to_string(t.accepted_steps) +
                       "," + pct + "\n";
        }
    }
    io::write_text_file(out / "actmax_summary.csv", summary);
    std::cout << summary;
}

void run_heatmap(const HeatmapArgs& a, const fs::path& out) {
    std::string id;
    const CodeBatch<float> codes = read_codes(a.codes, &id);
    const auto images = export_heatmap(codes, a.concept_index, a.grid_h, a.grid_w);
    for (std::size_t n = 0; n < images.size(); ++n)
        write_pgm(images[n], out / ("heatmap_" + id + "_c" + std::to_string(a.concept_index) + "_" +
                                    std::to_string(n) + ".pgm"));
    std::cout << "wrote " << images.size() << " heatmaps\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Universal sparse autoencoders: synthetic data, training, metrics, alignment, visualization"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Re-run from a config echo file");
    app.allow_config_extras(false);

    Common common;
    const char* env_out = std::getenv("USAE_OUT_DIR");
    common.out_dir = env_out && *env_out ? env_out : "usae_out";
    std::uint64_t seed = 0;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--out", common.out_dir, "Output directory (default $USAE_OUT_DIR or usae_out)")
            ->capture_default_str();
        sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::Range(1u, 1024u))
            ->capture_default_str();
        sub->add_option("--seed", seed, "Seed")->capture_default_str();
        sub->configurable();
    };

    SynthArgs synth;
    auto* gen = app.add_subcommand("gen-synth", "Generate a synthetic multi-model dataset with ground truth");
    add_common(gen);
    gen->add_option("--dims", synth.spec.dims, "Per-model activation widths")->capture_default_str();
    gen->add_option("--concepts", synth.spec.concepts, "Ground-truth concept count")->capture_default_str();
    gen->add_option("--sparsity", synth.spec.sparsity, "Active concepts per token")->capture_default_str();
    gen->add_option("--tokens", synth.spec.tokens, "Token count")->capture_default_str();
    gen->add_option("--value-lo", synth.spec.value_lo)->capture_default_str();
    gen->add_option("--value-hi", synth.spec.value_hi)->capture_default_str();
    gen->add_option("--noise", synth.spec.noise_sigma, "Gaussian noise sigma")->capture_default_str();
    gen->add_option("--universal-fraction", synth.spec.universal_fraction)->capture_default_str();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a USAE on a dataset manifest");
    add_common(train_cmd);
    train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
    train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from; training options come from it");
    train_cmd->add_option("--steps", tr.config.total_steps)->capture_default_str();
    train_cmd->add_option("--batch", tr.config.batch_size)->capture_default_str();
    train_cmd->add_option("-k,--topk", tr.config.k, "Active concepts per token")->capture_default_str();
    train_cmd->add_option("-m,--concepts", tr.config.m, "Concept count (0: 8 x widest model)")->capture_default_str();
    train_cmd->add_option("--lr", tr.config.lr0)->capture_default_str();
    train_cmd->add_option("--lr-final", tr.config.lr_final)->capture_default_str();
    train_cmd->add_option("--warmup", tr.config.warmup_fraction, "Warmup fraction of steps")->capture_default_str();
    train_cmd->add_option("--loss", tr.loss, "l1 or fro")->check(CLI::IsMember({"l1", "fro"}))->capture_default_str();
    train_cmd->add_flag("--no-unit-norm", tr.no_unit_norm, "Do not renormalize dictionary atoms");
    train_cmd->add_flag("--no-bn", tr.no_bn, "Disable encoder batch norm");
    train_cmd->add_flag("--step-all-decoders", tr.config.step_all_decoders);
    train_cmd->add_option("--checkpoint-every", tr.config.checkpoint_every)->capture_default_str();
    train_cmd->add_option("--standardizer-samples", tr.config.standardizer_samples)->capture_default_str();

    EncodeArgs enc;
    auto* encode_cmd = app.add_subcommand("encode", "Write sparse codes for every model");
    add_common(encode_cmd);
    encode_cmd->add_option("--checkpoint", enc.checkpoint)->required();
    encode_cmd->add_option("--manifest", enc.manifest)->required();

    MetricsArgs met;
    auto* metrics_cmd = app.add_subcommand("metrics", "R2 matrix, energies, firing statistics, correlation");
    add_common(metrics_cmd);
    metrics_cmd->add_option("--checkpoint", met.checkpoint)->required();
    metrics_cmd->add_option("--manifest", met.manifest)->required();
    metrics_cmd->add_option("--tau", met.tau, "Firing threshold")->capture_default_str();
    metrics_cmd->add_option("--min-cofires", met.min_cofires)->capture_default_str();

    AlignArgs al;
    auto* align_cmd = app.add_subcommand("align", "Concept consistency between dictionaries");
    add_common(align_cmd);
    align_cmd->add_option("--checkpoint", al.checkpoint)->required();
    align_cmd->add_option("--other", al.other, "Second checkpoint");
    align_cmd->add_option("--truth", al.truth, "Ground-truth file");
    align_cmd->add_flag("--baseline", al.baseline, "Compare against a random baseline dictionary");
    align_cmd->add_option("--model", al.model, "Model index")->capture_default_str();
    align_cmd->add_option("--threshold", al.threshold)->capture_default_str();

    RecoveryArgs rc;
    auto* rec_cmd = app.add_subcommand("recovery", "Score learned dictionaries against ground truth");
    add_common(rec_cmd);
    rec_cmd->add_option("--checkpoint", rc.checkpoint)->required();
    rec_cmd->add_option("--truth", rc.truth)->required();
    rec_cmd->add_option("--manifest", rc.manifest, "Dataset, for the firing-entropy report");
    rec_cmd->add_option("--hit-threshold", rc.hit_threshold)->capture_default_str();
    rec_cmd->add_option("--min-cosine", rc.min_cosine)->capture_default_str();
    rec_cmd->add_option("--tau", rc.tau)->capture_default_str();

    ActMaxArgs am;
    auto* am_cmd = app.add_subcommand("actmax", "Coordinated activation maximization on toy vision models");
    add_common(am_cmd);
    am_cmd->add_option("--checkpoint", am.checkpoint)->required();
    am_cmd->add_option("--concept", am.concepts, "Concept indices")->required();
    am_cmd->add_option("--manifest", am.manifest, "Dataset, for percentile reporting");
    am_cmd->add_option("--lambda", am.task.lambda)->capture_default_str();
    am_cmd->add_option("--alpha", am.task.alpha)->capture_default_str();
    am_cmd->add_option("--beta", am.task.beta)->capture_default_str();
    am_cmd->add_option("--steps", am.task.steps)->capture_default_str();
    am_cmd->add_option("--step-size", am.task.step_size)->capture_default_str();
    am_cmd->add_option("--init", am.init, "zeros or noise")->capture_default_str();
    am_cmd->add_option("--ball-radius", am.task.ball_radius)->capture_default_str();
    am_cmd->add_option("--height", am.height)->capture_default_str();
    am_cmd->add_option("--width", am.width)->capture_default_str();
    am_cmd->add_option("--gain", am.gain, "Toy model weight scale")->capture_default_str();
    am_cmd->add_flag("--linear", am.linear, "Toy model without tanh");

    HeatmapArgs hm;
    auto* hm_cmd = app.add_subcommand("heatmap", "Per-image PGM activation maps of one concept");
    add_common(hm_cmd);
    hm_cmd->add_option("--codes", hm.codes)->required();
    hm_cmd->add_option("--concept", hm.concept_index)->required();
    hm_cmd->add_option("--grid-h", hm.grid_h)->required();
    hm_cmd->add_option("--grid-w", hm.grid_w)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        set_num_threads(common.threads);
        const fs::path out(common.out_dir);
        fs::create_directories(out);
        CLI::App* sub = app.get_subcommands().front();
        echo_config(*sub, out);
        const std::string name = sub->get_name();
        if (name == "gen-synth") {
            synth.spec.seed = seed;
            run_gen_synth(synth, out);
        } else if (name == "train") {
            tr.config.seed = seed;
            run_train(tr, out);
        } else if (name == "encode") {
            run_encode(enc, out);
        } else if (name == "metrics") {
            run_metrics(met, out);
        } else if (name == "align") {
            al.seed = seed;
            run_align(al, out);
        } else if (name == "recovery") {
            run_recovery(rc, out);
        } else if (name == "actmax") {
            run_actmax(am, out, seed);
        } else if (name == "heatmap") {
            run_heatmap(hm, out);
        }
        return 0;
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace usae
