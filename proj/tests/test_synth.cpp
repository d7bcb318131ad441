#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "usae/binary_io.hpp"
#include "usae/synth.hpp"
#include "usae/trainer.hpp"

using namespace usae;

namespace {

ActivationDataset as_dataset(const SynthDataset& s) {
    ActivationDataset d;
    for (const auto& sh : s.shards) {
        d.manifest.models.push_back({sh.model_id, sh.dim(), {}});
        d.activations.push_back(sh.values);
    }
    d.manifest.n_tokens_total = s.shards.front().n_tokens();
    return d;
}

std::vector<Matrix> raw(const SynthDataset& s) {
    std::vector<Matrix> out;
    for (const auto& sh : s.shards) out.push_back(sh.values);
    return out;
}

SynthSpec wide_spec() {
    SynthSpec spec;
    spec.dims = {8, 10, 12};
    spec.concepts = 6;
    spec.sparsity = 2;
    spec.tokens = 500;
    spec.seed = 3;
    return spec;
}

}  // namespace

TEST_CASE("codes have exactly k* distinct positive entries") {
    SynthSpec spec;
    spec.tokens = 2000;
    const auto s = generate(spec);
    const auto& z = s.truth.codes;
    REQUIRE(z.rows() == 2000);
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const auto row = z.row(r);
        REQUIRE(row.size() == spec.sparsity);
        for (std::size_t t = 0; t < row.size(); ++t) {
            CHECK(row[t].value >= 0.5f);
            CHECK(row[t].value <= 2.0f);
            if (t) CHECK(row[t].index > row[t - 1].index);
        }
    }
    std::size_t universal = 0;
    for (Eigen::Index c = 0; c < s.truth.concepts(); ++c) {
        universal += s.truth.universal(c);
        const auto present = (s.truth.mask.row(c).array() != 0).count();
        CHECK(present >= 1);
    }
    CHECK(universal == 36);
    for (const auto& D : s.truth.dictionaries)
        for (Eigen::Index r = 0; r < D.rows(); ++r) CHECK(std::abs(D.row(r).norm() - 1.0f) < 1e-5f);
}

TEST_CASE("noise-free universal data lies in the dictionary row space") {
    SynthSpec spec;
    spec.dims = {10, 12};
    spec.concepts = 4;
    spec.sparsity = 2;
    spec.tokens = 200;
    spec.noise_sigma = 0.0;
    spec.universal_fraction = 1.0;
    const auto s = generate(spec);
    for (std::size_t i = 0; i < 2; ++i) {
        const MatrixD D = s.truth.dictionaries[i].cast<double>();
        const MatrixD A = s.shards[i].values.cast<double>();
        // project onto span of D's rows
        const MatrixD coef = (D * D.transpose()).ldlt().solve(D * A.transpose());
        const MatrixD resid = A - (D.transpose() * coef).transpose();
        CHECK(resid.cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("generation is deterministic per seed") {
    SynthSpec spec;
    spec.tokens = 300;
    spec.seed = 11;
    const auto a = generate(spec), b = generate(spec);
    for (std::size_t i = 0; i < 3; ++i) CHECK(encode_shard(a.shards[i]) == encode_shard(b.shards[i]));
    spec.seed = 12;
    CHECK(encode_shard(generate(spec).shards[0]) != encode_shard(a.shards[0]));

    const auto d1 = testing::temp_dir("synth_a"), d2 = testing::temp_dir("synth_b");
    write_synth(a, d1);
    write_synth(b, d2);
    for (const char* f : {"manifest.json", "model_0.usae", "model_1.usae", "model_2.usae", "truth.usgt"})
        CHECK(io::read_binary_file(d1 / f) == io::read_binary_file(d2 / f));
    const auto truth = read_truth(d1 / "truth.usgt");
    CHECK(truth.mask == a.truth.mask);
    CHECK(truth.codes.to_dense() == a.truth.codes.to_dense());
    CHECK(truth.dictionaries[2] == a.truth.dictionaries[2]);
    const auto loaded = load_dataset(d1 / "manifest.json");
    CHECK(loaded.activations[1] == a.shards[1].values);
}

TEST_CASE("SynthSpec validation") {
    SynthSpec s;
    s.sparsity = 49;
    CHECK_THROWS_AS(generate(s), ParameterError);
    s = SynthSpec{};
    s.universal_fraction = 1.5;
    CHECK_THROWS_AS(generate(s), ParameterError);
    s = SynthSpec{};
    s.value_lo = 0.0;
    CHECK_THROWS_AS(generate(s), ParameterError);
}

TEST_CASE("oracle model reconstructs noise-free universal data") {
    SynthSpec spec = wide_spec();
    spec.noise_sigma = 0.0;
    spec.universal_fraction = 1.0;
    const auto s = generate(spec);
    const auto model = oracle_model(s.truth, spec.sparsity);
    const MatrixD r = r2_matrix(model, raw(s));
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) CHECK(r(i, j) > 1.0 - 1e-9);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto z = encode_standardized(model, i, s.shards[i].values);
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(recon_loss(s.shards[j].values, decode(z, model.dictionaries[j]), LossMode::l1) /
                      static_cast<double>(s.shards[j].values.size()) <
                  1e-5);
    }
}

TEST_CASE("achievable R2 decreases with noise") {
    double prev = 2.0;
    for (double sigma : {0.01, 0.05, 0.2}) {
        SynthSpec spec = wide_spec();
        spec.noise_sigma = sigma;
        spec.universal_fraction = 1.0;
        const auto s = generate(spec);
        const MatrixD r = r2_matrix(oracle_model(s.truth, spec.sparsity), raw(s));
        CHECK(r.mean() < prev);
        prev = r.mean();
    }
}

TEST_CASE("recovery score") {
    const auto s = generate(wide_spec());
    const auto perfect = recovery_score(s.truth.dictionaries, s.truth);
    for (const auto& m : perfect) {
        CHECK(m.hit_rate == 1.0);
        for (double c : m.cosines) CHECK(c == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (std::size_t i = 0; i < 3; ++i) {
        std::size_t present = 0;
        for (Eigen::Index c = 0; c < 6; ++c) present += s.truth.mask(c, static_cast<Eigen::Index>(i)) != 0;
        CHECK(perfect[i].truth_concepts.size() == present);
    }

    SynthSpec big;
    big.tokens = 10;
    const auto d = generate(big);
    SeededRng rng(5);
    std::vector<Matrix> random;
    for (auto dim : big.dims) random.push_back(testing::random_matrix(64, dim, rng));
    for (const auto& m : recovery_score(random, d.truth)) CHECK(m.hit_rate < 0.1);

    std::vector<Matrix> too_small{Matrix::Ones(3, 8), Matrix::Ones(3, 10), Matrix::Ones(3, 12)};
    CHECK_THROWS_AS(recovery_score(too_small, s.truth), ParameterError);
}

TEST_CASE("universality oracle on extreme masks") {
    SUBCASE("all universal concepts fire uniformly") {
        SynthSpec spec = wide_spec();
        spec.universal_fraction = 1.0;
        spec.noise_sigma = 0.0;
        const auto s = generate(spec);
        const auto model = oracle_model(s.truth, spec.sparsity);
        std::vector<CodeBatch<float>> codes;
        for (std::size_t i = 0; i < 3; ++i) codes.push_back(encode_standardized(model, i, s.shards[i].values));
        const auto rep = universality_oracle(s.truth, firing_stats(codes), recovery_score(model, s.truth));
        CHECK(rep.n_universal == 6);
        CHECK(rep.n_partial == 0);
        CHECK(rep.mean_fe_universal > 0.99);
    }
    SUBCASE("single-model concepts have zero entropy") {
        SynthSpec spec = wide_spec();
        spec.dims = {8, 10};
        spec.universal_fraction = 0.0;
        spec.noise_sigma = 0.0;
        const auto s = generate(spec);
        const auto model = oracle_model(s.truth, spec.sparsity);
        std::vector<CodeBatch<float>> codes;
        for (std::size_t i = 0; i < 2; ++i) codes.push_back(encode_standardized(model, i, s.shards[i].values));
        const auto rep = universality_oracle(s.truth, firing_stats(codes), recovery_score(model, s.truth));
        CHECK(rep.n_universal == 0);
        CHECK(rep.n_partial == 6);
        CHECK(rep.mean_fe_partial < 1e-12);
    }
    SUBCASE("empty mapping") {
        const auto s = generate(wide_spec());
        FiringStats stats;
        stats.fires.setZero(3, 6);
        stats.fe.setZero(6);
        stats.cofires.assign(6, 0);
        const auto rep = universality_oracle(s.truth, stats, {});
        CHECK(rep.n_universal == 0);
        CHECK(rep.n_partial == 0);
        CHECK(rep.skipped == 0);
    }
}

TEST_CASE("training improves self-reconstruction over the untrained model") {
    SynthSpec spec = wide_spec();
    spec.tokens = 2000;
    const auto s = generate(spec);
    const auto data = as_dataset(s);
    TrainConfig cfg;
    cfg.total_steps = 0;
    cfg.batch_size = 64;
    cfg.k = 2;
    cfg.m = 12;
    cfg.lr0 = 5e-3;
    cfg.lr_final = 1e-4;
    const auto untrained = train(data, cfg).model;
    cfg.total_steps = 1500;
    const auto trained = train(data, cfg).model;
    const MatrixD r0 = r2_matrix(untrained, standardized_rows(untrained, data));
    const MatrixD r1 = r2_matrix(trained, standardized_rows(trained, data));
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(r1(i, i) > r0(i, i));
}
