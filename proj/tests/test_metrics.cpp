#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "usae/metrics.hpp"
#include "usae/trainer.hpp"

using namespace usae;
using usae::testing::codes_from_dense;
using usae::testing::random_matrix;

namespace {

Matrix fixture(std::initializer_list<float> v) {
    Matrix m(5, 4);
    auto it = v.begin();
    for (Eigen::Index r = 0; r < 5; ++r)
        for (Eigen::Index c = 0; c < 4; ++c) m(r, c) = *it++;
    return m;
}

void check_against_enumeration(const std::vector<Matrix>& dense, double tau) {
    std::vector<CodeBatch<float>> codes;
    for (const auto& d : dense) codes.push_back(codes_from_dense(d));
    const auto s = firing_stats(codes, tau);
    const auto e = testing::enumerate_firing(dense, tau);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(s.cofires[k] == e.cofires[k]);
        CHECK(s.fe[static_cast<Eigen::Index>(k)] == e.fe[k]);
        for (std::size_t i = 0; i < dense.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i), kk = static_cast<Eigen::Index>(k);
            CHECK(s.fires(ii, kk) == e.fires[i][k]);
            CHECK(s.p(ii, kk) == e.p[i][k]);
            CHECK(s.cfp(ii, kk) == e.cfp[i][k]);
        }
    }
}

UsaeModel hand_model(std::vector<EncoderParams<float>> enc, std::vector<Dictionary<float>> dicts) {
    UsaeModel m;
    for (std::size_t i = 0; i < enc.size(); ++i) {
        m.model_ids.push_back("m" + std::to_string(i));
        m.standardizers.push_back(Standardizer::identity(enc[i].dim()));
    }
    m.encoders = std::move(enc);
    m.dictionaries = std::move(dicts);
    m.encoder_adam.resize(m.encoders.size());
    m.dictionary_adam.resize(m.encoders.size());
    m.updates.assign(m.encoders.size(), 0);
    m.validate();
    return m;
}

}  // namespace

TEST_CASE("r2 closed forms") {
    SeededRng rng(41);
    const Matrix a = random_matrix(20, 5, rng);
    CHECK(r2(a, a) == 1.0);
    Matrix means = a;
    for (Eigen::Index c = 0; c < 5; ++c) means.col(c).setConstant(a.col(c).mean());
    CHECK(std::abs(r2(a, means)) < 1e-6);
    MatrixD ad = a.cast<double>(), md = ad;
    for (Eigen::Index c = 0; c < 5; ++c) md.col(c).setConstant(ad.col(c).mean());
    CHECK(r2(ad, md) == 0.0);

    const Matrix b = random_matrix(20, 5, rng);
    double res = 0, tot = 0;
    for (Eigen::Index c = 0; c < 5; ++c) {
        double mu = 0;
        for (Eigen::Index r = 0; r < 20; ++r) mu += a(r, c);
        mu /= 20;
        for (Eigen::Index r = 0; r < 20; ++r) {
            res += (double(a(r, c)) - b(r, c)) * (double(a(r, c)) - b(r, c));
            tot += (a(r, c) - mu) * (a(r, c) - mu);
        }
    }
    CHECK(std::abs(r2(a, b) - (1 - res / tot)) < 1e-10);

    Matrix a2(40, 5), b2(40, 5);
    a2 << a, a;
    b2 << b, b;
    CHECK(std::abs(r2(a2, b2) - r2(a, b)) < 1e-12);

    CHECK_THROWS_AS(r2(Matrix(Matrix::Ones(3, 2)), Matrix(Matrix::Ones(3, 2))), DegenerateInputError);
}

TEST_CASE("r2 matrix of a perfect identity autoencoder") {
    auto enc = EncoderParams<float>::linear(Matrix::Identity(3, 3), 3);
    const auto model = hand_model({enc}, {{Matrix::Identity(3, 3), true}});
    SeededRng rng(42);
    const std::vector<Matrix> data{random_matrix(30, 3, rng).cwiseAbs()};
    const MatrixD r = r2_matrix(model, data);
    REQUIRE(r.rows() == 1);
    CHECK(r(0, 0) == 1.0);
}

TEST_CASE("firing stats equal exhaustive enumeration on hand fixtures") {
    const Matrix z0 = fixture({1, 0, 0, 2,  //
                               0, 3, 0, 0,  //
                               1, 1, 0, 0,  //
                               0, 0, 0, 5,  //
                               2, 0, 0, 1});
    const Matrix z1 = fixture({1, 0, 0, 0,  //
                               0, 2, 0, 0,  //
                               0, 1, 0, 1,  //
                               0, 0, 0, 4,  //
                               3, 0, 1, 2});
    const Matrix z2 = fixture({0, 0, 0, 0,  //
                               0, 1, 0, 0,  //
                               1, 1, 0, 3,  //
                               0, 0, 2, 1,  //
                               1, 0, 0, 1});
    check_against_enumeration({z0, z1}, 0.0);
    check_against_enumeration({z0, z1, z2}, 0.0);
    check_against_enumeration({z0, z1, z2}, 1.0);

    std::vector<CodeBatch<float>> c2{codes_from_dense(z0), codes_from_dense(z1)};
    const auto s = firing_stats(c2, 0.0);
    // concept 1: fires rows {1,2} in model 0 and {1,2} in model 1, co-fires on both.
    CHECK(s.cofires[1] == 2);
    CHECK(s.fe[1] == doctest::Approx(1.0).epsilon(1e-15));
    // concept 2 fires only in model 1 -> FE 0, CFP 0.
    CHECK(s.fe[2] == 0.0);
    CHECK(s.cfp(1, 2) == 0.0);
    CHECK(s.cfp(0, 2) == 0.0);

    CHECK_THROWS_AS(firing_stats(std::span<const CodeBatch<float>>(c2.data(), 1), 0.0), ParameterError);
    CHECK_THROWS_AS(firing_stats(c2, -1.0), ParameterError);
}

TEST_CASE("firing entropy edge values") {
    const auto run = [](const std::vector<int>& per_model) {
        std::vector<CodeBatch<float>> codes;
        for (int count : per_model) {
            Matrix z = Matrix::Zero(30, 1);
            for (int r = 0; r < count; ++r) z(r, 0) = 1.0f;
            codes.push_back(codes_from_dense(z));
        }
        return firing_stats(codes, 0.0);
    };
    CHECK(std::abs(run({10, 10, 10}).fe[0] - 1.0) < 1e-12);
    CHECK(std::abs(run({10, 0, 0}).fe[0] - 0.0) < 1e-12);
    CHECK(std::abs(run({10, 10, 0}).fe[0] - std::log(2.0) / std::log(3.0)) < 1e-12);
    CHECK(run({0, 0, 0}).fe[0] == 0.0);

    // |F| = 10 in model 0, co-fires on 4 of them.
    std::vector<CodeBatch<float>> codes;
    Matrix z0 = Matrix::Zero(20, 1), z1 = Matrix::Zero(20, 1);
    for (int r = 0; r < 10; ++r) z0(r, 0) = 1.0f;
    for (int r = 6; r < 14; ++r) z1(r, 0) = 1.0f;
    codes = {codes_from_dense(z0), codes_from_dense(z1)};
    const auto s = firing_stats(codes, 0.0);
    CHECK(s.cofires[0] == 4);
    CHECK(s.cfp(0, 0) == 0.4);
    CHECK(s.cfp(1, 0) == 0.5);
}

TEST_CASE("firing stats properties on random codes") {
    SeededRng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t M = 2 + rng.uniform_int(3);
        std::vector<CodeBatch<float>> codes;
        for (std::size_t i = 0; i < M; ++i) {
            Matrix z = Matrix::Zero(40, 6);
            for (Eigen::Index r = 0; r < 40; ++r)
                for (int t = 0; t < 2; ++t)
                    z(r, static_cast<Eigen::Index>(rng.uniform_int(6 - trial % 3))) = static_cast<float>(rng.uniform(0.1, 1));
            codes.push_back(codes_from_dense(z));
        }
        const auto s = firing_stats(codes, 0.0);
        for (Eigen::Index k = 0; k < 6; ++k) {
            CHECK(s.fe[k] >= 0.0);
            CHECK(s.fe[k] <= 1.0 + 1e-12);
            std::uint64_t lo = UINT64_MAX;
            for (std::size_t i = 0; i < M; ++i) lo = std::min(lo, s.fires(static_cast<Eigen::Index>(i), k));
            CHECK(s.cofires[static_cast<std::size_t>(k)] <= lo);
        }
    }
}

TEST_CASE("concept energy") {
    Matrix z = Matrix::Zero(4, 3);
    z.col(1).setConstant(2.0f);
    Dictionary<float> d{Matrix::Zero(3, 5), true};
    d.atoms(1, 2) = 1.0f;
    d.atoms(0, 0) = 1.0f;
    d.atoms(2, 4) = 1.0f;
    const VectorD e = concept_energy(codes_from_dense(z), d);
    CHECK(e[0] == 0.0);
    CHECK(e[1] == 4.0);

    SeededRng rng(44);
    Matrix zr = Matrix::Zero(25, 6);
    for (Eigen::Index r = 0; r < 25; ++r) zr(r, static_cast<Eigen::Index>(rng.uniform_int(6))) = static_cast<float>(rng.uniform(0.1, 2));
    Dictionary<float> dr{random_matrix(6, 4, rng), false};
    const VectorD er = concept_energy(codes_from_dense(zr), dr);
    for (Eigen::Index k = 0; k < 6; ++k) {
        double mean = 0;
        for (Eigen::Index r = 0; r < 25; ++r) mean += zr(r, k);
        mean /= 25;
        double sq = 0;
        for (Eigen::Index c = 0; c < 4; ++c) {
            const double v = mean * dr.atoms(k, c);
            sq += v * v;
        }
        CHECK(std::abs(er[k] - sq) < 1e-6);
    }
}

TEST_CASE("energy against co-fire correlation") {
    FiringStats s;
    s.cofires = {0, 10, 2000, 3000, 5000};
    s.fires.setZero(2, 5);
    VectorD prop(5), anti(5);
    for (int k = 0; k < 5; ++k) {
        prop[k] = 0.5 * static_cast<double>(s.cofires[static_cast<std::size_t>(k)]);
        anti[k] = 10000.0 - static_cast<double>(s.cofires[static_cast<std::size_t>(k)]);
    }
    auto r = energy_universality(s, prop, 1000);
    CHECK(r.all.r == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(r.filtered.has_value());
    CHECK(r.filtered->r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.all.slope == doctest::Approx(0.5));
    CHECK(r.n_filtered == 3);
    r = energy_universality(s, anti, 1000);
    CHECK(r.all.r == doctest::Approx(-1.0).epsilon(1e-12));
    r = energy_universality(s, prop, 4000);
    CHECK(!r.filtered.has_value());
}
