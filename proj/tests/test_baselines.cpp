// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The nlos-npr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <random>

#include "nlos/baselines.hpp"
#include "nlos/channel_sim.hpp"
#include "nlos/dataset_io.hpp"
#include "nlos/errors.hpp"

using namespace nlos;
using namespace nlos::baselines;

namespace {

Matrix random_inputs(Eigen::Index dim, Eigen::Index n, Rng &rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix x(dim, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < dim; ++i)
            x(i, j) = g(rng);
    return x;
}

Vector targets_for(const Matrix &x) {
    Vector y(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        y[j] = std::sin(x(0, j)) + 0.5 * x(1, j);
    return y;
}

// Dense-inverse GP posterior written from the textbook formulas.
GprPrediction dense_oracle(const Matrix &x, const Vector &y, const GprHyperparams &hp, const Vector &t) {
    const auto n = x.cols();
    Matrix k(n, n);
    Vector ks(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j)
            k(i, j) = hp.signal_variance * std::exp(-0.5 * (x.col(i) - x.col(j)).squaredNorm() /
                                                    (hp.length_scale * hp.length_scale));
        ks[i] = hp.signal_variance * std::exp(-0.5 * (x.col(i) - t).squaredNorm() / (hp.length_scale * hp.length_scale));
    }
    k.diagonal().array() += hp.noise_variance;
    const Matrix inv = k.inverse();
    return {ks.dot(inv * y), hp.signal_variance - ks.dot(inv * ks)};
}

sim::ScenarioConfig nlos_scenario(std::uint64_t seed) {
    sim::ScenarioConfig c;
    c.scenario_id = "unit";
    c.nlos_probability = 1.0;
    c.rng_seed = seed;
    return c;
}

double mean_abs_error(const MlpModel &m, const data::Dataset &ds) {
    double s = 0.0;
    for (const auto &x : ds.samples)
        s += std::abs(mlp_predict(m, x.pdp) - x.delta_d_m);
    return s / static_cast<double>(ds.size());
}

} // namespace

TEST_CASE("GPR on one point shrinks the target by k / (k + noise)") {
    const GprHyperparams hp{0.7, 2.0, 0.5};
    Matrix x(3, 1);
    x << 0.1, -0.4, 1.2;
    Vector y(1);
    y << 3.0;
    const auto m = gpr_fit(x, y, hp);
    const auto p = gpr_predict(m, Vector(x.col(0)));
    CHECK(p.mean == doctest::Approx(3.0 * 2.0 / (2.0 + 0.5)).epsilon(1e-12));
    CHECK(p.variance == doctest::Approx(2.0 - 4.0 / 2.5).epsilon(1e-12));
}

TEST_CASE("GPR posterior matches a dense-inverse oracle") {
    Rng rng(2);
    const GprHyperparams hp{1.3, 0.8, 0.05};
    const Matrix x = random_inputs(6, 50, rng);
    const Vector y = targets_for(x);
    const auto m = gpr_fit(x, y, hp);
    const Matrix tests = random_inputs(6, 20, rng);
    for (Eigen::Index j = 0; j < tests.cols(); ++j) {
        const Vector t = tests.col(j);
        const auto got = gpr_predict(m, t);
        const auto want = dense_oracle(x, y, hp, t);
        CHECK(std::abs(got.mean - want.mean) < 1e-8);
        CHECK(std::abs(got.variance - want.variance) < 1e-8);
        CHECK(got.variance >= 0.0);
    }
    // Training inputs too: the posterior mean sits between the prior mean and the target.
    for (Eigen::Index j = 0; j < 10; ++j) {
        const auto p = gpr_predict(m, Vector(x.col(j)));
        CHECK(p.variance >= 0.0);
        CHECK(std::abs(p.mean - dense_oracle(x, y, hp, x.col(j)).mean) < 1e-8);
    }
}

TEST_CASE("GPR edge cases: duplicates, far field and the interpolation limit") {
    Rng rng(3);
    Matrix x = random_inputs(4, 20, rng);
    x.col(5) = x.col(4);
    x.col(6) = x.col(4);
    const Vector y = targets_for(x);
    CHECK_NOTHROW(gpr_fit(x, y, GprHyperparams{1.0, 1.0, 1e-6}));

    const GprHyperparams hp{0.5, 1.7, 0.01};
    const auto m = gpr_fit(random_inputs(4, 30, rng), targets_for(random_inputs(4, 30, rng)), hp);
    const Vector far = Vector::Constant(4, 100.0 * hp.length_scale);
    const auto p = gpr_predict(m, far);
    CHECK(std::abs(p.mean) < 1e-6);
    CHECK(std::abs(p.variance - hp.signal_variance) < 1e-6);

    const Matrix xs = random_inputs(4, 8, rng) * 3.0;
    const Vector ys = targets_for(xs);
    const auto exact = gpr_fit(xs, ys, GprHyperparams{1.0, 1.0, 1e-12});
    for (Eigen::Index j = 0; j < xs.cols(); ++j)
        CHECK(std::abs(gpr_predict(exact, Vector(xs.col(j))).mean - ys[j]) < 1e-6);

    CHECK_THROWS_AS(gpr_fit(Matrix(4, 0), Vector(0), hp), InvalidInputError);
    CHECK_THROWS_AS(gpr_fit(xs, Vector(3), hp), ShapeError);
    CHECK_THROWS_AS(gpr_fit(xs, ys, GprHyperparams{-1.0, 1.0, 0.1}), InvalidInputError);
    CHECK_THROWS_AS(gpr_predict(GprModel{}, Vector::Zero(4)), StateError);
}

TEST_CASE("GPR variance is nonnegative over random probes") {
    Rng rng(4);
    const auto m = gpr_fit(random_inputs(6, 120, rng), targets_for(random_inputs(6, 120, rng)),
                           GprHyperparams{0.3, 5.0, 1e-3});
    const Matrix probes = random_inputs(6, 500, rng) * 2.0;
    for (Eigen::Index j = 0; j < probes.cols(); ++j)
        CHECK(gpr_predict(m, Vector(probes.col(j))).variance >= 0.0);
}

TEST_CASE("GPR fit cost grows at least fourfold when n doubles") {
    Rng rng(5);
    const GprHyperparams hp{1.0, 1.0, 0.05};
    auto fit_ms = [&](Eigen::Index n) {
        const Matrix x = random_inputs(6, n, rng);
        const Vector y = targets_for(x);
        std::vector<double> t;
        for (int rep = 0; rep < 3; ++rep) {
            const auto start = std::chrono::steady_clock::now();
            const auto m = gpr_fit(x, y, hp);
            volatile double sink = gpr_predict(m, Vector(x.col(0))).mean;
            (void)sink;
            t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
        }
        std::sort(t.begin(), t.end());
        return t[1];
    };
    const double ratio = fit_ms(1600) / fit_ms(800);
    MESSAGE("n -> 2n fit time ratio " << ratio);
    CHECK(ratio >= 4.0);
}

TEST_CASE("GPR dataset fit selects from the grid and round-trips") {
    const auto ds = data::make_dataset(sim::generate_scenario(nlos_scenario(6), 400));
    auto [train, val] = data::split(ds, 0.75, 1);
    GprSearchOptions opts;
    opts.max_train_points = 200;
    const auto m = gpr_fit_dataset(train, val, opts);
    CHECK(m.fitted);
    CHECK(m.inputs.cols() == 200);
    CHECK(std::find(opts.length_scales.begin(), opts.length_scales.end(), m.hyper.length_scale) !=
          opts.length_scales.end());

    const auto back = gpr_from_json(to_json(m));
    for (const auto &s : val.samples) {
        const auto a = gpr_predict(m, s.pdp);
        const auto b = gpr_predict(back, s.pdp);
        CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
        CHECK(a.variance == doctest::Approx(b.variance).epsilon(1e-9));
    }
    CHECK_THROWS_AS(gpr_fit_dataset(data::Dataset{}, val, opts), InvalidInputError);
}

TEST_CASE("MLP fits a constant target and stays frozen") {
    auto samples = sim::generate_scenario(nlos_scenario(7), 300);
    for (auto &s : samples)
        s.delta_d_m = 0.8;
    const auto ds = data::make_dataset(samples);
    MlpOptions opts;
    opts.epochs = 400;
    opts.batch_size = 16;
    opts.lr_final_ratio = 0.01;
    const auto m = mlp_fit(ds, opts);
    const auto params = m.net.params();
    double worst = 0.0;
    for (const auto &s : ds.samples) {
        const double a = mlp_predict(m, s.pdp);
        CHECK(a == mlp_predict(m, s.pdp));
        worst = std::max(worst, std::abs(a - 0.8));
    }
    MESSAGE("worst constant-fit error " << worst);
    CHECK(worst < 1e-3);
    CHECK(m.net.params().size() == params.size());
    CHECK(std::memcmp(m.net.params().data(), params.data(), sizeof(double) * params.size()) == 0);

    const auto back = mlp_from_json(to_json(m));
    CHECK(back.net == m.net);
    CHECK(back.input_norm == m.input_norm);
    CHECK(mlp_predict(back, ds.samples.front().pdp) == mlp_predict(m, ds.samples.front().pdp));

    CHECK_THROWS_AS(mlp_predict(MlpModel{}, ds.samples.front().pdp), StateError);
    CHECK_THROWS_AS(mlp_retrain(MlpModel{}, ds, opts), StateError);
    CHECK_THROWS_AS(mlp_fit(data::Dataset{}, opts), InvalidInputError);
}

TEST_CASE("frozen MLP degrades on a scenario with a shifted bias law") {
    const auto home = data::make_dataset(sim::generate_scenario(nlos_scenario(8), 1500));
    auto [train, test] = data::split(home, 0.8, 2);
    auto shifted_cfg = nlos_scenario(9);
    shifted_cfg.alpha = 0.6;
    shifted_cfg.beta = 0.5;
    const auto shifted = data::make_dataset(sim::generate_scenario(shifted_cfg, 300));

    const auto m = mlp_fit(train, MlpOptions{});
    const double in_scenario = mean_abs_error(m, test);
    const double cross = mean_abs_error(m, shifted);
    MESSAGE("in-scenario " << in_scenario << " m, shifted " << cross << " m");
    CHECK(cross > in_scenario);

    // Retraining on the new scenario closes part of the gap.
    auto [adapt, held] = data::split(shifted, 0.5, 3);
    const auto retrained = mlp_retrain(m, adapt, MlpOptions{});
    CHECK(mean_abs_error(retrained, held) < mean_abs_error(m, held));
}
