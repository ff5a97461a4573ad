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

#include "nlos/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "nlos/errors.hpp"
#include "nlos/random.hpp"

namespace nlos::baselines {

double se_kernel(const Vector &a, const Vector &b, const GprHyperparams &hp) {
    const double r2 = (a - b).squaredNorm();
    return hp.signal_variance * std::exp(-0.5 * r2 / (hp.length_scale * hp.length_scale));
}

GprModel gpr_fit(const Matrix &inputs, const Vector &targets, const GprHyperparams &hp) {
    if (inputs.cols() == 0)
        throw InvalidInputError("GPR needs at least one training sample");
    if (inputs.cols() != targets.size())
        throw ShapeError("GPR inputs and targets differ in count");
    if (!(hp.length_scale > 0.0 && hp.signal_variance > 0.0 && hp.noise_variance > 0.0))
        throw InvalidInputError("GPR hyperparameters must be positive");
    // Squared distances from the Gram matrix: |a|^2 + |b|^2 - 2 a.b, clamped against rounding.
    const Vector sq = inputs.colwise().squaredNorm().transpose();
    Matrix k = -2.0 * (inputs.transpose() * inputs);
    k.colwise() += sq;
    k.rowwise() += sq.transpose();
    const double scale = -0.5 / (hp.length_scale * hp.length_scale);
    k = hp.signal_variance * (scale * k.cwiseMax(0.0)).array().exp();
    k.diagonal().array() = hp.signal_variance + hp.noise_variance;
    GprModel m;
    m.hyper = hp;
    m.inputs = inputs;
    m.targets = targets;
    m.factor.compute(k);
    if (m.factor.info() != Eigen::Success)
        throw ConditioningError("Cholesky factorization of the GP kernel failed; increase noise_variance (jitter)");
    m.weights = m.factor.solve(targets);
    if (!m.weights.allFinite())
        throw ConditioningError("GP solve produced non-finite weights; increase noise_variance (jitter)");
    m.feature_norm.mean.assign(static_cast<std::size_t>(inputs.rows()), 0.0);
    m.feature_norm.std.assign(static_cast<std::size_t>(inputs.rows()), 1.0);
    m.fitted = true;
    return m;
}

GprPrediction gpr_predict(const GprModel &model, const Vector &x) {
    if (!model.fitted)
        throw StateError("GPR model is not fitted");
    if (x.size() != model.inputs.rows())
        throw ShapeError("GPR expects inputs of length " + std::to_string(model.inputs.rows()));
    const auto n = model.inputs.cols();
    Vector kx(n);
    for (Eigen::Index i = 0; i < n; ++i)
        kx[i] = se_kernel(model.inputs.col(i), x, model.hyper);
    GprPrediction p;
    p.mean = kx.dot(model.weights);
    const Vector v = model.factor.matrixL().solve(kx);
    p.variance = std::max(0.0, model.hyper.signal_variance - v.squaredNorm());
    return p;
}

Vector gpr_features(const GprModel &model, const sim::PowerDelayProfile &pdp) {
    const auto f = sim::pdp_features(pdp);
    const auto norm = model.feature_norm.apply(f);
    return Eigen::Map<const Vector>(norm.data(), static_cast<Eigen::Index>(norm.size()));
}

GprPrediction gpr_predict(const GprModel &model, const sim::PowerDelayProfile &pdp) {
    return gpr_predict(model, gpr_features(model, pdp));
}

namespace {

std::vector<const sim::RangingSample *> nlos_samples(const data::Dataset &ds) {
    std::vector<const sim::RangingSample *> out;
    for (const auto &s : ds.samples)
        if (s.condition == sim::Condition::Nlos)
            out.push_back(&s);
    return out;
}

std::vector<double> feature_row(const sim::PowerDelayProfile &pdp) {
    const auto f = sim::pdp_features(pdp);
    return {f.begin(), f.end()};
}

} // namespace

GprModel gpr_fit_dataset(const data::Dataset &train, const data::Dataset &val, const GprSearchOptions &options) {
    auto pool = nlos_samples(train);
    if (pool.empty())
        throw InvalidInputError("GPR training split holds no NLOS samples");
    Rng rng(derive_seed(options.seed, "gpr-subsample"));
    std::shuffle(pool.begin(), pool.end(), rng);
    if (pool.size() > options.max_train_points)
        pool.resize(options.max_train_points);

    std::vector<std::vector<double>> rows;
    for (const auto *s : pool)
        rows.push_back(feature_row(s->pdp));
    const auto norm = data::fit_normalization(rows);
    Matrix x(static_cast<Eigen::Index>(sim::kFeatureCount), static_cast<Eigen::Index>(pool.size()));
    Vector y(static_cast<Eigen::Index>(pool.size()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto r = norm.apply(rows[i]);
        x.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
        y[static_cast<Eigen::Index>(i)] = pool[i]->delta_d_m;
    }

    auto val_pool = nlos_samples(val);
    if (val_pool.empty())
        throw InvalidInputError("GPR validation split holds no NLOS samples");
    if (val_pool.size() > options.max_train_points)
        val_pool.resize(options.max_train_points);
    std::vector<Vector> val_x;
    for (const auto *s : val_pool) {
        const auto r = norm.apply(feature_row(s->pdp));
        val_x.emplace_back(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())));
    }

    GprModel best;
    double best_nll = std::numeric_limits<double>::infinity();
    for (double ls : options.length_scales)
        for (double sv : options.signal_variances)
            for (double nv : options.noise_variances) {
                GprModel m;
                try {
                    m = gpr_fit(x, y, {ls, sv, nv});
                } catch (const ConditioningError &) {
                    continue;
                }
                double nll = 0.0;
                for (std::size_t i = 0; i < val_pool.size(); ++i) {
                    const auto p = gpr_predict(m, val_x[i]);
                    const double var = p.variance + nv;
                    const double r = val_pool[i]->delta_d_m - p.mean;
                    nll += 0.5 * std::log(2.0 * std::numbers::pi * var) + r * r / (2.0 * var);
                }
                if (nll < best_nll) {
                    best_nll = nll;
                    best = std::move(m);
                }
            }
    if (!best.fitted)
        throw ConditioningError("no GPR hyperparameter setting could be factorized; increase noise_variance");
    best.feature_norm = norm;
    return best;
}

namespace {

struct MlpTable {
    Matrix inputs;
    Vector targets;
};

MlpTable mlp_table(const data::Dataset &ds, const data::Normalization &norm, std::size_t max_paths) {
    const auto pool = nlos_samples(ds);
    MlpTable t;
    t.inputs.resize(static_cast<Eigen::Index>(2 * max_paths), static_cast<Eigen::Index>(pool.size()));
    t.targets.resize(static_cast<Eigen::Index>(pool.size()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto r = norm.apply(data::encode_relative(pool[i]->pdp, max_paths));
        t.inputs.col(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
        t.targets[static_cast<Eigen::Index>(i)] = pool[i]->delta_d_m;
    }
    return t;
}

void train_mlp(MlpModel &m, const MlpTable &t, const MlpOptions &options, Rng &rng) {
    auto opt = nn::OptimizerState::for_params(m.net.num_params(), nn::AdamConfig{options.learning_rate});
    std::vector<Eigen::Index> order(static_cast<std::size_t>(t.targets.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const double progress = static_cast<double>(epoch) / static_cast<double>(options.epochs);
        opt.config.learning_rate = options.learning_rate * std::pow(options.lr_final_ratio, progress);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const auto stop = std::min(order.size(), start + options.batch_size);
            Matrix x(t.inputs.rows(), static_cast<Eigen::Index>(stop - start));
            Matrix y(1, x.cols());
            for (std::size_t j = start; j < stop; ++j) {
                x.col(static_cast<Eigen::Index>(j - start)) = t.inputs.col(order[j]);
                y(0, static_cast<Eigen::Index>(j - start)) = t.targets[order[j]];
            }
            auto cache = m.net.forward_cached(x);
            const Matrix upstream = 2.0 * (cache.output - y) / static_cast<double>(x.cols());
            auto g = m.net.backward(cache, upstream);
            if (!g.params.allFinite())
                throw DomainError("non-finite gradient while training the MLP baseline");
            nn::optimizer_step(opt, m.net.params(), g.params);
        }
    }
}

} // namespace

MlpModel mlp_fit(const data::Dataset &train, const MlpOptions &options) {
    const auto pool = nlos_samples(train);
    if (pool.empty())
        throw InvalidInputError("MLP training split holds no NLOS samples");
    if (options.epochs == 0 || options.batch_size == 0)
        throw InvalidInputError("epochs and batch_size must be positive");
    if (!(options.lr_final_ratio > 0.0 && options.lr_final_ratio <= 1.0))
        throw InvalidInputError("lr_final_ratio must lie in (0, 1]");
    std::vector<std::vector<double>> rows;
    for (const auto *s : pool)
        rows.push_back(data::encode_relative(s->pdp, options.max_paths));
    MlpModel m;
    m.max_paths = options.max_paths;
    m.input_norm = data::fit_normalization(rows);
    Rng rng(derive_seed(options.seed, "mlp"));
    m.net = nn::FeedForwardNet::make(2 * options.max_paths, options.hidden, 1, nn::Activation::Relu,
                                     nn::Activation::Identity, rng);
    train_mlp(m, mlp_table(train, m.input_norm, m.max_paths), options, rng);
    m.fitted = true;
    return m;
}

MlpModel mlp_retrain(const MlpModel &base, const data::Dataset &train, const MlpOptions &options) {
    if (!base.fitted)
        throw StateError("cannot retrain an unfitted MLP");
    if (nlos_samples(train).empty())
        throw InvalidInputError("MLP retraining split holds no NLOS samples");
    MlpModel m = base;
    Rng rng(derive_seed(options.seed, "mlp-retrain"));
    train_mlp(m, mlp_table(train, m.input_norm, m.max_paths), options, rng);
    return m;
}

double mlp_predict(const MlpModel &model, const sim::PowerDelayProfile &pdp) {
    if (!model.fitted)
        throw StateError("MLP baseline used before fit");
    const auto r = model.input_norm.apply(data::encode_relative(pdp, model.max_paths));
    return model.net.forward(Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size())))[0];
}

nlohmann::json to_json(const GprModel &m) {
    std::vector<double> x(m.inputs.data(), m.inputs.data() + m.inputs.size()); // column-major: one sample per run
    return {{"format", "nlos-gpr"},
            {"version", 1},
            {"length_scale", m.hyper.length_scale},
            {"signal_variance", m.hyper.signal_variance},
            {"noise_variance", m.hyper.noise_variance},
            {"input_dim", m.inputs.rows()},
            {"inputs", x},
            {"targets", std::vector<double>(m.targets.data(), m.targets.data() + m.targets.size())},
            {"feature_norm", {{"mean", m.feature_norm.mean}, {"std", m.feature_norm.std}}}};
}

GprModel gpr_from_json(const nlohmann::json &j) {
    try {
        if (j.at("version").get<int>() != 1)
            throw VersionError("unsupported GPR checkpoint version");
        const auto dim = j.at("input_dim").get<Eigen::Index>();
        const auto x = j.at("inputs").get<std::vector<double>>();
        const auto y = j.at("targets").get<std::vector<double>>();
        if (dim <= 0 || x.size() != static_cast<std::size_t>(dim) * y.size())
            throw ShapeError("GPR checkpoint inputs do not match targets");
        Matrix inputs = Eigen::Map<const Matrix>(x.data(), dim, static_cast<Eigen::Index>(y.size()));
        Vector targets = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
        auto m = gpr_fit(inputs, targets,
                         {j.at("length_scale").get<double>(), j.at("signal_variance").get<double>(),
                          j.at("noise_variance").get<double>()});
        m.feature_norm.mean = j.at("feature_norm").at("mean").get<std::vector<double>>();
        m.feature_norm.std = j.at("feature_norm").at("std").get<std::vector<double>>();
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(0, std::string("GPR checkpoint: ") + e.what());
    }
}

nlohmann::json to_json(const MlpModel &m) {
    return {{"format", "nlos-mlp"},
            {"version", 1},
            {"max_paths", m.max_paths},
            {"net", nn::to_json(m.net)},
            {"normalization", {{"mean", m.input_norm.mean}, {"std", m.input_norm.std}}}};
}

MlpModel mlp_from_json(const nlohmann::json &j) {
    try {
        if (j.at("version").get<int>() != 1)
            throw VersionError("unsupported MLP checkpoint version");
        MlpModel m;
        m.max_paths = j.at("max_paths").get<std::size_t>();
        m.net = nn::net_from_json(j.at("net"));
        m.input_norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
        m.input_norm.std = j.at("normalization").at("std").get<std::vector<double>>();
        m.fitted = true;
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(0, std::string("MLP checkpoint: ") + e.what());
    }
}

} // namespace nlos::baselines
