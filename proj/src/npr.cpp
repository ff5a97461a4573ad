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

#include "nlos/npr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "nlos/errors.hpp"
#include "nlos/random.hpp"

namespace nlos::npr {

namespace {

constexpr int kModelVersion = 1;
constexpr double kKlVarianceFloor = 1e-8;
constexpr double kReparamJitter = 1e-12;
constexpr double kOneSigmaCoverage = 0.6826894921370859; // P(|X| <= 1) for X ~ N(0, 1)

bool bit_equal(const Vector &a, const Vector &b) {
    return a.size() == b.size() &&
           (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
}

const LatentStats &effective_stats(const NprModel &model, const LatentStats &stats, LatentStats &prior) {
    if (stats.initialized()) {
        if (stats.dim() != model.latent_dim())
            throw ShapeError("latent statistics have dimension " + std::to_string(stats.dim()) + ", model expects " +
                             std::to_string(model.latent_dim()));
        return stats;
    }
    if (!model.config.allow_prior_fallback)
        throw StateError("latent statistics are uninitialized and the prior fallback is disabled");
    prior = LatentStats::uninitialized(model.latent_dim(), stats.forgetting);
    prior.var.setOnes();
    return prior;
}

double positive_variance(double pre, double floor) { return nn::softplus(pre) + floor; }

// Row-stacks [r || a || b] for every column of r.
Matrix decoder_input(const Matrix &r, const Vector &a, const Vector &b) {
    Matrix in(r.rows() + a.size() + b.size(), r.cols());
    in.topRows(r.rows()) = r;
    in.middleRows(r.rows(), a.size()) = a.replicate(1, r.cols());
    in.bottomRows(b.size()) = b.replicate(1, r.cols());
    return in;
}

struct TrainingTable {
    Matrix inputs;                                  // model_input columns
    Vector targets;                                 // delta_d
    std::vector<std::vector<std::size_t>> groups;   // column indices per scenario
};

TrainingTable build_table(const NprModel &model, const data::Dataset &ds) {
    TrainingTable t;
    std::vector<std::size_t> nlos;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.samples[i].condition == sim::Condition::Nlos)
            nlos.push_back(i);
    const auto n = static_cast<Eigen::Index>(nlos.size());
    t.inputs.resize(static_cast<Eigen::Index>(model.input_dim()), n);
    t.targets.resize(n);
    std::map<std::string, std::size_t> group_of;
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto &s = ds.samples[nlos[static_cast<std::size_t>(c)]];
        t.inputs.col(c) = model_input(model, s.pdp);
        t.targets[c] = s.delta_d_m;
        auto [it, inserted] = group_of.try_emplace(s.scenario_id, t.groups.size());
        if (inserted)
            t.groups.emplace_back();
        t.groups[it->second].push_back(static_cast<std::size_t>(c));
    }
    return t;
}

Matrix gather(const Matrix &m, std::span<const std::size_t> cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

Vector gather(const Vector &v, std::span<const std::size_t> idx) {
    Vector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j)
        out[static_cast<Eigen::Index>(j)] = v[static_cast<Eigen::Index>(idx[j])];
    return out;
}

Matrix encoder_input(const Matrix &r, const Vector &delta_d) {
    Matrix in(r.rows() + 1, r.cols());
    in.topRows(r.rows()) = r;
    in.bottomRows(1) = delta_d.transpose();
    return in;
}

struct BatchSplit {
    std::vector<std::size_t> context;
    std::vector<std::size_t> target;
};

BatchSplit split_batch(std::vector<std::size_t> batch, double context_fraction) {
    BatchSplit s;
    if (batch.size() == 1) {
        s.context = batch;
        s.target = batch;
        return s;
    }
    auto n_context = static_cast<std::size_t>(std::lround(static_cast<double>(batch.size()) * context_fraction));
    n_context = std::clamp<std::size_t>(n_context, 1, batch.size() - 1);
    s.context.assign(batch.begin(), batch.begin() + static_cast<std::ptrdiff_t>(n_context));
    s.target.assign(batch.begin() + static_cast<std::ptrdiff_t>(n_context), batch.end());
    return s;
}

// One optimization (or evaluation) pass of the end-to-end objective on a context/target split.
struct ObjectiveResult {
    double l2 = 0.0;
    double kl = 0.0;
    double variance_nll = 0.0;
    std::vector<double> variance_ratios; // resid^2 / predicted variance per target
    Vector encoder_grad;
    Vector decoder_grad;
};

ObjectiveResult np_objective(const NprModel &model, const Matrix &context_in, const Matrix &target_r,
                             const Vector &target_y, const Vector *eps, bool with_grad) {
    const auto latent = static_cast<Eigen::Index>(model.latent_dim());
    const double floor = model.config.variance_floor;
    const double lambda = model.config.kl_weight;

    auto enc_cache = model.encoder.forward_cached(context_in);
    const Matrix &z_ctx = enc_cache.output;
    const auto n_ctx = static_cast<double>(z_ctx.cols());
    const Vector mu = z_ctx.rowwise().mean();
    const Matrix centered = z_ctx.colwise() - mu;
    const Vector var = centered.array().square().rowwise().sum() / n_ctx;
    const Vector sigma = (var.array() + kReparamJitter).sqrt();
    const double noise_scale = model.config.reparam_standard_error ? 1.0 / std::sqrt(n_ctx) : 1.0;
    const Vector z = eps ? Vector(mu + noise_scale * sigma.cwiseProduct(*eps)) : mu;

    auto dec_cache = model.decoder.forward_cached(decoder_input(target_r, z, Vector::Zero(latent)));
    const Matrix &out = dec_cache.output;
    const auto n_tgt = static_cast<double>(out.cols());

    const Vector var_kl = var.cwiseMax(kKlVarianceFloor);
    const Vector ones = Vector::Ones(latent);
    ObjectiveResult r;
    r.kl = nn::kl_diag_gaussians(mu, var_kl, Vector::Zero(latent), ones);
    Matrix upstream(2, out.cols());
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double resid = out(0, j) - target_y[j];
        const double v = positive_variance(out(1, j), floor);
        r.l2 += resid * resid;
        r.variance_nll += 0.5 * std::log(2.0 * std::numbers::pi * v) + resid * resid / (2.0 * v);
        r.variance_ratios.push_back(resid * resid / v);
        upstream(0, j) = 2.0 * resid / n_tgt;
        upstream(1, j) = (0.5 / v - resid * resid / (2.0 * v * v)) / n_tgt * nn::sigmoid(out(1, j));
    }
    r.l2 /= n_tgt;
    r.variance_nll /= n_tgt;
    if (!with_grad)
        return r;

    // The variance NLL only reaches the variance row of the output layer, so it cannot pull
    // the shared hidden features away from the mean fit.
    const Eigen::RowVectorXd var_upstream = upstream.row(1);
    upstream.row(1).setZero();
    auto dec_grad = model.decoder.backward(dec_cache, upstream);
    {
        const auto last = model.decoder.layers().size() - 1;
        const auto w_off = model.decoder.weights(last).data() - model.decoder.params().data();
        const auto b_off = model.decoder.bias(last).data() - model.decoder.params().data();
        const auto width = static_cast<Eigen::Index>(model.decoder.layers()[last].in);
        const Matrix &h = dec_cache.inputs[last];
        dec_grad.params.segment(w_off + width, width) += h * var_upstream.transpose();
        dec_grad.params[b_off + 1] += var_upstream.sum();
    }
    const Vector g_z = dec_grad.input.middleRows(target_r.rows(), latent).rowwise().sum();
    const auto kl_grad = nn::kl_diag_gaussians_grad(mu, var_kl, Vector::Zero(latent), ones);
    Vector g_mu = g_z + lambda * kl_grad.mu_q;
    Vector g_var = Vector::Zero(latent);
    for (Eigen::Index k = 0; k < latent; ++k) {
        if (eps)
            g_var[k] += noise_scale * g_z[k] * (*eps)[k] / (2.0 * sigma[k]);
        if (var[k] > kKlVarianceFloor)
            g_var[k] += lambda * kl_grad.var_q[k];
    }
    Matrix g_ctx = (2.0 / n_ctx) * (centered.array().colwise() * g_var.array()).matrix();
    g_ctx.colwise() += g_mu / n_ctx;
    auto enc_grad = model.encoder.backward(enc_cache, g_ctx);
    r.encoder_grad = std::move(enc_grad.params);
    r.decoder_grad = std::move(dec_grad.params);
    return r;
}

std::vector<std::size_t> draw_batch(const std::vector<std::size_t> &group, std::size_t batch_size, Rng &rng) {
    std::vector<std::size_t> pool = group;
    const auto take = std::min(batch_size, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(take);
    return pool;
}

Vector standard_normal(Eigen::Index n, Rng &rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i)
        v[i] = gauss(rng);
    return v;
}

} // namespace

LatentStats LatentStats::uninitialized(std::size_t latent_dim, double forgetting) {
    if (!(forgetting >= 0.0 && forgetting <= 1.0))
        throw InvalidInputError("forgetting factor must lie in [0, 1]");
    LatentStats s;
    s.mu = Vector::Zero(static_cast<Eigen::Index>(latent_dim));
    s.var = Vector::Zero(static_cast<Eigen::Index>(latent_dim));
    s.forgetting = forgetting;
    return s;
}

bool LatentStats::operator==(const LatentStats &o) const {
    return count == o.count && forgetting == o.forgetting && weight == o.weight && bit_equal(mu, o.mu) &&
           bit_equal(var, o.var);
}

bool NprModel::operator==(const NprModel &o) const {
    return encoder == o.encoder && decoder == o.decoder && stats == o.stats && input_norm == o.input_norm &&
           encoder_trained == o.encoder_trained && head_trained == o.head_trained &&
           variance_calibration == o.variance_calibration &&
           config.latent_dim == o.config.latent_dim && config.max_paths == o.config.max_paths;
}

NprModel make_model(const NprConfig &config, std::uint64_t seed) {
    if (config.latent_dim == 0 || config.max_paths == 0)
        throw InvalidInputError("latent_dim and max_paths must be positive");
    if (!(config.context_fraction > 0.0 && config.context_fraction < 1.0))
        throw InvalidInputError("context_fraction must lie strictly between 0 and 1");
    NprModel m;
    m.config = config;
    Rng rng(derive_seed(seed, "npr-init"));
    const auto in = 2 * config.max_paths;
    m.encoder = nn::FeedForwardNet::make(in + 1, config.encoder_hidden, config.latent_dim, nn::Activation::Relu,
                                         nn::Activation::Identity, rng);
    m.decoder = nn::FeedForwardNet::make(in + 2 * config.latent_dim, config.decoder_hidden, 2,
                                         nn::Activation::Relu, nn::Activation::Identity, rng);
    m.stats = LatentStats::uninitialized(config.latent_dim, config.forgetting);
    m.input_norm.mean.assign(in, 0.0);
    m.input_norm.std.assign(in, 1.0);
    return m;
}

Vector model_input(const NprModel &model, const sim::PowerDelayProfile &pdp) {
    const auto raw = data::encode_relative(pdp, model.config.max_paths);
    const auto norm = model.input_norm.apply(raw);
    return Eigen::Map<const Vector>(norm.data(), static_cast<Eigen::Index>(norm.size()));
}

std::vector<ContextPoint> make_context(const NprModel &model, const data::Dataset &ds) {
    std::vector<ContextPoint> out;
    out.reserve(ds.size());
    for (const auto &s : ds.samples)
        out.push_back({model_input(model, s.pdp), s.delta_d_m});
    return out;
}

std::vector<Vector> encode_context(const NprModel &model, std::span<const ContextPoint> samples) {
    if (samples.empty())
        throw InvalidInputError("encode_context needs at least one sample");
    const auto dim = static_cast<Eigen::Index>(model.input_dim());
    Matrix in(dim + 1, static_cast<Eigen::Index>(samples.size()));
    for (std::size_t j = 0; j < samples.size(); ++j) {
        if (samples[j].r.size() != dim)
            throw ShapeError("context sample " + std::to_string(j) + " has length " +
                             std::to_string(samples[j].r.size()) + ", expected " + std::to_string(dim));
        in.col(static_cast<Eigen::Index>(j)).head(dim) = samples[j].r;
        in(dim, static_cast<Eigen::Index>(j)) = samples[j].delta_d;
    }
    const Matrix z = model.encoder.forward_batch(in);
    std::vector<Vector> out;
    out.reserve(samples.size());
    for (Eigen::Index j = 0; j < z.cols(); ++j)
        out.emplace_back(z.col(j));
    return out;
}

LatentStats aggregate_online(const LatentStats &stats, const Vector &latent) {
    LatentStats s = stats;
    if (!stats.initialized()) {
        if (stats.mu.size() != 0 && stats.mu.size() != latent.size())
            throw ShapeError("latent dimension mismatch in aggregate_online");
        s.mu = latent;
        s.var = Vector::Zero(latent.size());
        s.count = 1;
        s.weight = 1.0;
        return s;
    }
    if (latent.size() != stats.mu.size())
        throw ShapeError("latent dimension mismatch in aggregate_online");
    const double gamma = stats.forgetting;
    if (gamma * stats.weight == 0.0) {
        // Fully discounted history: restart from the new latent.
        s.mu = latent;
        s.var = Vector::Zero(latent.size());
        s.weight = 1.0;
        s.count = stats.count + 1;
        return s;
    }
    const double w = gamma * stats.weight + 1.0;
    const Vector delta = latent - stats.mu;
    s.mu = stats.mu + delta / w;
    const Vector scatter = gamma * stats.var * stats.weight + delta.cwiseProduct(latent - s.mu);
    s.var = (scatter / w).cwiseMax(0.0);
    s.weight = w;
    s.count = stats.count + 1;
    return s;
}

LatentStats aggregate(std::span<const Vector> latents, double forgetting) {
    if (latents.empty())
        throw InvalidInputError("aggregate needs at least one latent");
    LatentStats s = LatentStats::uninitialized(static_cast<std::size_t>(latents.front().size()), 1.0);
    for (const auto &z : latents)
        s = aggregate_online(s, z);
    if (!(forgetting >= 0.0 && forgetting <= 1.0))
        throw InvalidInputError("forgetting factor must lie in [0, 1]");
    s.forgetting = forgetting;
    return s;
}

LatentStats context_statistics(const NprModel &model, std::span<const ContextPoint> samples) {
    const auto latents = encode_context(model, samples);
    return aggregate(latents, model.config.forgetting);
}

Vector sample_latent(const LatentStats &stats, Rng &rng) {
    const Vector eps = standard_normal(stats.mu.size(), rng);
    return stats.mu + stats.var.cwiseMax(0.0).cwiseSqrt().cwiseProduct(eps);
}

BiasDistribution decode_head(const NprModel &model, const Vector &r, const LatentStats &stats) {
    if (r.size() != static_cast<Eigen::Index>(model.input_dim()))
        throw ShapeError("decode expects an input of length " + std::to_string(model.input_dim()));
    LatentStats prior;
    const auto &s = effective_stats(model, stats, prior);
    const Vector out = model.decoder.forward_batch(decoder_input(r, s.mu, s.var)).col(0);
    return {out[0], positive_variance(out[1], model.config.variance_floor)};
}

namespace {

struct MonteCarloParts {
    double mean = 0.0;
    double spread = 0.0;   // population variance of the mean head over z draws
    double head_var = 0.0; // average of the variance head over z draws
};

MonteCarloParts monte_carlo_parts(const NprModel &model, const Vector &r, const LatentStats &stats,
                                  std::size_t n_z_samples, std::uint64_t seed) {
    if (n_z_samples == 0)
        throw InvalidInputError("n_z_samples must be at least 1");
    if (r.size() != static_cast<Eigen::Index>(model.input_dim()))
        throw ShapeError("decode expects an input of length " + std::to_string(model.input_dim()));
    LatentStats prior;
    const auto &s = effective_stats(model, stats, prior);
    const auto latent = static_cast<Eigen::Index>(model.latent_dim());
    const auto n = static_cast<Eigen::Index>(n_z_samples);
    Rng rng(seed);
    Matrix in(r.size() + 2 * latent, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        in.col(j).head(r.size()) = r;
        in.col(j).segment(r.size(), latent) = sample_latent(s, rng);
        in.col(j).tail(latent).setZero();
    }
    const Matrix out = model.decoder.forward_batch(in);
    const double mean = out.row(0).mean();
    const double spread = (out.row(0).array() - mean).square().sum() / static_cast<double>(n);
    double head_var = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
        head_var += positive_variance(out(1, j), model.config.variance_floor);
    return {mean, spread, head_var / static_cast<double>(n)};
}

} // namespace

BiasDistribution decode_monte_carlo(const NprModel &model, const Vector &r, const LatentStats &stats,
                                    std::size_t n_z_samples, std::uint64_t seed) {
    const auto parts = monte_carlo_parts(model, r, stats, n_z_samples, seed);
    return {parts.mean, parts.spread + parts.head_var};
}

TrainingTrace train_encoder_decoder(NprModel &model, const data::Dataset &train, const data::Dataset &val,
                                    const TrainOptions &options) {
    if (options.epochs == 0 || options.batch_size == 0)
        throw InvalidInputError("epochs and batch_size must be positive");
    if (!(options.lr_final_ratio > 0.0 && options.lr_final_ratio <= 1.0))
        throw InvalidInputError("lr_final_ratio must lie in (0, 1]");
    std::vector<std::vector<double>> rows;
    for (const auto &s : train.samples)
        if (s.condition == sim::Condition::Nlos)
            rows.push_back(data::encode_relative(s.pdp, model.config.max_paths));
    if (rows.empty())
        throw InvalidInputError("training split holds no NLOS samples");
    model.input_norm = data::fit_normalization(rows);

    const auto table = build_table(model, train);
    const auto val_table = build_table(model, val);
    if (val_table.targets.size() == 0)
        throw InvalidInputError("validation split holds no NLOS samples");

    Rng rng(derive_seed(options.seed, "npr-train"));
    const nn::AdamConfig adam{model.config.learning_rate};
    auto enc_opt = nn::OptimizerState::for_params(model.encoder.num_params(), adam);
    auto dec_opt = nn::OptimizerState::for_params(model.decoder.num_params(), adam);

    std::vector<double> group_sizes;
    for (const auto &g : table.groups)
        group_sizes.push_back(static_cast<double>(g.size()));
    std::discrete_distribution<std::size_t> pick_group(group_sizes.begin(), group_sizes.end());
    const auto n_total = static_cast<std::size_t>(table.targets.size());
    const auto steps_per_epoch = (n_total + options.batch_size - 1) / options.batch_size;

    // Fixed validation batches so epochs are comparable.
    struct ValBatch {
        Matrix context_in, target_r;
        Vector target_y;
    };
    std::vector<ValBatch> val_batches;
    {
        Rng vrng(derive_seed(options.seed, "npr-val"));
        for (const auto &g : val_table.groups) {
            auto order = g;
            std::shuffle(order.begin(), order.end(), vrng);
            for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(
                                                                   std::min(order.size(), start + options.batch_size)));
                auto sp = split_batch(batch, model.config.context_fraction);
                val_batches.push_back({encoder_input(gather(val_table.inputs, sp.context),
                                                     gather(val_table.targets, sp.context)),
                                       gather(val_table.inputs, sp.target), gather(val_table.targets, sp.target)});
            }
        }
    }

    TrainingTrace trace;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        const double progress = static_cast<double>(epoch) / static_cast<double>(options.epochs);
        enc_opt.config.learning_rate = dec_opt.config.learning_rate =
            model.config.learning_rate * std::pow(options.lr_final_ratio, progress);
        double loss_sum = 0.0;
        double nll_sum = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const auto &group = table.groups[pick_group(rng)];
            auto batch = draw_batch(group, options.batch_size, rng);
            auto sp = split_batch(std::move(batch), model.config.context_fraction);
            const Vector eps = standard_normal(static_cast<Eigen::Index>(model.latent_dim()), rng);
            auto res = np_objective(model,
                                    encoder_input(gather(table.inputs, sp.context), gather(table.targets, sp.context)),
                                    gather(table.inputs, sp.target), gather(table.targets, sp.target), &eps, true);
            if (!std::isfinite(res.l2) || !res.encoder_grad.allFinite() || !res.decoder_grad.allFinite())
                throw DomainError("non-finite loss or gradient during encoder training");
            nn::optimizer_step(enc_opt, model.encoder.params(), res.encoder_grad);
            nn::optimizer_step(dec_opt, model.decoder.params(), res.decoder_grad);
            loss_sum += res.l2 + model.config.kl_weight * res.kl;
            nll_sum += res.variance_nll;
        }
        trace.train_loss.push_back(loss_sum / static_cast<double>(steps_per_epoch));
        trace.variance_nll.push_back(nll_sum / static_cast<double>(steps_per_epoch));

        double val_sum = 0.0;
        for (const auto &vb : val_batches) {
            auto res = np_objective(model, vb.context_in, vb.target_r, vb.target_y, nullptr, false);
            val_sum += res.l2 + model.config.kl_weight * res.kl;
        }
        trace.validation_loss.push_back(val_sum / static_cast<double>(val_batches.size()));
    }

    // Held-out scale that puts the one-sigma band at its Gaussian coverage; the head phase applies it.
    std::vector<double> ratios;
    for (const auto &vb : val_batches) {
        const auto res = np_objective(model, vb.context_in, vb.target_r, vb.target_y, nullptr, false);
        ratios.insert(ratios.end(), res.variance_ratios.begin(), res.variance_ratios.end());
    }
    const auto at = static_cast<std::ptrdiff_t>(kOneSigmaCoverage * static_cast<double>(ratios.size() - 1));
    std::nth_element(ratios.begin(), ratios.begin() + at, ratios.end());
    model.variance_calibration = ratios[static_cast<std::size_t>(at)];

    model.encoder_trained = true;
    model.head_trained = false;
    const Matrix z_all = model.encoder.forward_batch(encoder_input(table.inputs, table.targets));
    LatentStats stats = LatentStats::uninitialized(model.latent_dim(), model.config.forgetting);
    for (Eigen::Index j = 0; j < z_all.cols(); ++j)
        stats = aggregate_online(stats, z_all.col(j));
    stats.forgetting = model.config.forgetting;
    model.stats = stats;
    return trace;
}

HeadTrace train_decoder_head(NprModel &model, const data::Dataset &train, const HeadOptions &options) {
    if (!model.encoder_trained)
        throw StateError("decoder head training requires a trained encoder");
    if (options.epochs == 0 || options.batch_size == 0 || options.context_sets == 0 || options.targets_per_set == 0)
        throw InvalidInputError("head training options must be positive");
    const auto table = build_table(model, train);
    if (table.targets.size() == 0)
        throw InvalidInputError("training split holds no NLOS samples");

    Rng rng(derive_seed(options.seed, "npr-head"));
    const auto latent = static_cast<Eigen::Index>(model.latent_dim());
    const auto rdim = static_cast<Eigen::Index>(model.input_dim());
    const auto n_labels = static_cast<Eigen::Index>(options.context_sets * options.targets_per_set);

    // Label tuples (r, mu_z, var_z, E[delta_d], Var[delta_d]) from the Monte-Carlo path of the frozen nets.
    Matrix inputs(rdim + 2 * latent, n_labels);
    Vector label_mean(n_labels), label_var(n_labels);
    std::vector<double> group_sizes;
    for (const auto &g : table.groups)
        group_sizes.push_back(static_cast<double>(g.size()));
    std::discrete_distribution<std::size_t> pick_group(group_sizes.begin(), group_sizes.end());
    const double calibration = options.calibrate_variance ? model.variance_calibration : 1.0;
    Eigen::Index col = 0;
    for (std::size_t set = 0; set < options.context_sets; ++set) {
        const auto &group = table.groups[pick_group(rng)];
        const std::size_t lo = std::min<std::size_t>(32, group.size());
        const std::size_t hi = std::min<std::size_t>(256, group.size());
        std::uniform_int_distribution<std::size_t> ctx_size(lo, hi);
        const auto context = draw_batch(group, ctx_size(rng), rng);
        const Matrix z = model.encoder.forward_batch(
            encoder_input(gather(table.inputs, context), gather(table.targets, context)));
        LatentStats stats = LatentStats::uninitialized(model.latent_dim());
        for (Eigen::Index j = 0; j < z.cols(); ++j)
            stats = aggregate_online(stats, z.col(j));
        // Seeds follow the same latent spread the nets saw during training.
        LatentStats seed_stats = stats;
        if (options.point_mass_seeds)
            seed_stats.var.setZero();
        else if (model.config.reparam_standard_error)
            seed_stats.var /= static_cast<double>(stats.count);
        const auto targets = draw_batch(group, options.targets_per_set, rng);
        for (std::size_t t = 0; t < options.targets_per_set; ++t) {
            const Vector r = table.inputs.col(static_cast<Eigen::Index>(targets[t % targets.size()]));
            const auto label = monte_carlo_parts(model, r, seed_stats, options.n_z_samples, rng());
            inputs.col(col).head(rdim) = r;
            inputs.col(col).segment(rdim, latent) = stats.mu;
            inputs.col(col).tail(latent) = stats.var;
            label_mean[col] = label.mean;
            label_var[col] = label.spread + calibration * label.head_var;
            ++col;
        }
    }

    const double var_scale = label_var.mean();
    const double var_weight = 1.0 / (var_scale * var_scale);
    const double floor = model.config.variance_floor;
    auto opt = nn::OptimizerState::for_params(model.decoder.num_params(), nn::AdamConfig{model.config.learning_rate});
    std::vector<std::size_t> order(static_cast<std::size_t>(n_labels));
    std::iota(order.begin(), order.end(), std::size_t{0});

    HeadTrace trace;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        // Learning rate decays geometrically to lr_final_ratio * lr over the run.
        const double progress = static_cast<double>(epoch) / static_cast<double>(options.epochs);
        opt.config.learning_rate = model.config.learning_rate * std::pow(options.lr_final_ratio, progress);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const auto stop = std::min(order.size(), start + options.batch_size);
            std::span<const std::size_t> idx(order.data() + start, stop - start);
            auto cache = model.decoder.forward_cached(gather(inputs, idx));
            const Matrix &out = cache.output;
            const auto nb = static_cast<double>(out.cols());
            Matrix upstream(2, out.cols());
            double loss = 0.0;
            for (Eigen::Index j = 0; j < out.cols(); ++j) {
                const auto k = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
                const double lv = label_var[k];
                const double resid = out(0, j) - label_mean[k];
                const double v = positive_variance(out(1, j), floor);
                loss += 0.5 * std::log(2.0 * std::numbers::pi * lv) + resid * resid / (2.0 * lv) +
                        var_weight * (v - lv) * (v - lv);
                upstream(0, j) = resid / lv / nb;
                upstream(1, j) = 2.0 * var_weight * (v - lv) / nb * nn::sigmoid(out(1, j));
            }
            auto grad = model.decoder.backward(cache, upstream);
            if (!grad.params.allFinite())
                throw DomainError("non-finite gradient during decoder head training");
            nn::optimizer_step(opt, model.decoder.params(), grad.params);
            loss_sum += loss / nb;
            ++batches;
        }
        trace.loss.push_back(loss_sum / static_cast<double>(batches));
    }
    model.head_trained = true;
    return trace;
}

OnlineStatus online_update(NprModel &model, const sim::PowerDelayProfile &pdp, double p_nlos, double threshold) {
    if (!(p_nlos >= 0.0 && p_nlos <= 1.0))
        throw InvalidInputError("p_nlos must lie in [0, 1]");
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw InvalidInputError("threshold must lie in [0, 1]");
    if (!(p_nlos < threshold))
        return OnlineStatus::Gated;
    if (pdp.size() < 2)
        return OnlineStatus::SkippedSinglePath;
    const double pseudo_label = (pdp.delays[1] - pdp.delays[0]) * sim::kSpeedOfLight;
    sim::PowerDelayProfile stripped{{pdp.powers.begin() + 1, pdp.powers.end()},
                                    {pdp.delays.begin() + 1, pdp.delays.end()}};
    const ContextPoint point{model_input(model, stripped), pseudo_label};
    const auto latent = encode_context(model, std::span<const ContextPoint>(&point, 1));
    model.stats = aggregate_online(model.stats, latent.front());
    return OnlineStatus::Accepted;
}

BiasDistribution predict(const NprModel &model, const sim::PowerDelayProfile &pdp) {
    if (!model.encoder_trained || !model.head_trained)
        throw StateError("predict requires a fully trained model");
    return decode_head(model, model_input(model, pdp), model.stats);
}

nlohmann::json stats_to_json(const LatentStats &s) {
    return {{"mu", std::vector<double>(s.mu.data(), s.mu.data() + s.mu.size())},
            {"var", std::vector<double>(s.var.data(), s.var.data() + s.var.size())},
            {"count", s.count},
            {"weight", s.weight},
            {"forgetting", s.forgetting}};
}

LatentStats stats_from_json(const nlohmann::json &j) {
    LatentStats s;
    const auto mu = j.at("mu").get<std::vector<double>>();
    const auto var = j.at("var").get<std::vector<double>>();
    if (mu.size() != var.size())
        throw ShapeError("stats block: mu and var differ in length");
    s.mu = Eigen::Map<const Vector>(mu.data(), static_cast<Eigen::Index>(mu.size()));
    s.var = Eigen::Map<const Vector>(var.data(), static_cast<Eigen::Index>(var.size()));
    s.count = j.at("count").get<std::size_t>();
    s.weight = j.at("weight").get<double>();
    s.forgetting = j.at("forgetting").get<double>();
    return s;
}

nlohmann::json to_json(const NprModel &m) {
    const auto &c = m.config;
    return {{"format", "nlos-npr"},
            {"version", kModelVersion},
            {"config",
             {{"max_paths", c.max_paths},
              {"latent_dim", c.latent_dim},
              {"encoder_hidden", c.encoder_hidden},
              {"decoder_hidden", c.decoder_hidden},
              {"kl_weight", c.kl_weight},
              {"context_fraction", c.context_fraction},
              {"variance_floor", c.variance_floor},
              {"learning_rate", c.learning_rate},
              {"forgetting", c.forgetting},
              {"allow_prior_fallback", c.allow_prior_fallback},
              {"reparam_standard_error", c.reparam_standard_error}}},
            {"encoder", nn::to_json(m.encoder)},
            {"decoder", nn::to_json(m.decoder)},
            {"stats", stats_to_json(m.stats)},
            {"normalization", {{"mean", m.input_norm.mean}, {"std", m.input_norm.std}}},
            {"variance_calibration", m.variance_calibration},
            {"trained", {{"encoder", m.encoder_trained}, {"head", m.head_trained}}}};
}

NprModel model_from_json(const nlohmann::json &j) {
    try {
        if (j.at("format").get<std::string>() != "nlos-npr")
            throw ParseError(0, "not an NPR checkpoint");
        const int version = j.at("version").get<int>();
        if (version != kModelVersion)
            throw VersionError("NPR checkpoint version " + std::to_string(version) + " is not supported");
        NprModel m;
        const auto &c = j.at("config");
        m.config.max_paths = c.at("max_paths").get<std::size_t>();
        m.config.latent_dim = c.at("latent_dim").get<std::size_t>();
        m.config.encoder_hidden = c.at("encoder_hidden").get<std::vector<std::size_t>>();
        m.config.decoder_hidden = c.at("decoder_hidden").get<std::vector<std::size_t>>();
        m.config.kl_weight = c.at("kl_weight").get<double>();
        m.config.context_fraction = c.at("context_fraction").get<double>();
        m.config.variance_floor = c.at("variance_floor").get<double>();
        m.config.learning_rate = c.at("learning_rate").get<double>();
        m.config.forgetting = c.at("forgetting").get<double>();
        m.config.allow_prior_fallback = c.at("allow_prior_fallback").get<bool>();
        m.config.reparam_standard_error = c.at("reparam_standard_error").get<bool>();
        m.encoder = nn::net_from_json(j.at("encoder"));
        m.decoder = nn::net_from_json(j.at("decoder"));
        m.stats = stats_from_json(j.at("stats"));
        m.input_norm.mean = j.at("normalization").at("mean").get<std::vector<double>>();
        m.input_norm.std = j.at("normalization").at("std").get<std::vector<double>>();
        m.encoder_trained = j.at("trained").at("encoder").get<bool>();
        m.head_trained = j.at("trained").at("head").get<bool>();
        m.variance_calibration = j.at("variance_calibration").get<double>();
        const auto in = 2 * m.config.max_paths;
        if (m.encoder.input_dim() != in + 1 || m.encoder.output_dim() != m.config.latent_dim ||
            m.decoder.input_dim() != in + 2 * m.config.latent_dim || m.decoder.output_dim() != 2 ||
            m.input_norm.size() != in || m.stats.dim() != m.config.latent_dim)
            throw ShapeError("NPR checkpoint dimensions do not chain");
        return m;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(0, std::string("NPR checkpoint: ") + e.what());
    }
}

void save(const NprModel &model, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write checkpoint '" + path.string() + "'");
    out << to_json(model).dump(1) << '\n';
}

NprModel load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open checkpoint '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(0, std::string("checkpoint '") + path.string() + "': " + e.what());
    }
    return model_from_json(j);
}

} // namespace nlos::npr
