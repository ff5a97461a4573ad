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

#ifndef NLOS_NPR_HPP
#define NLOS_NPR_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "nlos/autodiff_nn.hpp"
#include "nlos/channel_sim.hpp"
#include "nlos/dataset_io.hpp"

namespace nlos::npr {

using nn::Matrix;
using nn::Vector;

// Environment summary held by the aggregator. count == 0 means uninitialized;
// consumers then fall back to the N(0, I) prior when allowed.
struct LatentStats {
    Vector mu;
    Vector var;
    std::size_t count = 0;
    double forgetting = 1.0; // exponential discount applied before each streaming fold
    double weight = 0.0;     // effective sample count; equals count when forgetting == 1

    static LatentStats uninitialized(std::size_t latent_dim, double forgetting = 1.0);
    bool initialized() const noexcept { return count > 0; }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(mu.size()); }
    bool operator==(const LatentStats &other) const;
};

struct NprConfig {
    std::size_t max_paths = data::kDefaultMaxPaths;
    std::size_t latent_dim = 8;
    std::vector<std::size_t> encoder_hidden{64, 64};
    std::vector<std::size_t> decoder_hidden{64, 64};
    double kl_weight = 0.01;
    double context_fraction = 0.5;
    double variance_floor = 1e-6;
    double learning_rate = 1e-3;
    double forgetting = 1.0;
    bool allow_prior_fallback = true;
    // Training draws z = mu_z + s * sigma_z * eps with s = 1 / sqrt(context size) when set
    // (spread of the context mean), s = 1 otherwise (spread of a single latent).
    bool reparam_standard_error = true;
};

// Encoder h: [r || delta_d] -> z. Decoder f: [r || latent || latent variance] -> (mean, pre-variance);
// the variance head passes through softplus plus variance_floor.
struct NprModel {
    NprConfig config;
    nn::FeedForwardNet encoder;
    nn::FeedForwardNet decoder;
    LatentStats stats;
    data::Normalization input_norm; // over encode_relative() vectors
    double variance_calibration = 1.0; // held-out quantile of resid^2 / variance at one-sigma coverage
    bool encoder_trained = false;
    bool head_trained = false;

    std::size_t latent_dim() const noexcept { return config.latent_dim; }
    std::size_t input_dim() const noexcept { return 2 * config.max_paths; }
    bool operator==(const NprModel &) const;
};

NprModel make_model(const NprConfig &config, std::uint64_t seed);

// Normalized network input for a profile. Requires input_norm to be set.
Vector model_input(const NprModel &model, const sim::PowerDelayProfile &pdp);

struct ContextPoint {
    Vector r; // model_input() vector
    double delta_d = 0.0;
};

std::vector<ContextPoint> make_context(const NprModel &model, const data::Dataset &ds);

// z_n = h([r_n || delta_d_n]), in input order.
std::vector<Vector> encode_context(const NprModel &model, std::span<const ContextPoint> samples);

// Mean and population variance (divide by N) of the latents, in one pass.
LatentStats aggregate(std::span<const Vector> latents, double forgetting = 1.0);

// Streaming fold of one latent into the stats, discounting history by stats.forgetting.
LatentStats aggregate_online(const LatentStats &stats, const Vector &latent);

// encode_context followed by aggregate.
LatentStats context_statistics(const NprModel &model, std::span<const ContextPoint> samples);

// z = mu + sqrt(var) * eps, eps ~ N(0, I).
Vector sample_latent(const LatentStats &stats, Rng &rng);

struct BiasDistribution {
    double mean = 0.0;     // m
    double variance = 0.0; // m^2
};

// Deterministic head path: f([r || mu_z || var_z]).
BiasDistribution decode_head(const NprModel &model, const Vector &r, const LatentStats &stats);

// Monte-Carlo path: z ~ N(mu_z, var_z) drawn n_z_samples times through f([r || z || 0]).
// Mean is the sample mean of the mean head; variance is the population variance of the
// mean head plus the average of the variance head.
BiasDistribution decode_monte_carlo(const NprModel &model, const Vector &r, const LatentStats &stats,
                                    std::size_t n_z_samples, std::uint64_t seed);

struct TrainOptions {
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::uint64_t seed = 1;
    double lr_final_ratio = 1.0; // learning rate decays geometrically to this fraction over the run
};

struct TrainingTrace {
    std::vector<double> train_loss;      // per epoch: L2 + kl_weight * KL
    std::vector<double> validation_loss; // per epoch, same objective with z = mu_z
    std::vector<double> variance_nll;    // per epoch: variance-head NLL (train)
};

// End-to-end encoder/decoder training on NLOS samples. Each step draws a batch from one
// scenario, splits it into context and target halves, samples z by reparameterization and
// minimizes the decoder-mean L2 error plus kl_weight * KL(N(mu_z, var_z) || N(0, I)).
// The variance head is fitted alongside by Gaussian NLL with the mean held fixed.
// Fits input_norm on the training split and sets model.stats to the full-training aggregate.
TrainingTrace train_encoder_decoder(NprModel &model, const data::Dataset &train, const data::Dataset &val,
                                    const TrainOptions &options);

struct HeadOptions {
    std::size_t n_z_samples = 64;
    std::size_t epochs = 150;
    std::size_t batch_size = 128;
    std::size_t context_sets = 200;
    std::size_t targets_per_set = 16;
    double lr_final_ratio = 0.05;
    bool calibrate_variance = true; // scale the variance-head label term by variance_calibration
    bool point_mass_seeds = false;  // draw label seeds from var_z = 0 (labels then carry no latent spread)
    std::uint64_t seed = 2;
};

struct HeadTrace {
    std::vector<double> loss; // per epoch
};

// Trains the deterministic head path on Monte-Carlo labels; encoder parameters are untouched.
HeadTrace train_decoder_head(NprModel &model, const data::Dataset &train, const HeadOptions &options);

enum class OnlineStatus { Accepted, Gated, SkippedSinglePath };

// LOS-gated adaptation. When p_nlos < threshold the profile is treated as LOS: the
// pseudo-label c * (tau1 - tau0) is paired with the profile minus its first path and
// folded into model.stats. Network parameters never change.
OnlineStatus online_update(NprModel &model, const sim::PowerDelayProfile &pdp, double p_nlos, double threshold);

BiasDistribution predict(const NprModel &model, const sim::PowerDelayProfile &pdp);

nlohmann::json to_json(const NprModel &model);
NprModel model_from_json(const nlohmann::json &j);
void save(const NprModel &model, const std::filesystem::path &path);
NprModel load(const std::filesystem::path &path);

nlohmann::json stats_to_json(const LatentStats &stats);
LatentStats stats_from_json(const nlohmann::json &j);

} // namespace nlos::npr

#endif // NLOS_NPR_HPP
