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

#ifndef NLOS_BASELINES_HPP
#define NLOS_BASELINES_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "nlos/autodiff_nn.hpp"
#include "nlos/channel_sim.hpp"
#include "nlos/dataset_io.hpp"

namespace nlos::baselines {

using nn::Matrix;
using nn::Vector;

struct GprHyperparams {
    double length_scale = 1.0;
    double signal_variance = 1.0;
    double noise_variance = 1e-2;
};

// Exact zero-mean GP with a squared-exponential kernel. Inputs are stored one per column.
struct GprModel {
    GprHyperparams hyper;
    Matrix inputs;
    Vector targets;
    Vector weights;             // (K + noise I)^-1 y
    Eigen::LLT<Matrix> factor;  // of K + noise I
    data::Normalization feature_norm; // set by the dataset-level fit
    bool fitted = false;
};

double se_kernel(const Vector &a, const Vector &b, const GprHyperparams &hp);

// Builds K + noise_variance * I and its Cholesky factor. Throws ConditioningError on failure.
GprModel gpr_fit(const Matrix &inputs, const Vector &targets, const GprHyperparams &hp);

struct GprPrediction {
    double mean = 0.0;
    double variance = 0.0; // latent function variance, >= 0
};

GprPrediction gpr_predict(const GprModel &model, const Vector &x);

// Standardized PDP features of a profile, using the model's feature normalization.
Vector gpr_features(const GprModel &model, const sim::PowerDelayProfile &pdp);
GprPrediction gpr_predict(const GprModel &model, const sim::PowerDelayProfile &pdp);

struct GprSearchOptions {
    std::vector<double> length_scales{0.3, 0.6, 1.2, 2.5, 5.0};
    std::vector<double> signal_variances{0.01, 0.05, 0.2, 1.0, 5.0};
    std::vector<double> noise_variances{1e-3, 5e-3, 0.02, 0.08, 0.3};
    std::size_t max_train_points = 600;
    std::uint64_t seed = 5;
};

// Fits on standardized PDP features of NLOS training samples (subsampled to max_train_points)
// choosing hyperparameters by validation negative log-likelihood over the grid.
GprModel gpr_fit_dataset(const data::Dataset &train, const data::Dataset &val, const GprSearchOptions &options);

struct MlpOptions {
    std::vector<std::size_t> hidden{128, 128, 64};
    std::size_t epochs = 60;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double lr_final_ratio = 1.0; // learning rate decays geometrically to this fraction over the run
    std::size_t max_paths = data::kDefaultMaxPaths;
    std::uint64_t seed = 7;
};

// Supervised point regressor on encode_relative() inputs. Immutable after fit.
struct MlpModel {
    nn::FeedForwardNet net;
    data::Normalization input_norm;
    std::size_t max_paths = data::kDefaultMaxPaths;
    bool fitted = false;
};

MlpModel mlp_fit(const data::Dataset &train, const MlpOptions &options);
// Continues training from an existing fit on new data (the "retrained" comparison).
MlpModel mlp_retrain(const MlpModel &base, const data::Dataset &train, const MlpOptions &options);
double mlp_predict(const MlpModel &model, const sim::PowerDelayProfile &pdp);

nlohmann::json to_json(const GprModel &model);
GprModel gpr_from_json(const nlohmann::json &j);
nlohmann::json to_json(const MlpModel &model);
MlpModel mlp_from_json(const nlohmann::json &j);

} // namespace nlos::baselines

#endif // NLOS_BASELINES_HPP
