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

#ifndef NLOS_AUTODIFF_NN_HPP
#define NLOS_AUTODIFF_NN_HPP

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "nlos/random.hpp"

namespace nlos::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd; // batches are stored one sample per column
using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

enum class Activation { Relu, Tanh, Identity, Softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string &name);

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation activation = Activation::Identity;
    bool operator==(const LayerShape &) const = default;
};

// Intermediate values of a batched forward pass, kept for backward().
struct ForwardCache {
    std::vector<Matrix> inputs;         // input to each layer
    std::vector<Matrix> pre_activation; // affine output of each layer
    Matrix output;
};

struct Gradients {
    Vector params; // same layout as FeedForwardNet::params()
    Matrix input;  // d objective / d input, one column per sample
};

// Dense feed-forward stack. All parameters live in one flat vector: for each
// layer, the weight matrix (out x in) row-major, followed by the bias (out).
class FeedForwardNet {
  public:
    FeedForwardNet() = default;
    explicit FeedForwardNet(std::vector<LayerShape> layers);

    // Hidden layers share one activation; weights ~ U(+-sqrt(6 / (fan_in + fan_out))), biases zero.
    static FeedForwardNet make(std::size_t input_dim, const std::vector<std::size_t> &hidden, std::size_t output_dim,
                               Activation hidden_activation, Activation output_activation, Rng &rng);

    std::size_t input_dim() const noexcept { return layers_.empty() ? 0 : layers_.front().in; }
    std::size_t output_dim() const noexcept { return layers_.empty() ? 0 : layers_.back().out; }
    std::size_t num_params() const noexcept { return static_cast<std::size_t>(params_.size()); }
    const std::vector<LayerShape> &layers() const noexcept { return layers_; }

    Vector &params() noexcept { return params_; }
    const Vector &params() const noexcept { return params_; }

    RowMajorMap weights(std::size_t layer);
    ConstRowMajorMap weights(std::size_t layer) const;
    Eigen::Map<Vector> bias(std::size_t layer);
    Eigen::Map<const Vector> bias(std::size_t layer) const;

    Vector forward(const Vector &x) const;
    Matrix forward_batch(const Matrix &x) const;
    ForwardCache forward_cached(const Matrix &x) const;

    // Reverse-mode pass: given d objective / d output for each column of the cached
    // batch, returns d objective / d parameters (summed over the batch) and / d input.
    Gradients backward(const ForwardCache &cache, const Matrix &upstream) const;

    // Bit-level equality of shapes and parameters.
    bool operator==(const FeedForwardNet &other) const;

  private:
    void check_input(std::size_t rows) const;

    std::vector<LayerShape> layers_;
    std::vector<std::size_t> offsets_;
    Vector params_;
};

// Sum over elements of 1/2 log(2 pi var) + (target - mean)^2 / (2 var).
double gaussian_nll(const Vector &mean, const Vector &variance, const Vector &target);
struct GaussianNllGrad {
    Vector mean;
    Vector variance;
};
GaussianNllGrad gaussian_nll_grad(const Vector &mean, const Vector &variance, const Vector &target);

// KL(N(mu_q, diag var_q) || N(mu_p, diag var_p)), summed over dimensions.
double kl_diag_gaussians(const Vector &mu_q, const Vector &var_q, const Vector &mu_p, const Vector &var_p);
struct KlGrad {
    Vector mu_q;
    Vector var_q;
};
KlGrad kl_diag_gaussians_grad(const Vector &mu_q, const Vector &var_q, const Vector &mu_p, const Vector &var_p);

// Mean over elements of (pred - target)^2.
double mse(const Vector &pred, const Vector &target);
Vector mse_grad(const Vector &pred, const Vector &target);

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamConfig config;
    long step = 0;
    Vector first_moment;
    Vector second_moment;

    static OptimizerState for_params(std::size_t n, AdamConfig config = {});
};

// One bias-corrected adaptive-moment update of params in place.
void optimizer_step(OptimizerState &state, Vector &params, const Vector &grads);

// Versioned checkpoint: {"version", "input_dim", "output_dim",
//   "layers": [{"in", "out", "activation", "weights" (row-major), "bias"}]}.
nlohmann::json to_json(const FeedForwardNet &net);
FeedForwardNet net_from_json(const nlohmann::json &j);

} // namespace nlos::nn

#endif // NLOS_AUTODIFF_NN_HPP
