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

#include "nlos/autodiff_nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "nlos/errors.hpp"

namespace nlos::nn {

namespace {

constexpr int kCheckpointVersion = 1;

void apply_activation(Activation a, const Matrix &z, Matrix &out) {
    switch (a) {
    case Activation::Relu:
        out = z.cwiseMax(0.0);
        break;
    case Activation::Tanh:
        out = z.array().tanh().matrix();
        break;
    case Activation::Identity:
        out = z;
        break;
    case Activation::Softplus:
        out = z.unaryExpr([](double v) { return softplus(v); });
        break;
    }
}

// Multiplies grad elementwise by the activation derivative at z.
void scale_by_derivative(Activation a, const Matrix &z, Matrix &grad) {
    switch (a) {
    case Activation::Relu:
        grad.array() *= (z.array() > 0.0).cast<double>();
        break;
    case Activation::Tanh:
        grad.array() *= 1.0 - z.array().tanh().square();
        break;
    case Activation::Identity:
        break;
    case Activation::Softplus:
        grad.array() *= z.unaryExpr([](double v) { return sigmoid(v); }).array();
        break;
    }
}

void check_same_size(const Vector &a, const Vector &b, const char *what) {
    if (a.size() != b.size())
        throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
}

} // namespace

std::string to_string(Activation a) {
    switch (a) {
    case Activation::Relu:
        return "relu";
    case Activation::Tanh:
        return "tanh";
    case Activation::Identity:
        return "identity";
    case Activation::Softplus:
        return "softplus";
    }
    return "identity";
}

Activation activation_from_string(const std::string &name) {
    if (name == "relu")
        return Activation::Relu;
    if (name == "tanh")
        return Activation::Tanh;
    if (name == "identity")
        return Activation::Identity;
    if (name == "softplus")
        return Activation::Softplus;
    throw InvalidInputError("unknown activation '" + name + "'");
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) noexcept {
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

FeedForwardNet::FeedForwardNet(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
    if (layers_.empty())
        throw ShapeError("network needs at least one layer");
    std::size_t total = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].in == 0 || layers_[i].out == 0)
            throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
        if (i > 0 && layers_[i].in != layers_[i - 1].out)
            throw ShapeError("layer " + std::to_string(i) + " input does not match previous output");
        offsets_.push_back(total);
        total += layers_[i].out * layers_[i].in + layers_[i].out;
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(total));
}

FeedForwardNet FeedForwardNet::make(std::size_t input_dim, const std::vector<std::size_t> &hidden,
                                    std::size_t output_dim, Activation hidden_activation,
                                    Activation output_activation, Rng &rng) {
    std::vector<LayerShape> shapes;
    std::size_t prev = input_dim;
    for (auto h : hidden) {
        shapes.push_back({prev, h, hidden_activation});
        prev = h;
    }
    shapes.push_back({prev, output_dim, output_activation});
    FeedForwardNet net(std::move(shapes));
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
        const auto &s = net.layers_[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
        std::uniform_real_distribution<double> u(-limit, limit);
        auto w = net.weights(l);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c)
                w(r, c) = u(rng);
    }
    return net;
}

RowMajorMap FeedForwardNet::weights(std::size_t layer) {
    const auto &s = layers_.at(layer);
    return RowMajorMap(params_.data() + offsets_[layer], static_cast<Eigen::Index>(s.out),
                       static_cast<Eigen::Index>(s.in));
}

ConstRowMajorMap FeedForwardNet::weights(std::size_t layer) const {
    const auto &s = layers_.at(layer);
    return ConstRowMajorMap(params_.data() + offsets_[layer], static_cast<Eigen::Index>(s.out),
                            static_cast<Eigen::Index>(s.in));
}

Eigen::Map<Vector> FeedForwardNet::bias(std::size_t layer) {
    const auto &s = layers_.at(layer);
    return Eigen::Map<Vector>(params_.data() + offsets_[layer] + s.out * s.in, static_cast<Eigen::Index>(s.out));
}

Eigen::Map<const Vector> FeedForwardNet::bias(std::size_t layer) const {
    const auto &s = layers_.at(layer);
    return Eigen::Map<const Vector>(params_.data() + offsets_[layer] + s.out * s.in,
                                    static_cast<Eigen::Index>(s.out));
}

void FeedForwardNet::check_input(std::size_t rows) const {
    if (layers_.empty())
        throw ShapeError("forward on an empty network");
    if (rows != input_dim())
        throw ShapeError("network expects input of length " + std::to_string(input_dim()) + ", got " +
                         std::to_string(rows));
}

Vector FeedForwardNet::forward(const Vector &x) const {
    check_input(static_cast<std::size_t>(x.size()));
    Matrix a = x;
    Matrix z;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        z = weights(l) * a;
        z.colwise() += bias(l);
        apply_activation(layers_[l].activation, z, a);
    }
    return a.col(0);
}

Matrix FeedForwardNet::forward_batch(const Matrix &x) const {
    check_input(static_cast<std::size_t>(x.rows()));
    Matrix a = x;
    Matrix z;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        z.noalias() = weights(l) * a;
        z.colwise() += bias(l);
        apply_activation(layers_[l].activation, z, a);
    }
    return a;
}

ForwardCache FeedForwardNet::forward_cached(const Matrix &x) const {
    check_input(static_cast<std::size_t>(x.rows()));
    ForwardCache cache;
    cache.inputs.reserve(layers_.size());
    cache.pre_activation.reserve(layers_.size());
    Matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Matrix z = weights(l) * a;
        z.colwise() += bias(l);
        cache.inputs.push_back(std::move(a));
        apply_activation(layers_[l].activation, z, a);
        cache.pre_activation.push_back(std::move(z));
    }
    cache.output = std::move(a);
    return cache;
}

Gradients FeedForwardNet::backward(const ForwardCache &cache, const Matrix &upstream) const {
    if (cache.pre_activation.size() != layers_.size())
        throw ShapeError("forward cache does not belong to this network");
    if (upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols())
        throw ShapeError("upstream gradient shape does not match network output");
    Gradients g;
    g.params = Vector::Zero(params_.size());
    Matrix delta = upstream;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto &s = layers_[l];
        scale_by_derivative(s.activation, cache.pre_activation[l], delta);
        RowMajorMap gw(g.params.data() + offsets_[l], static_cast<Eigen::Index>(s.out),
                       static_cast<Eigen::Index>(s.in));
        gw.noalias() = delta * cache.inputs[l].transpose();
        Eigen::Map<Vector>(g.params.data() + offsets_[l] + s.out * s.in, static_cast<Eigen::Index>(s.out)) =
            delta.rowwise().sum();
        Matrix prev = weights(l).transpose() * delta;
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

bool FeedForwardNet::operator==(const FeedForwardNet &other) const {
    if (layers_ != other.layers_ || params_.size() != other.params_.size())
        return false;
    return params_.size() == 0 ||
           std::memcmp(params_.data(), other.params_.data(), sizeof(double) * params_.size()) == 0;
}

double gaussian_nll(const Vector &mean, const Vector &variance, const Vector &target) {
    check_same_size(mean, variance, "gaussian_nll");
    check_same_size(mean, target, "gaussian_nll");
    double total = 0.0;
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double v = variance[i];
        if (!(v > 0.0))
            throw DomainError("gaussian_nll: variance must be positive");
        const double r = target[i] - mean[i];
        total += 0.5 * std::log(2.0 * std::numbers::pi * v) + r * r / (2.0 * v);
    }
    return total;
}

GaussianNllGrad gaussian_nll_grad(const Vector &mean, const Vector &variance, const Vector &target) {
    check_same_size(mean, variance, "gaussian_nll_grad");
    check_same_size(mean, target, "gaussian_nll_grad");
    GaussianNllGrad g{Vector(mean.size()), Vector(mean.size())};
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double v = variance[i];
        if (!(v > 0.0))
            throw DomainError("gaussian_nll_grad: variance must be positive");
        const double r = target[i] - mean[i];
        g.mean[i] = -r / v;
        g.variance[i] = 0.5 / v - r * r / (2.0 * v * v);
    }
    return g;
}

double kl_diag_gaussians(const Vector &mu_q, const Vector &var_q, const Vector &mu_p, const Vector &var_p) {
    check_same_size(mu_q, var_q, "kl_diag_gaussians");
    check_same_size(mu_q, mu_p, "kl_diag_gaussians");
    check_same_size(mu_q, var_p, "kl_diag_gaussians");
    double total = 0.0;
    for (Eigen::Index i = 0; i < mu_q.size(); ++i) {
        if (!(var_q[i] > 0.0) || !(var_p[i] > 0.0))
            throw DomainError("kl_diag_gaussians: variances must be positive");
        const double diff = mu_q[i] - mu_p[i];
        const double ratio = var_q[i] / var_p[i];
        total += 0.5 * (ratio + diff * diff / var_p[i] - 1.0 - std::log(ratio));
    }
    return total;
}

KlGrad kl_diag_gaussians_grad(const Vector &mu_q, const Vector &var_q, const Vector &mu_p, const Vector &var_p) {
    check_same_size(mu_q, var_q, "kl_diag_gaussians_grad");
    check_same_size(mu_q, mu_p, "kl_diag_gaussians_grad");
    check_same_size(mu_q, var_p, "kl_diag_gaussians_grad");
    KlGrad g{Vector(mu_q.size()), Vector(mu_q.size())};
    for (Eigen::Index i = 0; i < mu_q.size(); ++i) {
        if (!(var_q[i] > 0.0) || !(var_p[i] > 0.0))
            throw DomainError("kl_diag_gaussians_grad: variances must be positive");
        g.mu_q[i] = (mu_q[i] - mu_p[i]) / var_p[i];
        g.var_q[i] = 0.5 * (1.0 / var_p[i] - 1.0 / var_q[i]);
    }
    return g;
}

double mse(const Vector &pred, const Vector &target) {
    check_same_size(pred, target, "mse");
    if (pred.size() == 0)
        throw InvalidInputError("mse of an empty vector");
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

Vector mse_grad(const Vector &pred, const Vector &target) {
    check_same_size(pred, target, "mse_grad");
    if (pred.size() == 0)
        throw InvalidInputError("mse of an empty vector");
    return 2.0 * (pred - target) / static_cast<double>(pred.size());
}

OptimizerState OptimizerState::for_params(std::size_t n, AdamConfig config) {
    OptimizerState s;
    s.config = config;
    s.first_moment = Vector::Zero(static_cast<Eigen::Index>(n));
    s.second_moment = Vector::Zero(static_cast<Eigen::Index>(n));
    return s;
}

void optimizer_step(OptimizerState &state, Vector &params, const Vector &grads) {
    if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size())
        throw ShapeError("optimizer_step: parameter, gradient and accumulator sizes differ");
    const auto &c = state.config;
    ++state.step;
    state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
    state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseProduct(grads);
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    params.array() -= c.learning_rate * (state.first_moment.array() / correction1) /
                      ((state.second_moment.array() / correction2).sqrt() + c.epsilon);
}

nlohmann::json to_json(const FeedForwardNet &net) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto &s = net.layers()[l];
        auto w = net.weights(l);
        auto b = net.bias(l);
        layers.push_back({{"in", s.in},
                          {"out", s.out},
                          {"activation", to_string(s.activation)},
                          {"weights", std::vector<double>(w.data(), w.data() + w.size())},
                          {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
    }
    return {{"version", kCheckpointVersion},
            {"input_dim", net.input_dim()},
            {"output_dim", net.output_dim()},
            {"layers", std::move(layers)}};
}

FeedForwardNet net_from_json(const nlohmann::json &j) {
    try {
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion)
            throw VersionError("network checkpoint version " + std::to_string(version) + " is not supported");
        std::vector<LayerShape> shapes;
        for (const auto &l : j.at("layers"))
            shapes.push_back({l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(),
                              activation_from_string(l.at("activation").get<std::string>())});
        FeedForwardNet net(shapes);
        std::size_t idx = 0;
        for (const auto &l : j.at("layers")) {
            auto w = l.at("weights").get<std::vector<double>>();
            auto b = l.at("bias").get<std::vector<double>>();
            auto wm = net.weights(idx);
            auto bm = net.bias(idx);
            if (w.size() != static_cast<std::size_t>(wm.size()) || b.size() != static_cast<std::size_t>(bm.size()))
                throw ShapeError("checkpoint layer " + std::to_string(idx) + " has wrong parameter count");
            std::copy(w.begin(), w.end(), wm.data());
            std::copy(b.begin(), b.end(), bm.data());
            ++idx;
        }
        return net;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(0, std::string("network checkpoint: ") + e.what());
    }
}

} // namespace nlos::nn
