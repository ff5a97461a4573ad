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

#include "nlos/estimator.hpp"

#include <algorithm>
#include <cmath>

#include "nlos/autodiff_nn.hpp"
#include "nlos/errors.hpp"

namespace nlos::estimator {

namespace {

sim::FeatureVector standardize(const NlosClassifier &clf, const sim::FeatureVector &f) {
    sim::FeatureVector out{};
    for (std::size_t i = 0; i < f.size(); ++i)
        out[i] = (f[i] - clf.feature_mean[i]) / clf.feature_std[i];
    return out;
}

} // namespace

NlosClassifier train_classifier(const data::Dataset &train, const ClassifierOptions &options) {
    if (train.empty())
        throw InvalidInputError("classifier training needs labeled samples");
    const auto n = train.size();
    std::vector<sim::FeatureVector> raw(n);
    std::vector<double> label(n);
    NlosClassifier clf;
    for (std::size_t i = 0; i < n; ++i) {
        raw[i] = sim::pdp_features(train.samples[i].pdp);
        label[i] = train.samples[i].condition == sim::Condition::Nlos ? 1.0 : 0.0;
        for (std::size_t k = 0; k < sim::kFeatureCount; ++k)
            clf.feature_mean[k] += raw[i][k] / static_cast<double>(n);
    }
    for (std::size_t k = 0; k < sim::kFeatureCount; ++k) {
        double ss = 0.0;
        for (const auto &f : raw)
            ss += (f[k] - clf.feature_mean[k]) * (f[k] - clf.feature_mean[k]);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        clf.feature_std[k] = sd > 0.0 ? sd : 1.0;
    }
    std::vector<sim::FeatureVector> x(n);
    for (std::size_t i = 0; i < n; ++i)
        x[i] = standardize(clf, raw[i]);

    for (std::size_t it = 0; it < options.iterations; ++it) {
        sim::FeatureVector gw{};
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double logit = clf.bias;
            for (std::size_t k = 0; k < sim::kFeatureCount; ++k)
                logit += clf.weights[k] * x[i][k];
            const double err = nn::sigmoid(logit) - label[i];
            for (std::size_t k = 0; k < sim::kFeatureCount; ++k)
                gw[k] += err * x[i][k];
            gb += err;
        }
        for (std::size_t k = 0; k < sim::kFeatureCount; ++k)
            clf.weights[k] -= options.learning_rate * (gw[k] / static_cast<double>(n) + options.l2 * clf.weights[k]);
        clf.bias -= options.learning_rate * gb / static_cast<double>(n);
    }
    clf.trained = true;
    clf.calibration_note = "logistic regression on standardized PDP features; probabilities not recalibrated";
    return clf;
}

double classify_nlos(const NlosClassifier &clf, const sim::FeatureVector &features) {
    if (!clf.trained)
        throw StateError("NLOS classifier is not trained");
    const auto x = standardize(clf, features);
    double logit = clf.bias;
    for (std::size_t k = 0; k < sim::kFeatureCount; ++k)
        logit += clf.weights[k] * x[k];
    // Keep the output inside the open interval even when the logit saturates.
    constexpr double eps = 1e-15;
    return std::clamp(nn::sigmoid(logit), eps, 1.0 - eps);
}

double classify_nlos(const NlosClassifier &clf, const sim::PowerDelayProfile &pdp) {
    return classify_nlos(clf, sim::pdp_features(pdp));
}

double accuracy(const NlosClassifier &clf, const data::Dataset &ds) {
    if (ds.empty())
        throw InvalidInputError("accuracy of an empty dataset");
    std::size_t hits = 0;
    for (const auto &s : ds.samples) {
        const bool predicted = classify_nlos(clf, s.pdp) >= 0.5;
        hits += predicted == (s.condition == sim::Condition::Nlos);
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

double mmse_range(double d_bar, double p_nlos, double mean_bias) { return d_bar - p_nlos * mean_bias; }

nlohmann::json to_json(const NlosClassifier &clf) {
    return {{"format", "nlos-classifier"},
            {"version", 1},
            {"weights", clf.weights},
            {"bias", clf.bias},
            {"feature_mean", clf.feature_mean},
            {"feature_std", clf.feature_std},
            {"calibration_note", clf.calibration_note}};
}

NlosClassifier classifier_from_json(const nlohmann::json &j) {
    try {
        if (j.at("version").get<int>() != 1)
            throw VersionError("unsupported classifier checkpoint version");
        NlosClassifier clf;
        clf.weights = j.at("weights").get<std::array<double, sim::kFeatureCount>>();
        clf.bias = j.at("bias").get<double>();
        clf.feature_mean = j.at("feature_mean").get<std::array<double, sim::kFeatureCount>>();
        clf.feature_std = j.at("feature_std").get<std::array<double, sim::kFeatureCount>>();
        clf.calibration_note = j.at("calibration_note").get<std::string>();
        clf.trained = true;
        return clf;
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(0, std::string("classifier checkpoint: ") + e.what());
    }
}

} // namespace nlos::estimator
