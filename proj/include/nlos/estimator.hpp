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

#ifndef NLOS_ESTIMATOR_HPP
#define NLOS_ESTIMATOR_HPP

#include <array>
#include <cstddef>
#include <string>

#include <json.hpp>

#include "nlos/channel_sim.hpp"
#include "nlos/dataset_io.hpp"

namespace nlos::estimator {

// Logistic NLOS identification over the six standardized PDP features.
struct NlosClassifier {
    std::array<double, sim::kFeatureCount> weights{};
    double bias = 0.0;
    std::array<double, sim::kFeatureCount> feature_mean{};
    std::array<double, sim::kFeatureCount> feature_std{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    bool trained = false;
    std::string calibration_note;
};

struct ClassifierOptions {
    std::size_t iterations = 3000;
    double learning_rate = 0.5;
    double l2 = 1e-4;
};

// Full-batch gradient descent on the mean logistic loss of labeled samples.
NlosClassifier train_classifier(const data::Dataset &train, const ClassifierOptions &options = {});

double classify_nlos(const NlosClassifier &clf, const sim::FeatureVector &features);
double classify_nlos(const NlosClassifier &clf, const sim::PowerDelayProfile &pdp);

// Fraction of samples whose thresholded (0.5) prediction matches the label.
double accuracy(const NlosClassifier &clf, const data::Dataset &ds);

// d_hat = d_bar - p_nlos * mean_bias.
double mmse_range(double d_bar, double p_nlos, double mean_bias);

nlohmann::json to_json(const NlosClassifier &clf);
NlosClassifier classifier_from_json(const nlohmann::json &j);

} // namespace nlos::estimator

#endif // NLOS_ESTIMATOR_HPP
