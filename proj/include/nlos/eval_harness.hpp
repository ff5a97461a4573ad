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

#ifndef NLOS_EVAL_HARNESS_HPP
#define NLOS_EVAL_HARNESS_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlos/baselines.hpp"
#include "nlos/dataset_io.hpp"
#include "nlos/estimator.hpp"
#include "nlos/npr.hpp"

namespace nlos::eval {

/// Linear interpolation between order statistics of |errors| at position q * (n - 1).
double percentile(std::span<const double> errors, double q);

struct CdfPoint {
    double quantile = 0.0;
    double error_m = 0.0;
};

/// Error values at `points` evenly spaced quantiles from 0 to 1 inclusive.
std::vector<CdfPoint> cdf_curve(std::span<const double> errors, std::size_t points = 200);

struct EvalReport {
    std::string technique;
    std::vector<double> errors; // |d_hat - d| per sample, meters
    double p10 = 0.0;
    double p50 = 0.0;
    double p90 = 0.0;
    double online_time_ms = 0.0; // median prediction time plus amortized adaptation cost
    double adaptation_ms = 0.0;  // total adaptation wall time, 0 when none
    std::size_t adaptation_accepted = 0;
    double improvement_vs_baseline = 0.0; // 1 - p50 / p50(unmitigated)
    std::vector<std::string> train_scenarios;
    std::string test_scenario;
    std::vector<CdfPoint> cdf;
};

enum class ProbabilitySource { Classifier, KnownLabels };

/// A mitigator: maps a sample to its estimated mean bias E[g(r)].
/// Only the PDP and scenario id may be consulted, except by the test-only oracle.
struct Technique {
    std::string name;
    std::function<double(const sim::RangingSample &)> mean_bias;
    bool ready = true;
    double adaptation_ms = 0.0;
    std::size_t adaptation_accepted = 0;
};

Technique identity_technique();
Technique oracle_technique(); // fed the true bias; for bounds checks only
Technique npr_technique(const npr::NprModel &model, std::string name = "npr");
/// NPR with latent statistics chosen by scenario id; unknown ids use the model's own stats.
Technique npr_technique(const npr::NprModel &model, std::map<std::string, npr::LatentStats> per_scenario,
                        std::string name = "npr");
Technique gpr_technique(const baselines::GprModel &model);
Technique mlp_technique(const baselines::MlpModel &model, std::string name = "mlp");

struct EvalOptions {
    ProbabilitySource source = ProbabilitySource::Classifier;
    bool nlos_only = true;
    std::size_t timing_runs = 100;
    std::size_t warmup_runs = 10;
    std::vector<std::string> train_scenarios;
};

/// Applies the two-stage estimator for each technique over `test`.
/// Throws StateError naming the first technique that is not ready.
std::vector<EvalReport> run_offline_eval(std::span<const Technique> techniques, const data::Dataset &test,
                                         const estimator::NlosClassifier &classifier, const EvalOptions &options);

struct ModelBundle {
    estimator::NlosClassifier classifier;
    npr::NprModel npr;
    baselines::GprModel gpr;
    baselines::MlpModel mlp;
};

struct OnlineOptions {
    std::size_t adaptation_size = 500;
    double threshold = 0.2;
    bool reset_on_first_accept = true; // start the unseen scenario's statistics from its first accepted update
    baselines::MlpOptions retrain;     // budget of the retrained MLP row
    EvalOptions eval;
};

/// Cross-scenario run: NPR adapts its statistics on the first `adaptation_size` samples of
/// `adaptation_stream`; mlp-retrained fits the labeled NLOS samples among them; the rest stay frozen.
/// Throws ProtocolError when the unseen data shares a scenario id with the training list.
std::vector<EvalReport> run_online_eval(std::span<const std::string> techniques, const ModelBundle &models,
                                        const data::Dataset &adaptation_stream, const data::Dataset &test,
                                        const OnlineOptions &options);

inline const std::vector<std::string> kTechniqueNames{"identity", "npr", "gpr", "mlp", "mlp-retrained"};

// Train / validation / test partition shared by the CLI and the acceptance runs.
struct ScenarioSplits {
    data::Dataset train;
    data::Dataset val;
    data::Dataset test;
};

/// 80/20 train/test, then 90/10 of the training part for validation; seeds derive from `seed` and the id.
ScenarioSplits protocol_split(const data::Dataset &ds, const std::string &scenario_id, std::uint64_t seed);

struct BundleOptions {
    std::uint64_t seed = 1;
    std::size_t epochs = 100;
    npr::NprConfig npr;
    npr::HeadOptions head;
    baselines::GprSearchOptions gpr;
    baselines::MlpOptions mlp;
    estimator::ClassifierOptions classifier;
};

struct BundleTraces {
    npr::TrainingTrace encoder;
    npr::HeadTrace head;
};

ModelBundle train_bundle(const data::Dataset &train, const data::Dataset &val, const BundleOptions &options,
                         BundleTraces *traces = nullptr);

/// Per-scenario latent statistics from the NLOS samples of each scenario in `train`.
std::map<std::string, npr::LatentStats> scenario_statistics(const npr::NprModel &model, const data::Dataset &train);

struct ScalingRow {
    std::size_t n = 0;
    double aggregate_ms = 0.0; // one aggregate() over n latents
    double gpr_fit_ms = 0.0;   // one gpr_fit() over n feature rows
};

struct ScalingOptions {
    std::vector<std::size_t> sizes{100, 200, 400, 800, 1600};
    std::size_t aggregate_batch = 200; // calls timed together per measurement
    std::size_t aggregate_reps = 21;   // measurements, median kept
    std::size_t gpr_reps = 3;          // fits, median kept
    std::uint64_t seed = 1;
};

/// Times latent aggregation and exact GP fitting on data from a default scenario.
/// Latents come from `model`'s encoder over the generated samples.
std::vector<ScalingRow> measure_scaling(const npr::NprModel &model, const ScalingOptions &options);

/// Coefficient of determination of the least-squares line y = a + b x.
double linear_r2(std::span<const double> x, std::span<const double> y);

void write_scaling_csv(std::span<const ScalingRow> rows, const std::filesystem::path &path);

nlohmann::json to_json(const EvalReport &report);
void write_json(std::span<const EvalReport> reports, const std::filesystem::path &path);
void write_csv(std::span<const EvalReport> reports, const std::filesystem::path &path);
void write_cdf_csv(std::span<const EvalReport> reports, const std::filesystem::path &path);

} // namespace nlos::eval

#endif // NLOS_EVAL_HARNESS_HPP
