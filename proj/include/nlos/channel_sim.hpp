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

#ifndef NLOS_CHANNEL_SIM_HPP
#define NLOS_CHANNEL_SIM_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace nlos::sim {

inline constexpr double kSpeedOfLight = 299792458.0; // m/s

enum class Condition { Los, Nlos };

std::string to_string(Condition c);
Condition condition_from_string(const std::string &s);

// Per-path powers (linear) and delays (seconds) of a measured channel.
struct PowerDelayProfile {
    std::vector<double> powers;
    std::vector<double> delays;

    std::size_t size() const noexcept { return powers.size(); }
    bool operator==(const PowerDelayProfile &) const = default;
};

// Throws InvalidInputError when the profile breaks its invariants
// (equal lengths >= 1, strictly increasing delays, nonnegative powers).
void validate(const PowerDelayProfile &pdp);

// How the first path of an NLOS profile is obstructed.
enum class BlockingModel {
    Attenuate, // first-path power scaled by U[0, max_blocking_attenuation]
    Remove,    // no obstructed component survives; profile starts at the first reflection
};

struct IntRange {
    int min = 0;
    int max = 0;
    bool operator==(const IntRange &) const = default;
};

struct Interval {
    double min = 0.0;
    double max = 0.0;
    bool operator==(const Interval &) const = default;
};

struct ScenarioConfig {
    std::string scenario_id = "default";
    double nlos_probability = 0.5;
    IntRange path_count_range{4, 12};    // paths in the reflected cluster
    double decay_constant = 5e-9;        // s, exponential power decay
    double mean_inter_arrival = 1.5e-9;  // s, mean gap between cluster paths
    double power_jitter_db = 2.0;        // lognormal jitter on cluster powers
    double cluster_power = 0.4;          // mean power of the first cluster path (direct path = 1)
    double alpha = 0.3;                  // bias weight on RMS delay spread * c
    double beta = 0.2;                   // bias weight on (tau1 - tau0) * c
    double bias_noise_std = 0.05;        // m
    double sigma_los = 0.05;             // m
    double sigma_nlos = 0.15;            // m
    double bandwidth_hz = 400e6;
    Interval distance_range{5.0, 100.0}; // m
    BlockingModel blocking = BlockingModel::Remove;
    double max_blocking_attenuation = 0.1;
    bool quantize = false;               // snap delays to 1/bandwidth bins on emission
    std::uint64_t rng_seed = 1;

    bool operator==(const ScenarioConfig &) const = default;
};

// Throws ConfigError naming the first offending field.
void validate(const ScenarioConfig &config);

// Parses `name = value` lines ('#' starts a comment). Unknown names and bad values
// raise ConfigError; syntax errors raise ParseError with the line number.
ScenarioConfig parse_scenario_config(const std::string &text);
ScenarioConfig load_scenario_config(const std::filesystem::path &path);
std::string format_scenario_config(const ScenarioConfig &config);

struct RangingSample {
    PowerDelayProfile pdp;
    double true_distance_m = 0.0;
    double estimated_distance_m = 0.0; // c * tau0
    double delta_d_m = 0.0;            // estimated - true
    Condition condition = Condition::Los;
    std::string scenario_id;

    bool operator==(const RangingSample &) const = default;
};

// Standard deviation of one uniformly quantized delay bin, in meters.
double quantization_noise_std(double bandwidth_hz);

// Synthesizes n_samples labeled measurements. Output depends only on (config, n_samples).
//
// Every sample draws a reflected cluster (exponential inter-arrival gaps, exponentially
// decaying power with lognormal jitter). The scenario's excess-delay law
//     g(r) = alpha * c * rms_delay_spread(r) + beta * c * (tau1 - tau0) + eps
// fixes both the NLOS ranging bias (evaluated on the emitted NLOS profile) and, in LOS,
// the excess delay of the cluster behind the direct path (evaluated on the cluster alone).
// A LOS profile with its first path stripped therefore obeys the same law as an NLOS one.
std::vector<RangingSample> generate_scenario(const ScenarioConfig &config, std::size_t n_samples);

// Bias law evaluated on a profile without noise.
double excess_delay_law(const ScenarioConfig &config, const PowerDelayProfile &pdp);

// Snaps delays down to multiples of 1/bandwidth_hz and merges same-bin paths by summing power.
PowerDelayProfile quantize_delays(const PowerDelayProfile &pdp, double bandwidth_hz);

inline constexpr std::size_t kFeatureCount = 6;
using FeatureVector = std::array<double, kFeatureCount>;

enum Feature : std::size_t {
    kTotalPower = 0,
    kFirstPathRatio = 1,
    kRmsDelaySpread = 2, // s
    kMeanExcessDelay = 3, // s, relative to the first path
    kPowerKurtosis = 4,   // kurtosis of the per-path power values, 0 when undefined
    kPathCount = 5,
};

FeatureVector pdp_features(const PowerDelayProfile &pdp);

// Default six-scenario catalog; the last entry is the held-out environment.
std::vector<ScenarioConfig> default_scenarios(std::uint64_t seed);

} // namespace nlos::sim

#endif // NLOS_CHANNEL_SIM_HPP
