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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "nlos/channel_sim.hpp"
#include "nlos/errors.hpp"

using namespace nlos;
using namespace nlos::sim;

namespace {

ScenarioConfig base_config(std::uint64_t seed = 11) {
    ScenarioConfig c;
    c.scenario_id = "unit";
    c.rng_seed = seed;
    return c;
}

struct Moments {
    double mean = 0.0;
    double var = 0.0;
    std::size_t n = 0;
};

Moments moments(const std::vector<double> &v) {
    Moments m;
    m.n = v.size();
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(m.n);
    for (double x : v)
        m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(m.n - 1);
    return m;
}

// Written from the textbook definitions with absolute delays, independent of pdp_features.
double oracle_rms_spread(const std::vector<double> &p, const std::vector<double> &t) {
    double sp = 0.0, s1 = 0.0, s2 = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        sp += p[k];
        s1 += p[k] * t[k];
        s2 += p[k] * t[k] * t[k];
    }
    const double mean = s1 / sp;
    return std::sqrt(std::max(0.0, s2 / sp - mean * mean));
}

} // namespace

TEST_CASE("all-LOS scenario emits only noise-level range errors") {
    auto c = base_config();
    c.nlos_probability = 0.0;
    const auto samples = generate_scenario(c, 5000);
    std::vector<double> dd;
    for (const auto &s : samples) {
        CHECK(s.condition == Condition::Los);
        dd.push_back(s.delta_d_m);
    }
    const auto m = moments(dd);
    CHECK(std::abs(m.mean) < 4.0 * c.sigma_los / std::sqrt(static_cast<double>(m.n)));
    CHECK(std::sqrt(m.var) == doctest::Approx(c.sigma_los).epsilon(0.05));
}

TEST_CASE("noise-free NLOS bias equals the excess-delay law per sample") {
    auto c = base_config();
    c.nlos_probability = 1.0;
    c.bias_noise_std = 1e-300;
    c.sigma_nlos = 1e-300;
    c.alpha = 0.5;
    c.beta = 0.2;
    for (const auto &s : generate_scenario(c, 500)) {
        REQUIRE(s.condition == Condition::Nlos);
        const double rms = oracle_rms_spread(s.pdp.powers, s.pdp.delays);
        const double law = c.alpha * rms * kSpeedOfLight + c.beta * (s.pdp.delays[1] - s.pdp.delays[0]) * kSpeedOfLight;
        CHECK(s.delta_d_m == doctest::Approx(law).epsilon(1e-9).scale(1.0));
    }
}

TEST_CASE("NLOS mean bias matches an independent Monte-Carlo oracle of the path process") {
    auto c = base_config(21);
    c.nlos_probability = 1.0;
    c.alpha = 0.5;
    c.beta = 0.2;
    std::vector<double> emitted;
    for (const auto &s : generate_scenario(c, 10000))
        emitted.push_back(s.delta_d_m);

    // Cluster: uniform path count, exponential gaps, exponential mean power with lognormal jitter.
    std::mt19937 rng(4242);
    std::uniform_int_distribution<int> count(c.path_count_range.min, c.path_count_range.max);
    std::exponential_distribution<double> gap(1.0 / c.mean_inter_arrival);
    std::normal_distribution<double> jitter_db(0.0, c.power_jitter_db);
    std::vector<double> oracle;
    for (int i = 0; i < 100000; ++i) {
        const int k = count(rng);
        std::vector<double> p, t;
        double at = 0.0;
        for (int j = 0; j < k; ++j) {
            if (j)
                at += gap(rng);
            t.push_back(at);
            p.push_back(c.cluster_power * std::exp(-at / c.decay_constant) * std::pow(10.0, jitter_db(rng) / 10.0));
        }
        oracle.push_back(c.alpha * oracle_rms_spread(p, t) * kSpeedOfLight + c.beta * t[1] * kSpeedOfLight);
    }
    const auto a = moments(emitted);
    const auto b = moments(oracle);
    const double se = std::sqrt(a.var / static_cast<double>(a.n) + b.var / static_cast<double>(b.n));
    CHECK(std::abs(a.mean - b.mean) < 3.0 * se);
}

TEST_CASE("generation is deterministic and labels are exactly consistent") {
    const auto c = base_config(5);
    const auto a = generate_scenario(c, 300);
    const auto b = generate_scenario(c, 300);
    CHECK(a == b);
    auto c2 = c;
    c2.rng_seed = 6;
    CHECK_FALSE(a == generate_scenario(c2, 300));
    for (const auto &s : a) {
        CHECK(s.delta_d_m - (s.estimated_distance_m - s.true_distance_m) == 0.0);
        CHECK(s.estimated_distance_m == s.true_distance_m + s.delta_d_m);
        CHECK_NOTHROW(validate(s.pdp));
        CHECK(s.true_distance_m >= c.distance_range.min);
        CHECK(s.true_distance_m <= c.distance_range.max);
        CHECK(s.pdp.delays[0] * kSpeedOfLight == doctest::Approx(s.estimated_distance_m).epsilon(1e-12));
    }
}

TEST_CASE("LOS errors are unbiased and NLOS errors are positively biased") {
    auto c = base_config(8);
    c.nlos_probability = 0.5;
    const auto samples = generate_scenario(c, 24000);
    std::vector<double> los, nlos;
    for (const auto &s : samples)
        (s.condition == Condition::Los ? los : nlos).push_back(s.delta_d_m);
    REQUIRE(los.size() >= 10000);
    const auto ml = moments(los);
    CHECK(std::abs(ml.mean) < 4.0 * c.sigma_los / std::sqrt(static_cast<double>(ml.n)));
    CHECK(moments(nlos).mean > ml.mean);
}

TEST_CASE("attenuate blocking keeps a weakened direct path") {
    auto c = base_config(9);
    c.nlos_probability = 1.0;
    c.blocking = BlockingModel::Attenuate;
    c.max_blocking_attenuation = 0.1;
    for (const auto &s : generate_scenario(c, 200))
        CHECK(s.pdp.powers[0] <= 0.1 * c.cluster_power * std::pow(10.0, 6.0 * c.power_jitter_db / 10.0));
}

TEST_CASE("invalid configurations name the offending field") {
    auto expect_field = [](ScenarioConfig c, const std::string &field) {
        try {
            generate_scenario(c, 1);
            FAIL("expected a configuration error for " << field);
        } catch (const ConfigError &e) {
            CHECK(e.field() == field);
        }
    };
    auto c = base_config();
    c.nlos_probability = 1.5;
    expect_field(c, "nlos_probability");
    c = base_config();
    c.sigma_los = 0.0;
    expect_field(c, "sigma_los");
    c = base_config();
    c.sigma_nlos = -1.0;
    expect_field(c, "sigma_nlos");
    c = base_config();
    c.bias_noise_std = 0.0;
    expect_field(c, "bias_noise_std");
    c = base_config();
    c.bandwidth_hz = 0.0;
    expect_field(c, "bandwidth_hz");
    c = base_config();
    c.path_count_range = {1, 4};
    expect_field(c, "path_count_range");
    CHECK_THROWS_AS(generate_scenario(base_config(), 0), InvalidInputError);
}

TEST_CASE("scenario configuration text round-trips") {
    auto c = base_config(77);
    c.scenario_id = "lab";
    c.alpha = 0.42;
    c.beta = 0.13;
    c.path_count_range = {3, 9};
    c.blocking = BlockingModel::Attenuate;
    c.quantize = true;
    CHECK(parse_scenario_config(format_scenario_config(c)) == c);

    const auto parsed = parse_scenario_config("# comment\nscenario_id = X\nnlos_probability = 1 # all blocked\n"
                                              "bias_coefficients = 0.5, 0.2\n");
    CHECK(parsed.scenario_id == "X");
    CHECK(parsed.nlos_probability == 1.0);
    CHECK(parsed.alpha == 0.5);
    CHECK(parsed.beta == 0.2);

    CHECK_THROWS_AS(parse_scenario_config("nlos_probability 0.3\n"), ParseError);
    CHECK_THROWS_AS(parse_scenario_config("nlos_probability = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_config("no_such_field = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_scenario_config("nlos_probability = 2\n"), ConfigError);
}

TEST_CASE("quantization noise default is one delay bin over sqrt(12)") {
    CHECK(quantization_noise_std(400e6) == doctest::Approx(kSpeedOfLight / 400e6 / std::sqrt(12.0)));
    CHECK(quantization_noise_std(400e6) == doctest::Approx(0.21637).epsilon(1e-4));
    CHECK_THROWS_AS(quantization_noise_std(0.0), DomainError);
}

TEST_CASE("quantize_delays snaps to the bin grid and merges shared bins") {
    SUBCASE("on-grid delay is kept") {
        const auto q = quantize_delays({{1.0}, {2.5e-9}}, 400e6);
        REQUIRE(q.size() == 1);
        CHECK(q.delays[0] == doctest::Approx(2.5e-9).epsilon(1e-12));
    }
    SUBCASE("two paths in one bin merge with summed power") {
        const auto q = quantize_delays({{0.3, 0.2}, {2.6e-9, 2.7e-9}}, 400e6);
        REQUIRE(q.size() == 1);
        CHECK(q.delays[0] == doctest::Approx(2.5e-9).epsilon(1e-12));
        CHECK(q.powers[0] == doctest::Approx(0.5));
    }
    SUBCASE("random profiles match per-path binning") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> gap(0.05e-9, 4e-9), pw(0.0, 1.0);
        const double bw = 400e6;
        for (int trial = 0; trial < 200; ++trial) {
            PowerDelayProfile p;
            double t = 20e-9 + gap(rng);
            for (int k = 0; k < 12; ++k) {
                p.powers.push_back(pw(rng));
                p.delays.push_back(t);
                t += gap(rng);
            }
            std::map<long long, double> bins;
            for (std::size_t k = 0; k < p.size(); ++k)
                bins[static_cast<long long>(std::floor(p.delays[k] * bw))] += p.powers[k];
            const auto q = quantize_delays(p, bw);
            REQUIRE(q.size() == bins.size());
            std::size_t i = 0;
            for (const auto &[idx, power] : bins) {
                CHECK(q.delays[i] == doctest::Approx(static_cast<double>(idx) / bw).epsilon(1e-12));
                CHECK(q.powers[i] == doctest::Approx(power).epsilon(1e-12));
                ++i;
            }
            CHECK_NOTHROW(validate(q));
        }
    }
}

TEST_CASE("quantized generation puts the estimate on the delay grid") {
    auto c = base_config(12);
    c.quantize = true;
    const double bin_m = kSpeedOfLight / c.bandwidth_hz;
    for (const auto &s : generate_scenario(c, 200)) {
        const double bins = s.estimated_distance_m / bin_m;
        CHECK(std::abs(bins - std::round(bins)) < 1e-6);
        CHECK(s.delta_d_m == s.estimated_distance_m - s.true_distance_m);
    }
}

TEST_CASE("pdp_features on closed-form profiles") {
    SUBCASE("single path") {
        const auto f = pdp_features({{2.0}, {10e-9}});
        CHECK(f[kRmsDelaySpread] == 0.0);
        CHECK(f[kFirstPathRatio] == 1.0);
        CHECK(f[kMeanExcessDelay] == 0.0);
        CHECK(f[kTotalPower] == 2.0);
        CHECK(f[kPathCount] == 1.0);
    }
    SUBCASE("two equal-power paths") {
        const double tau = 30e-9, delta = 8e-9;
        const auto f = pdp_features({{0.5, 0.5}, {tau, tau + delta}});
        CHECK(f[kMeanExcessDelay] == doctest::Approx(delta / 2).epsilon(1e-12));
        CHECK(f[kRmsDelaySpread] == doctest::Approx(delta / 2).epsilon(1e-9));
        CHECK(f[kFirstPathRatio] == doctest::Approx(0.5));
    }
}

TEST_CASE("pdp_features on random 10-path profiles match direct formulas") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        PowerDelayProfile p;
        double t = 10e-9;
        for (int k = 0; k < 10; ++k) {
            p.powers.push_back(0.01 + u(rng));
            p.delays.push_back(t);
            t += 0.1e-9 + 3e-9 * u(rng);
        }
        const auto f = pdp_features(p);
        double sp = 0.0, s1 = 0.0;
        for (std::size_t k = 0; k < 10; ++k) {
            sp += p.powers[k];
            s1 += p.powers[k] * p.delays[k];
        }
        const double mean_delay = s1 / sp;
        double mp = sp / 10.0, c2 = 0.0, c4 = 0.0;
        for (double x : p.powers) {
            c2 += std::pow(x - mp, 2) / 10.0;
            c4 += std::pow(x - mp, 4) / 10.0;
        }
        CHECK(f[kTotalPower] == doctest::Approx(sp).epsilon(1e-12));
        CHECK(f[kFirstPathRatio] == doctest::Approx(p.powers[0] / sp).epsilon(1e-12));
        CHECK(f[kMeanExcessDelay] == doctest::Approx(mean_delay - p.delays[0]).epsilon(1e-9));
        CHECK(f[kRmsDelaySpread] == doctest::Approx(oracle_rms_spread(p.powers, p.delays)).epsilon(1e-6));
        CHECK(f[kPowerKurtosis] == doctest::Approx(c4 / (c2 * c2)).epsilon(1e-9));
        CHECK(f[kPathCount] == 10.0);
    }
}

TEST_CASE("default catalog holds six valid scenarios with the held-out one last") {
    const auto cat = default_scenarios(1);
    REQUIRE(cat.size() == 6);
    CHECK(cat.back().scenario_id == "S6");
    for (const auto &c : cat)
        CHECK_NOTHROW(validate(c));
    CHECK(default_scenarios(1) == cat);
    CHECK_FALSE(default_scenarios(2)[0].rng_seed == cat[0].rng_seed);
}

TEST_CASE("PDP validation rejects malformed profiles") {
    CHECK_THROWS_AS(validate(PowerDelayProfile{{}, {}}), InvalidInputError);
    CHECK_THROWS_AS(validate(PowerDelayProfile{{1.0}, {1e-9, 2e-9}}), InvalidInputError);
    CHECK_THROWS_AS(validate(PowerDelayProfile{{1.0, 1.0}, {2e-9, 1e-9}}), InvalidInputError);
    CHECK_THROWS_AS(validate(PowerDelayProfile{{1.0, -1.0}, {1e-9, 2e-9}}), InvalidInputError);
    CHECK(to_string(Condition::Nlos) == "NLOS");
    CHECK(condition_from_string("LOS") == Condition::Los);
}
