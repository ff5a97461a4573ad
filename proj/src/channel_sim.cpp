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

#include "nlos/channel_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "nlos/errors.hpp"
#include "nlos/random.hpp"

namespace nlos::sim {

std::string to_string(Condition c) { return c == Condition::Los ? "LOS" : "NLOS"; }

Condition condition_from_string(const std::string &s) {
    if (s == "LOS")
        return Condition::Los;
    if (s == "NLOS")
        return Condition::Nlos;
    throw InvalidInputError("unknown propagation condition '" + s + "'");
}

void validate(const PowerDelayProfile &pdp) {
    if (pdp.powers.empty())
        throw InvalidInputError("power delay profile has no paths");
    if (pdp.powers.size() != pdp.delays.size())
        throw InvalidInputError("power delay profile: powers and delays differ in length");
    for (std::size_t k = 0; k < pdp.size(); ++k) {
        if (!(pdp.powers[k] >= 0.0) || !std::isfinite(pdp.powers[k]))
            throw InvalidInputError("power delay profile: negative or non-finite power at path " + std::to_string(k));
        if (!(pdp.delays[k] >= 0.0) || !std::isfinite(pdp.delays[k]))
            throw InvalidInputError("power delay profile: negative or non-finite delay at path " + std::to_string(k));
        if (k > 0 && !(pdp.delays[k] > pdp.delays[k - 1]))
            throw InvalidInputError("power delay profile: delays not strictly increasing at path " + std::to_string(k));
    }
}

void validate(const ScenarioConfig &c) {
    auto require = [](bool ok, const char *field, const char *what) {
        if (!ok)
            throw ConfigError(field, what);
    };
    require(!c.scenario_id.empty(), "scenario_id", "must not be empty");
    require(c.nlos_probability >= 0.0 && c.nlos_probability <= 1.0, "nlos_probability", "must lie in [0, 1]");
    require(c.path_count_range.min >= 2, "path_count_range", "minimum must be at least 2");
    require(c.path_count_range.max >= c.path_count_range.min, "path_count_range", "maximum below minimum");
    require(c.decay_constant > 0.0 && std::isfinite(c.decay_constant), "decay_constant", "must be positive");
    require(c.mean_inter_arrival > 0.0 && std::isfinite(c.mean_inter_arrival), "mean_inter_arrival", "must be positive");
    require(c.power_jitter_db >= 0.0 && std::isfinite(c.power_jitter_db), "power_jitter_db", "must be nonnegative");
    require(c.cluster_power > 0.0 && std::isfinite(c.cluster_power), "cluster_power", "must be positive");
    require(std::isfinite(c.alpha), "alpha", "must be finite");
    require(std::isfinite(c.beta), "beta", "must be finite");
    require(c.bias_noise_std > 0.0 && std::isfinite(c.bias_noise_std), "bias_noise_std", "must be positive");
    require(c.sigma_los > 0.0 && std::isfinite(c.sigma_los), "sigma_los", "must be positive");
    require(c.sigma_nlos > 0.0 && std::isfinite(c.sigma_nlos), "sigma_nlos", "must be positive");
    require(c.bandwidth_hz > 0.0 && std::isfinite(c.bandwidth_hz), "bandwidth_hz", "must be positive");
    require(c.distance_range.min >= 0.0 && c.distance_range.max >= c.distance_range.min &&
                std::isfinite(c.distance_range.max),
            "distance_range", "must be a nonnegative, ordered interval");
    require(c.max_blocking_attenuation >= 0.0 && c.max_blocking_attenuation <= 1.0, "max_blocking_attenuation",
            "must lie in [0, 1]");
}

namespace {

std::string trim(std::string s) {
    auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

double parse_double(const std::string &field, const std::string &value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception &) {
        throw ConfigError(field, "expected a number, got '" + value + "'");
    }
    if (used != value.size())
        throw ConfigError(field, "expected a number, got '" + value + "'");
    return v;
}

long long parse_integer(const std::string &field, const std::string &value) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &used);
    } catch (const std::exception &) {
        throw ConfigError(field, "expected an integer, got '" + value + "'");
    }
    if (used != value.size())
        throw ConfigError(field, "expected an integer, got '" + value + "'");
    return v;
}

std::pair<std::string, std::string> split_pair(const std::string &field, const std::string &value) {
    auto comma = value.find(',');
    if (comma == std::string::npos)
        throw ConfigError(field, "expected two comma-separated values");
    return {trim(value.substr(0, comma)), trim(value.substr(comma + 1))};
}

void assign(ScenarioConfig &c, const std::string &name, const std::string &value) {
    if (name == "scenario_id") {
        c.scenario_id = value;
    } else if (name == "nlos_probability") {
        c.nlos_probability = parse_double(name, value);
    } else if (name == "path_count_range") {
        auto [lo, hi] = split_pair(name, value);
        c.path_count_range = {static_cast<int>(parse_integer(name, lo)), static_cast<int>(parse_integer(name, hi))};
    } else if (name == "decay_constant") {
        c.decay_constant = parse_double(name, value);
    } else if (name == "mean_inter_arrival") {
        c.mean_inter_arrival = parse_double(name, value);
    } else if (name == "power_jitter_db") {
        c.power_jitter_db = parse_double(name, value);
    } else if (name == "cluster_power") {
        c.cluster_power = parse_double(name, value);
    } else if (name == "bias_coefficients") {
        auto [a, b] = split_pair(name, value);
        c.alpha = parse_double(name, a);
        c.beta = parse_double(name, b);
    } else if (name == "alpha") {
        c.alpha = parse_double(name, value);
    } else if (name == "beta") {
        c.beta = parse_double(name, value);
    } else if (name == "bias_noise_std") {
        c.bias_noise_std = parse_double(name, value);
    } else if (name == "sigma_los") {
        c.sigma_los = parse_double(name, value);
    } else if (name == "sigma_nlos") {
        c.sigma_nlos = parse_double(name, value);
    } else if (name == "bandwidth_hz") {
        c.bandwidth_hz = parse_double(name, value);
    } else if (name == "distance_range") {
        auto [lo, hi] = split_pair(name, value);
        c.distance_range = {parse_double(name, lo), parse_double(name, hi)};
    } else if (name == "blocking_model") {
        if (value == "attenuate")
            c.blocking = BlockingModel::Attenuate;
        else if (value == "remove")
            c.blocking = BlockingModel::Remove;
        else
            throw ConfigError(name, "expected 'attenuate' or 'remove', got '" + value + "'");
    } else if (name == "max_blocking_attenuation") {
        c.max_blocking_attenuation = parse_double(name, value);
    } else if (name == "quantize") {
        if (value == "true" || value == "1")
            c.quantize = true;
        else if (value == "false" || value == "0")
            c.quantize = false;
        else
            throw ConfigError(name, "expected true/false, got '" + value + "'");
    } else if (name == "rng_seed") {
        auto v = parse_integer(name, value);
        if (v < 0)
            throw ConfigError(name, "must be nonnegative");
        c.rng_seed = static_cast<std::uint64_t>(v);
    } else {
        throw ConfigError(name, "unknown field");
    }
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

ScenarioConfig parse_scenario_config(const std::string &text) {
    ScenarioConfig config;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(line_no, "expected 'name = value'");
        auto name = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (name.empty() || value.empty())
            throw ParseError(line_no, "expected 'name = value'");
        assign(config, name, value);
    }
    validate(config);
    return config;
}

ScenarioConfig load_scenario_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open scenario config '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario_config(buf.str());
}

std::string format_scenario_config(const ScenarioConfig &c) {
    std::ostringstream os;
    os << "scenario_id = " << c.scenario_id << '\n'
       << "nlos_probability = " << fmt_double(c.nlos_probability) << '\n'
       << "path_count_range = " << c.path_count_range.min << ", " << c.path_count_range.max << '\n'
       << "decay_constant = " << fmt_double(c.decay_constant) << '\n'
       << "mean_inter_arrival = " << fmt_double(c.mean_inter_arrival) << '\n'
       << "power_jitter_db = " << fmt_double(c.power_jitter_db) << '\n'
       << "cluster_power = " << fmt_double(c.cluster_power) << '\n'
       << "bias_coefficients = " << fmt_double(c.alpha) << ", " << fmt_double(c.beta) << '\n'
       << "bias_noise_std = " << fmt_double(c.bias_noise_std) << '\n'
       << "sigma_los = " << fmt_double(c.sigma_los) << '\n'
       << "sigma_nlos = " << fmt_double(c.sigma_nlos) << '\n'
       << "bandwidth_hz = " << fmt_double(c.bandwidth_hz) << '\n'
       << "distance_range = " << fmt_double(c.distance_range.min) << ", " << fmt_double(c.distance_range.max) << '\n'
       << "blocking_model = " << (c.blocking == BlockingModel::Attenuate ? "attenuate" : "remove") << '\n'
       << "max_blocking_attenuation = " << fmt_double(c.max_blocking_attenuation) << '\n'
       << "quantize = " << (c.quantize ? "true" : "false") << '\n'
       << "rng_seed = " << c.rng_seed << '\n';
    return os.str();
}

double quantization_noise_std(double bandwidth_hz) {
    if (!(bandwidth_hz > 0.0))
        throw DomainError("bandwidth must be positive");
    return (kSpeedOfLight / bandwidth_hz) / std::sqrt(12.0);
}

FeatureVector pdp_features(const PowerDelayProfile &pdp) {
    FeatureVector f{};
    const auto n = pdp.size();
    f[kPathCount] = static_cast<double>(n);
    if (n == 0)
        return f;

    double total = 0.0;
    for (double p : pdp.powers)
        total += p;
    f[kTotalPower] = total;
    if (total > 0.0) {
        f[kFirstPathRatio] = pdp.powers[0] / total;
        double mean_excess = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            mean_excess += pdp.powers[k] * (pdp.delays[k] - pdp.delays[0]);
        mean_excess /= total;
        double second = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double dev = pdp.delays[k] - pdp.delays[0] - mean_excess;
            second += pdp.powers[k] * dev * dev;
        }
        f[kMeanExcessDelay] = mean_excess;
        f[kRmsDelaySpread] = std::sqrt(second / total);
    }

    const double mean_power = total / static_cast<double>(n);
    double m2 = 0.0;
    double m4 = 0.0;
    for (double p : pdp.powers) {
        const double dev2 = (p - mean_power) * (p - mean_power);
        m2 += dev2;
        m4 += dev2 * dev2;
    }
    m2 /= static_cast<double>(n);
    m4 /= static_cast<double>(n);
    f[kPowerKurtosis] = m2 > 0.0 ? m4 / (m2 * m2) : 0.0;
    return f;
}

double excess_delay_law(const ScenarioConfig &config, const PowerDelayProfile &pdp) {
    const auto features = pdp_features(pdp);
    const double gap = pdp.size() >= 2 ? pdp.delays[1] - pdp.delays[0] : 0.0;
    return config.alpha * features[kRmsDelaySpread] * kSpeedOfLight + config.beta * gap * kSpeedOfLight;
}

PowerDelayProfile quantize_delays(const PowerDelayProfile &pdp, double bandwidth_hz) {
    if (!(bandwidth_hz > 0.0))
        throw DomainError("bandwidth must be positive");
    const double bin = 1.0 / bandwidth_hz;
    PowerDelayProfile out;
    long long last_bin = 0;
    for (std::size_t k = 0; k < pdp.size(); ++k) {
        // Small relative slack so delays that sit on a bin edge are not pushed down by rounding.
        const auto idx = static_cast<long long>(std::floor(pdp.delays[k] / bin * (1.0 + 1e-12)));
        if (!out.delays.empty() && idx == last_bin) {
            out.powers.back() += pdp.powers[k];
        } else {
            out.powers.push_back(pdp.powers[k]);
            out.delays.push_back(static_cast<double>(idx) * bin);
            last_bin = idx;
        }
    }
    return out;
}

namespace {

struct Cluster {
    std::vector<double> powers;
    std::vector<double> offsets; // s, relative to the first cluster path
};

Cluster draw_cluster(const ScenarioConfig &c, Rng &rng) {
    std::uniform_int_distribution<int> count(c.path_count_range.min, c.path_count_range.max);
    std::exponential_distribution<double> gap(1.0 / c.mean_inter_arrival);
    std::normal_distribution<double> jitter(0.0, c.power_jitter_db);

    Cluster cl;
    const int k_paths = count(rng);
    double offset = 0.0;
    for (int k = 0; k < k_paths; ++k) {
        if (k > 0)
            offset += std::max(gap(rng), 1e-15);
        cl.offsets.push_back(offset);
        const double mean_power = c.cluster_power * std::exp(-offset / c.decay_constant);
        cl.powers.push_back(mean_power * std::pow(10.0, jitter(rng) / 10.0));
    }
    return cl;
}

} // namespace

std::vector<RangingSample> generate_scenario(const ScenarioConfig &config, std::size_t n_samples) {
    validate(config);
    if (n_samples == 0)
        throw InvalidInputError("n_samples must be at least 1");

    Rng rng(config.rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> distance(config.distance_range.min, config.distance_range.max);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, config.power_jitter_db);
    constexpr double c0 = kSpeedOfLight;
    // Shortest separation kept between the direct path and the cluster in LOS.
    constexpr double min_separation_s = 1e-11;

    std::vector<RangingSample> out;
    out.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        RangingSample s;
        s.scenario_id = config.scenario_id;
        s.condition = unit(rng) < config.nlos_probability ? Condition::Nlos : Condition::Los;
        s.true_distance_m = distance(rng);
        Cluster cl = draw_cluster(config, rng);
        const double bias_eps = config.bias_noise_std * gauss(rng);
        const double range_noise = gauss(rng);
        const double attenuation = config.max_blocking_attenuation * unit(rng);
        const double direct_jitter = jitter(rng);

        if (s.condition == Condition::Nlos) {
            if (config.blocking == BlockingModel::Attenuate)
                cl.powers[0] *= attenuation;
            PowerDelayProfile rel{cl.powers, cl.offsets};
            const double bias = excess_delay_law(config, rel) + bias_eps;
            s.estimated_distance_m = s.true_distance_m + bias + config.sigma_nlos * range_noise;
            const double tau0 = s.estimated_distance_m / c0;
            s.pdp.powers = std::move(cl.powers);
            s.pdp.delays.reserve(cl.offsets.size());
            for (double off : cl.offsets)
                s.pdp.delays.push_back(tau0 + off);
        } else {
            PowerDelayProfile rel{cl.powers, cl.offsets};
            const double excess = excess_delay_law(config, rel) + bias_eps;
            s.estimated_distance_m = s.true_distance_m + config.sigma_los * range_noise;
            const double tau0 = s.estimated_distance_m / c0;
            const double cluster_start =
                std::max((s.true_distance_m + excess) / c0, tau0 + min_separation_s);
            s.pdp.powers.push_back(std::pow(10.0, direct_jitter / 10.0));
            s.pdp.delays.push_back(tau0);
            for (std::size_t k = 0; k < cl.offsets.size(); ++k) {
                s.pdp.powers.push_back(cl.powers[k]);
                s.pdp.delays.push_back(cluster_start + cl.offsets[k]);
            }
        }

        if (config.quantize) {
            s.pdp = quantize_delays(s.pdp, config.bandwidth_hz);
            s.estimated_distance_m = s.pdp.delays[0] * c0;
        }
        s.delta_d_m = s.estimated_distance_m - s.true_distance_m;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<ScenarioConfig> default_scenarios(std::uint64_t seed) {
    struct Row {
        const char *id;
        double nlos_probability;
        double alpha, beta;
        double decay_ns, gap_ns;
        int paths_min, paths_max;
    };
    // The last row is the held-out environment used for online adaptation runs.
    static constexpr Row rows[] = {
        {"S1", 0.6, 0.10, 0.50, 5.0, 1.5, 4, 12},
        {"S2", 0.6, 0.25, 0.10, 5.5, 1.5, 4, 12},
        {"S3", 0.6, 0.40, 0.35, 4.5, 1.5, 4, 12},
        {"S4", 0.6, 0.55, 0.20, 5.0, 1.8, 4, 12},
        {"S5", 0.6, 0.70, 0.00, 5.0, 1.3, 4, 12},
        {"S6", 0.5, 0.60, 0.45, 5.0, 1.5, 4, 12},
    };
    std::vector<ScenarioConfig> out;
    for (const auto &r : rows) {
        ScenarioConfig c;
        c.scenario_id = r.id;
        c.nlos_probability = r.nlos_probability;
        c.alpha = r.alpha;
        c.beta = r.beta;
        c.decay_constant = r.decay_ns * 1e-9;
        c.mean_inter_arrival = r.gap_ns * 1e-9;
        c.path_count_range = {r.paths_min, r.paths_max};
        c.rng_seed = derive_seed(seed, std::string_view(r.id));
        out.push_back(c);
    }
    return out;
}

} // namespace nlos::sim
