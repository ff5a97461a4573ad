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

#include "nlos/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nlos/errors.hpp"
#include "nlos/random.hpp"

namespace nlos::data {

using json = nlohmann::json;

std::vector<double> Normalization::apply(std::span<const double> x) const {
    if (x.size() != mean.size())
        throw ShapeError("normalization expects " + std::to_string(mean.size()) + " features, got " +
                         std::to_string(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = (x[i] - mean[i]) / std[i];
    return out;
}

std::vector<double> Normalization::invert(std::span<const double> x) const {
    if (x.size() != mean.size())
        throw ShapeError("normalization expects " + std::to_string(mean.size()) + " features, got " +
                         std::to_string(x.size()));
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = x[i] * std[i] + mean[i];
    return out;
}

Normalization fit_normalization(std::span<const std::vector<double>> rows) {
    if (rows.empty())
        throw InvalidInputError("cannot fit normalization on zero rows");
    const auto dim = rows.front().size();
    Normalization n;
    n.mean.assign(dim, 0.0);
    n.std.assign(dim, 0.0);
    for (const auto &r : rows) {
        if (r.size() != dim)
            throw ShapeError("normalization rows differ in length");
        for (std::size_t i = 0; i < dim; ++i)
            n.mean[i] += r[i];
    }
    for (auto &m : n.mean)
        m /= static_cast<double>(rows.size());
    for (const auto &r : rows)
        for (std::size_t i = 0; i < dim; ++i)
            n.std[i] += (r[i] - n.mean[i]) * (r[i] - n.mean[i]);
    for (std::size_t i = 0; i < dim; ++i) {
        const double s = std::sqrt(n.std[i] / static_cast<double>(rows.size()));
        n.std[i] = s > 1e-12 * std::max(1.0, std::abs(n.mean[i])) ? s : 1.0;
    }
    return n;
}

namespace {

// Indices of the retained paths, in delay order.
std::vector<std::size_t> retained_paths(const sim::PowerDelayProfile &pdp, std::size_t max_paths) {
    std::vector<std::size_t> idx(pdp.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > max_paths) {
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return pdp.powers[a] > pdp.powers[b]; });
        idx.resize(max_paths);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

std::vector<double> encode_impl(const sim::PowerDelayProfile &pdp, std::size_t max_paths, bool relative) {
    if (max_paths == 0)
        throw InvalidInputError("max_paths must be at least 1");
    if (pdp.powers.size() != pdp.delays.size())
        throw InvalidInputError("power delay profile: powers and delays differ in length");
    const auto idx = retained_paths(pdp, max_paths);
    std::vector<double> out(2 * max_paths, 0.0);
    const double ref = (relative && !idx.empty()) ? pdp.delays[idx.front()] : 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
        out[j] = pdp.powers[idx[j]];
        out[max_paths + j] = pdp.delays[idx[j]] - ref;
    }
    return out;
}

} // namespace

std::vector<double> encode(const sim::PowerDelayProfile &pdp, std::size_t max_paths) {
    return encode_impl(pdp, max_paths, false);
}

std::vector<double> encode_relative(const sim::PowerDelayProfile &pdp, std::size_t max_paths) {
    return encode_impl(pdp, max_paths, true);
}

sim::PowerDelayProfile decode(std::span<const double> encoded) {
    if (encoded.size() % 2 != 0)
        throw ShapeError("encoded profile must have even length");
    const auto m = encoded.size() / 2;
    std::size_t used = 0;
    for (std::size_t j = 0; j < m; ++j)
        if (encoded[j] != 0.0 || encoded[m + j] != 0.0)
            used = j + 1;
    sim::PowerDelayProfile pdp;
    pdp.powers.assign(encoded.begin(), encoded.begin() + static_cast<std::ptrdiff_t>(used));
    pdp.delays.assign(encoded.begin() + static_cast<std::ptrdiff_t>(m),
                      encoded.begin() + static_cast<std::ptrdiff_t>(m + used));
    return pdp;
}

Dataset make_dataset(std::vector<sim::RangingSample> samples, std::size_t max_paths) {
    if (max_paths == 0)
        throw InvalidInputError("max_paths must be at least 1");
    Dataset ds;
    ds.samples = std::move(samples);
    ds.feature_dim = 2 * max_paths;
    return ds;
}

Dataset filter(const Dataset &ds, sim::Condition condition) {
    Dataset out;
    out.feature_dim = ds.feature_dim;
    out.normalization = ds.normalization;
    for (const auto &s : ds.samples)
        if (s.condition == condition)
            out.samples.push_back(s);
    return out;
}

Dataset concat(std::span<const Dataset> parts) {
    Dataset out;
    if (!parts.empty())
        out.feature_dim = parts.front().feature_dim;
    for (const auto &p : parts) {
        if (p.feature_dim != out.feature_dim)
            throw ShapeError("cannot concatenate datasets with different feature_dim");
        out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
    }
    return out;
}

std::pair<Dataset, Dataset> split(const Dataset &ds, double train_fraction, std::uint64_t seed) {
    if (ds.empty())
        throw InvalidInputError("cannot split an empty dataset");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidInputError("train_fraction must lie strictly between 0 and 1");
    const auto n = ds.size();
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
    if (n_train == 0 || n_train == n)
        throw InvalidInputError("split of " + std::to_string(n) + " samples leaves one side empty");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    Dataset train, test;
    train.feature_dim = test.feature_dim = ds.feature_dim;
    train.normalization = test.normalization = ds.normalization;
    train.samples.reserve(n_train);
    test.samples.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i)
        (i < n_train ? train : test).samples.push_back(ds.samples[order[i]]);
    return {std::move(train), std::move(test)};
}

namespace {

json sample_to_json(const sim::RangingSample &s) {
    return json{{"scenario_id", s.scenario_id},
                {"condition", sim::to_string(s.condition)},
                {"true_distance_m", s.true_distance_m},
                {"estimated_distance_m", s.estimated_distance_m},
                {"delta_d_m", s.delta_d_m},
                {"powers", s.pdp.powers},
                {"delays", s.pdp.delays}};
}

sim::RangingSample sample_from_json(const json &j) {
    sim::RangingSample s;
    s.scenario_id = j.at("scenario_id").get<std::string>();
    s.condition = sim::condition_from_string(j.at("condition").get<std::string>());
    s.true_distance_m = j.at("true_distance_m").get<double>();
    s.estimated_distance_m = j.at("estimated_distance_m").get<double>();
    s.delta_d_m = j.at("delta_d_m").get<double>();
    s.pdp.powers = j.at("powers").get<std::vector<double>>();
    s.pdp.delays = j.at("delays").get<std::vector<double>>();
    sim::validate(s.pdp);
    return s;
}

} // namespace

std::string to_jsonl(const Dataset &ds) {
    json header{{"version", kFormatVersion}, {"feature_dim", ds.feature_dim}};
    if (ds.normalization)
        header["normalization"] = json{{"mean", ds.normalization->mean}, {"std", ds.normalization->std}};
    std::string out = header.dump();
    out += '\n';
    for (const auto &s : ds.samples) {
        out += sample_to_json(s).dump();
        out += '\n';
    }
    return out;
}

Dataset from_jsonl(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    Dataset ds;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception &e) {
            throw ParseError(line_no, e.what());
        }
        try {
            if (!have_header) {
                const int version = j.at("version").get<int>();
                if (version != kFormatVersion)
                    throw VersionError("dataset format version " + std::to_string(version) +
                                       " is not supported (expected " + std::to_string(kFormatVersion) + ")");
                ds.feature_dim = j.at("feature_dim").get<std::size_t>();
                if (ds.feature_dim == 0 || ds.feature_dim % 2 != 0)
                    throw ParseError(line_no, "feature_dim must be a positive even number");
                if (j.contains("normalization")) {
                    Normalization n;
                    n.mean = j["normalization"].at("mean").get<std::vector<double>>();
                    n.std = j["normalization"].at("std").get<std::vector<double>>();
                    if (n.mean.size() != n.std.size())
                        throw ParseError(line_no, "normalization mean/std lengths differ");
                    if (std::any_of(n.std.begin(), n.std.end(), [](double s) { return !(s > 0.0); }))
                        throw ParseError(line_no, "normalization std must be positive");
                    ds.normalization = std::move(n);
                }
                have_header = true;
            } else {
                ds.samples.push_back(sample_from_json(j));
            }
        } catch (const json::exception &e) {
            throw ParseError(line_no, e.what());
        } catch (const InvalidInputError &e) {
            throw ParseError(line_no, e.what());
        }
    }
    if (!have_header)
        throw ParseError(line_no, "missing header line");
    return ds;
}

void save(const Dataset &ds, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write dataset '" + path.string() + "'");
    out << to_jsonl(ds);
    if (!out)
        throw IoError("failed writing dataset '" + path.string() + "'");
}

Dataset load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open dataset '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_jsonl(buf.str());
}

} // namespace nlos::data
