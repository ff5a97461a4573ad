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

#ifndef NLOS_DATASET_IO_HPP
#define NLOS_DATASET_IO_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nlos/channel_sim.hpp"

namespace nlos::data {

inline constexpr int kFormatVersion = 1;
inline constexpr std::size_t kDefaultMaxPaths = 16;

// Per-feature affine standardization, fitted on training data only.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> std;

    std::size_t size() const noexcept { return mean.size(); }
    std::vector<double> apply(std::span<const double> x) const;
    std::vector<double> invert(std::span<const double> x) const;
    bool operator==(const Normalization &) const = default;
};

// Features with zero spread get std = 1 so the invariant std > 0 always holds.
Normalization fit_normalization(std::span<const std::vector<double>> rows);

struct Dataset {
    std::vector<sim::RangingSample> samples;
    std::size_t feature_dim = 2 * kDefaultMaxPaths;
    std::optional<Normalization> normalization;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    std::size_t max_paths() const noexcept { return feature_dim / 2; }
    bool operator==(const Dataset &) const = default;
};

// [powers || delays], each padded with zeros or truncated to max_paths.
// Truncation keeps the strongest paths (ties by earlier delay) in delay order.
std::vector<double> encode(const sim::PowerDelayProfile &pdp, std::size_t max_paths);

// As encode(), with delays referenced to the first retained path. This is the
// network input representation: it drops the absolute range carried by tau0.
std::vector<double> encode_relative(const sim::PowerDelayProfile &pdp, std::size_t max_paths);

// Inverse of encode() for unpadded entries; trailing (0, 0) pairs are padding.
sim::PowerDelayProfile decode(std::span<const double> encoded);

Dataset make_dataset(std::vector<sim::RangingSample> samples, std::size_t max_paths = kDefaultMaxPaths);

Dataset filter(const Dataset &ds, sim::Condition condition);
Dataset concat(std::span<const Dataset> parts);

// Shuffled partition into sizes floor(n * f) and n - floor(n * f).
std::pair<Dataset, Dataset> split(const Dataset &ds, double train_fraction, std::uint64_t seed);

std::string to_jsonl(const Dataset &ds);
Dataset from_jsonl(const std::string &text);
void save(const Dataset &ds, const std::filesystem::path &path);
Dataset load(const std::filesystem::path &path);

} // namespace nlos::data

#endif // NLOS_DATASET_IO_HPP
