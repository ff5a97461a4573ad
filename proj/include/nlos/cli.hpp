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

#ifndef NLOS_CLI_HPP
#define NLOS_CLI_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nlos::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kMissingArtifact = 3, kNumerical = 4 };

struct RunConfig {
    std::string command;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "run";
    std::vector<std::string> scenarios;       // gen: ids to write; train/eval: training ids
    std::string unseen_scenario = "S6";
    std::vector<std::filesystem::path> scenario_files; // extra or overriding scenario definitions
    std::size_t samples = 2000;
    std::size_t epochs = 100;
    std::vector<std::string> techniques;
    std::size_t adapt_size = 500;
    double threshold = 0.2;
};

/// Reads `name = value` lines; keys: seed, out, scenarios, unseen_scenario, scenario_files, samples,
/// epochs, techniques, adapt_size, threshold. Unknown keys are configuration errors.
RunConfig parse_run_config(const std::string &text, RunConfig base = {});

/// Runs one subcommand (gen, train, adapt, eval, bench). Returns the process exit code.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace nlos::cli

#endif // NLOS_CLI_HPP
