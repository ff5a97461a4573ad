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

#include "nlos/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nlos/baselines.hpp"
#include "nlos/channel_sim.hpp"
#include "nlos/dataset_io.hpp"
#include "nlos/errors.hpp"
#include "nlos/estimator.hpp"
#include "nlos/eval_harness.hpp"
#include "nlos/npr.hpp"
#include "nlos/random.hpp"

namespace nlos::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kDefaultTrainScenarios{"S1", "S2", "S3", "S4", "S5"};

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string &value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ','))
        if (auto t = trim(item); !t.empty())
            out.push_back(t);
    return out;
}

template <typename T> T parse_number(const std::string &field, const std::string &value) {
    std::istringstream in(value);
    T v{};
    in >> v;
    if (in.fail() || !in.eof())
        throw ConfigError(field, "cannot parse '" + value + "'");
    return v;
}

struct Layout {
    fs::path root;
    fs::path datasets() const { return root / "datasets"; }
    fs::path checkpoints() const { return root / "checkpoints"; }
    fs::path reports() const { return root / "reports"; }
    fs::path dataset(const std::string &id) const { return datasets() / (id + ".jsonl"); }
    fs::path checkpoint(const std::string &name) const { return checkpoints() / (name + ".json"); }
};

void ensure_dir(const fs::path &p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p))
        throw IoError("cannot create directory " + p.string());
}

void require(const fs::path &p, const std::string &what) {
    if (!fs::exists(p))
        throw MissingArtifactError("missing " + what + ": " + p.string());
}

json read_json(const fs::path &p, const std::string &what) {
    require(p, what);
    std::ifstream in(p);
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw ParseError(0, p.string() + ": " + e.what());
    }
}

void write_json_file(const json &j, const fs::path &p) {
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + p.string());
    out << j.dump(1) << '\n';
}

std::uint64_t require_seed(const RunConfig &cfg) {
    if (!cfg.seed)
        throw ConfigError("seed", "a seed is required for '" + cfg.command + "'");
    return *cfg.seed;
}

std::map<std::string, sim::ScenarioConfig> catalog(const RunConfig &cfg, std::uint64_t seed) {
    std::map<std::string, sim::ScenarioConfig> out;
    for (auto &s : sim::default_scenarios(seed))
        out.emplace(s.scenario_id, s);
    for (const auto &path : cfg.scenario_files) {
        require(path, "scenario configuration");
        auto s = sim::load_scenario_config(path);
        out[s.scenario_id] = s;
    }
    return out;
}

std::vector<std::string> train_ids(const RunConfig &cfg) {
    return cfg.scenarios.empty() ? kDefaultTrainScenarios : cfg.scenarios;
}

data::Dataset load_dataset(const Layout &layout, const std::string &id) {
    const auto path = layout.dataset(id);
    require(path, "dataset for scenario " + id);
    return data::load(path);
}

// Seed and training scenarios recorded by `train`, used when later commands omit them.
struct RunManifest {
    std::uint64_t seed = 1;
    std::vector<std::string> train_scenarios;
};

RunManifest read_manifest(const Layout &layout, const RunConfig &cfg) {
    const auto j = read_json(layout.checkpoint("run"), "run manifest");
    RunManifest m{j.at("seed").get<std::uint64_t>(), j.at("train_scenarios").get<std::vector<std::string>>()};
    if (cfg.seed)
        m.seed = *cfg.seed;
    if (!cfg.scenarios.empty())
        m.train_scenarios = cfg.scenarios;
    return m;
}

int cmd_gen(const RunConfig &cfg, std::ostream &out) {
    const auto seed = require_seed(cfg);
    const auto scenarios = catalog(cfg, seed);
    std::vector<std::string> ids = cfg.scenarios;
    if (ids.empty())
        for (const auto &[id, s] : scenarios)
            ids.push_back(id);
    const Layout layout{cfg.out};
    ensure_dir(layout.datasets());
    for (const auto &id : ids) {
        const auto it = scenarios.find(id);
        if (it == scenarios.end())
            throw ConfigError("scenarios", "unknown scenario '" + id + "'");
        const auto ds = data::make_dataset(sim::generate_scenario(it->second, cfg.samples));
        data::save(ds, layout.dataset(id));
        const auto nlos = std::count_if(ds.samples.begin(), ds.samples.end(),
                                        [](const auto &s) { return s.condition == sim::Condition::Nlos; });
        out << id << ": " << ds.size() << " samples, NLOS fraction "
            << static_cast<double>(nlos) / static_cast<double>(ds.size()) << '\n';
    }
    return kOk;
}

int cmd_train(const RunConfig &cfg, std::ostream &out) {
    const auto seed = require_seed(cfg);
    const Layout layout{cfg.out};
    const auto ids = train_ids(cfg);
    std::vector<data::Dataset> trains, vals;
    for (const auto &id : ids) {
        auto sp = eval::protocol_split(load_dataset(layout, id), id, seed);
        trains.push_back(std::move(sp.train));
        vals.push_back(std::move(sp.val));
    }
    const auto train = data::concat(trains);
    const auto val = data::concat(vals);

    eval::BundleOptions options;
    options.seed = seed;
    options.epochs = cfg.epochs;
    eval::BundleTraces traces;
    const auto bundle = eval::train_bundle(train, val, options, &traces);

    ensure_dir(layout.checkpoints());
    ensure_dir(layout.reports());
    npr::save(bundle.npr, layout.checkpoint("npr"));
    write_json_file(estimator::to_json(bundle.classifier), layout.checkpoint("classifier"));
    write_json_file(baselines::to_json(bundle.gpr), layout.checkpoint("gpr"));
    write_json_file(baselines::to_json(bundle.mlp), layout.checkpoint("mlp"));
    write_json_file({{"seed", seed}, {"train_scenarios", ids}, {"epochs", cfg.epochs}}, layout.checkpoint("run"));

    {
        std::ofstream trace(layout.reports() / "training_trace.csv");
        trace.precision(17);
        trace << "epoch,train_loss,validation_loss,variance_nll\n";
        for (std::size_t e = 0; e < traces.encoder.train_loss.size(); ++e)
            trace << e + 1 << ',' << traces.encoder.train_loss[e] << ',' << traces.encoder.validation_loss[e] << ','
                  << traces.encoder.variance_nll[e] << '\n';
        std::ofstream head(layout.reports() / "head_trace.csv");
        head.precision(17);
        head << "epoch,loss\n";
        for (std::size_t e = 0; e < traces.head.loss.size(); ++e)
            head << e + 1 << ',' << traces.head.loss[e] << '\n';
    }
    const auto &tl = traces.encoder.train_loss;
    out << "trained on " << train.size() << " samples from " << ids.size() << " scenarios\n"
        << "encoder objective: first " << tl.front() << ", best " << *std::min_element(tl.begin(), tl.end())
        << ", last " << tl.back() << '\n'
        << "classifier accuracy (validation): " << estimator::accuracy(bundle.classifier, val) << '\n';
    return kOk;
}

int cmd_adapt(const RunConfig &cfg, std::ostream &out) {
    const Layout layout{cfg.out};
    const auto manifest = read_manifest(layout, cfg);
    const auto npr_path = layout.checkpoint("npr");
    auto checkpoint = read_json(npr_path, "NPR checkpoint");
    auto model = npr::model_from_json(checkpoint);
    const auto clf = estimator::classifier_from_json(read_json(layout.checkpoint("classifier"), "classifier"));
    if (std::count(manifest.train_scenarios.begin(), manifest.train_scenarios.end(), cfg.unseen_scenario))
        throw ProtocolError("scenario " + cfg.unseen_scenario + " was used for training");
    const auto stream = eval::protocol_split(load_dataset(layout, cfg.unseen_scenario), cfg.unseen_scenario,
                                             manifest.seed)
                            .train;

    std::size_t accepted = 0, gated = 0, skipped = 0;
    bool reset = false;
    const auto n = std::min(cfg.adapt_size, stream.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto &s = stream.samples[i];
        const double p = estimator::classify_nlos(clf, s.pdp);
        if (!reset && p < cfg.threshold && s.pdp.size() >= 2) {
            model.stats = npr::LatentStats::uninitialized(model.latent_dim(), model.config.forgetting);
            reset = true;
        }
        switch (npr::online_update(model, s.pdp, p, cfg.threshold)) {
        case npr::OnlineStatus::Accepted:
            ++accepted;
            break;
        case npr::OnlineStatus::Gated:
            ++gated;
            break;
        case npr::OnlineStatus::SkippedSinglePath:
            ++skipped;
            break;
        }
    }
    checkpoint["stats"] = npr::stats_to_json(model.stats);
    const auto target = layout.checkpoint("npr_adapted");
    write_json_file(checkpoint, target);
    out << "adapted on " << cfg.unseen_scenario << ": " << accepted << " accepted, " << gated << " gated, " << skipped
        << " single-path skipped; wrote " << target.string() << '\n';
    return kOk;
}

int cmd_eval(const RunConfig &cfg, std::ostream &out) {
    const Layout layout{cfg.out};
    auto techniques = cfg.techniques.empty() ? eval::kTechniqueNames : cfg.techniques;
    for (const auto &t : techniques)
        if (std::find(eval::kTechniqueNames.begin(), eval::kTechniqueNames.end(), t) == eval::kTechniqueNames.end())
            throw ConfigError("technique", "unknown technique '" + t + "'");
    const bool identity_only =
        std::all_of(techniques.begin(), techniques.end(), [](const auto &t) { return t == "identity"; });
    auto wants = [&](const std::string &name) {
        return std::find(techniques.begin(), techniques.end(), name) != techniques.end();
    };

    RunManifest manifest;
    if (identity_only && !fs::exists(layout.checkpoint("run"))) {
        manifest.seed = cfg.seed.value_or(1);
        manifest.train_scenarios = train_ids(cfg);
    } else {
        manifest = read_manifest(layout, cfg);
    }

    eval::ModelBundle bundle;
    eval::EvalOptions eval_opts;
    eval_opts.train_scenarios = manifest.train_scenarios;
    if (identity_only) {
        eval_opts.source = eval::ProbabilitySource::KnownLabels;
    } else {
        bundle.classifier = estimator::classifier_from_json(read_json(layout.checkpoint("classifier"), "classifier"));
    }
    if (wants("npr"))
        bundle.npr = npr::model_from_json(read_json(layout.checkpoint("npr"), "NPR checkpoint"));
    if (wants("gpr"))
        bundle.gpr = baselines::gpr_from_json(read_json(layout.checkpoint("gpr"), "GPR checkpoint"));
    if (wants("mlp") || wants("mlp-retrained"))
        bundle.mlp = baselines::mlp_from_json(read_json(layout.checkpoint("mlp"), "MLP checkpoint"));

    std::vector<data::Dataset> trains, tests;
    for (const auto &id : manifest.train_scenarios) {
        auto sp = eval::protocol_split(load_dataset(layout, id), id, manifest.seed);
        trains.push_back(std::move(sp.train));
        tests.push_back(std::move(sp.test));
    }
    const auto train = data::concat(trains);
    const auto test = data::concat(tests);

    std::vector<eval::Technique> offline;
    for (const auto &t : techniques) {
        if (t == "identity")
            offline.push_back(eval::identity_technique());
        else if (t == "npr")
            offline.push_back(eval::npr_technique(bundle.npr, eval::scenario_statistics(bundle.npr, train)));
        else if (t == "gpr")
            offline.push_back(eval::gpr_technique(bundle.gpr));
        else if (t == "mlp")
            offline.push_back(eval::mlp_technique(bundle.mlp));
    }
    ensure_dir(layout.reports());
    auto print = [&](const char *title, const std::vector<eval::EvalReport> &reports) {
        out << title << '\n';
        for (const auto &r : reports)
            out << "  " << r.technique << ": p10 " << r.p10 << " m, p50 " << r.p50 << " m, p90 " << r.p90
                << " m, T_on " << r.online_time_ms << " ms, improvement " << 100.0 * r.improvement_vs_baseline
                << "%\n";
    };
    if (!offline.empty()) {
        const auto reports = eval::run_offline_eval(offline, test, bundle.classifier, eval_opts);
        eval::write_json(reports, layout.reports() / "offline.json");
        eval::write_csv(reports, layout.reports() / "offline.csv");
        eval::write_cdf_csv(reports, layout.reports() / "offline_cdf.csv");
        print("in-distribution", reports);
    }

    const auto unseen_path = layout.dataset(cfg.unseen_scenario);
    if (fs::exists(unseen_path)) {
        const auto unseen = eval::protocol_split(data::load(unseen_path), cfg.unseen_scenario, manifest.seed);
        eval::OnlineOptions online;
        online.adaptation_size = cfg.adapt_size;
        online.threshold = cfg.threshold;
        online.eval = eval_opts;
        online.retrain.seed = derive_seed(manifest.seed, "mlp-retrain");
        const auto reports = eval::run_online_eval(techniques, bundle, unseen.train, unseen.test, online);
        eval::write_json(reports, layout.reports() / "online.json");
        eval::write_csv(reports, layout.reports() / "online.csv");
        eval::write_cdf_csv(reports, layout.reports() / "online_cdf.csv");
        print(("unseen scenario " + cfg.unseen_scenario).c_str(), reports);
    } else {
        out << "no dataset for unseen scenario " << cfg.unseen_scenario << "; skipped the online run\n";
    }
    return kOk;
}

int cmd_bench(const RunConfig &cfg, std::ostream &out) {
    const Layout layout{cfg.out};
    const auto seed = cfg.seed.value_or(1);
    const auto npr_path = layout.checkpoint("npr");
    const auto model = fs::exists(npr_path) ? npr::load(npr_path) : npr::make_model({}, derive_seed(seed, "npr-init"));
    eval::ScalingOptions options;
    options.seed = seed;
    const auto rows = eval::measure_scaling(model, options);
    ensure_dir(layout.reports());
    eval::write_scaling_csv(rows, layout.reports() / "bench.csv");
    std::vector<double> n, agg;
    for (const auto &r : rows) {
        n.push_back(static_cast<double>(r.n));
        agg.push_back(r.aggregate_ms);
        out << "N=" << r.n << ": aggregate " << r.aggregate_ms << " ms, GPR fit " << r.gpr_fit_ms << " ms\n";
    }
    out << "aggregation linear fit R^2 = " << eval::linear_r2(n, agg) << '\n';
    for (std::size_t i = 1; i < rows.size(); ++i)
        out << "GPR fit ratio " << rows[i - 1].n << " -> " << rows[i].n << ": "
            << rows[i].gpr_fit_ms / rows[i - 1].gpr_fit_ms << '\n';
    return kOk;
}

} // namespace

RunConfig parse_run_config(const std::string &text, RunConfig cfg) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(lineno, "expected 'name = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key == "seed")
            cfg.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "out")
            cfg.out = value;
        else if (key == "scenarios")
            cfg.scenarios = split_list(value);
        else if (key == "unseen_scenario")
            cfg.unseen_scenario = value;
        else if (key == "scenario_files")
            for (const auto &p : split_list(value))
                cfg.scenario_files.emplace_back(p);
        else if (key == "samples")
            cfg.samples = parse_number<std::size_t>(key, value);
        else if (key == "epochs")
            cfg.epochs = parse_number<std::size_t>(key, value);
        else if (key == "techniques")
            cfg.techniques = split_list(value);
        else if (key == "adapt_size")
            cfg.adapt_size = parse_number<std::size_t>(key, value);
        else if (key == "threshold")
            cfg.threshold = parse_number<double>(key, value);
        else
            throw ConfigError(key, "unknown key");
    }
    return cfg;
}

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
    CLI::App app{"NLOS ranging-bias mitigation with a neural-process regressor"};
    app.require_subcommand(1);

    fs::path config_path;
    std::uint64_t seed = 0;
    std::string out_dir, scenarios_flag, unseen;
    std::vector<std::string> scenario_files, techniques;
    std::size_t samples = 0, epochs = 0, adapt_size = 0;
    double threshold = 0.0;

    auto common = [&](CLI::App *cmd) {
        cmd->add_option("--config", config_path, "run configuration file (name = value lines)");
        cmd->add_option("--seed", seed, "global seed");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--scenarios", scenarios_flag, "comma-separated scenario ids");
    };
    auto *gen = app.add_subcommand("gen", "generate one dataset per scenario");
    common(gen);
    gen->add_option("--samples", samples, "samples per scenario");
    gen->add_option("--scenario-config", scenario_files, "extra scenario definition file");
    auto *train = app.add_subcommand("train", "train NPR, baselines and the NLOS classifier");
    common(train);
    train->add_option("--epochs", epochs, "encoder training epochs");
    auto *adapt = app.add_subcommand("adapt", "stream unseen-scenario samples through the online update");
    common(adapt);
    adapt->add_option("--adapt-size", adapt_size, "adaptation samples");
    adapt->add_option("--threshold", threshold, "LOS gate on p_nlos");
    adapt->add_option("--unseen", unseen, "unseen scenario id");
    auto *evaluate = app.add_subcommand("eval", "write in-distribution and unseen-scenario reports");
    common(evaluate);
    evaluate->add_option("--technique", techniques, "npr, gpr, mlp, mlp-retrained or identity (repeatable)");
    evaluate->add_option("--adapt-size", adapt_size, "adaptation samples");
    evaluate->add_option("--threshold", threshold, "LOS gate on p_nlos");
    evaluate->add_option("--unseen", unseen, "unseen scenario id");
    auto *bench = app.add_subcommand("bench", "time aggregation and GPR fitting against N");
    common(bench);

    std::vector<std::string> argv_store{"nlos-npr"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char *> argv;
    for (const auto &a : argv_store)
        argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        CLI::App *cmd = app.get_subcommands().front();
        RunConfig cfg;
        if (cmd->count("--config")) {
            require(config_path, "run configuration");
            std::ifstream in(config_path);
            std::stringstream text;
            text << in.rdbuf();
            cfg = parse_run_config(text.str());
        }
        cfg.command = cmd->get_name();
        if (cmd->count("--seed"))
            cfg.seed = seed;
        if (cmd->count("--out"))
            cfg.out = out_dir;
        if (cmd->count("--scenarios"))
            cfg.scenarios = split_list(scenarios_flag);
        auto given = [&](const char *flag) {
            try {
                return cmd->count(flag) > 0;
            } catch (const CLI::OptionNotFound &) {
                return false;
            }
        };
        if (given("--samples"))
            cfg.samples = samples;
        if (given("--scenario-config"))
            for (const auto &p : scenario_files)
                cfg.scenario_files.emplace_back(p);
        if (given("--epochs"))
            cfg.epochs = epochs;
        if (given("--technique"))
            cfg.techniques = techniques;
        if (given("--adapt-size"))
            cfg.adapt_size = adapt_size;
        if (given("--threshold"))
            cfg.threshold = threshold;
        if (given("--unseen"))
            cfg.unseen_scenario = unseen;
        if (cfg.samples == 0)
            throw ConfigError("samples", "must be positive");
        if (cfg.epochs == 0)
            throw ConfigError("epochs", "must be positive");
        if (!(cfg.threshold >= 0.0 && cfg.threshold <= 1.0))
            throw ConfigError("threshold", "must lie in [0, 1]");

        if (cfg.command == "gen")
            return cmd_gen(cfg, out);
        if (cfg.command == "train")
            return cmd_train(cfg, out);
        if (cfg.command == "adapt")
            return cmd_adapt(cfg, out);
        if (cfg.command == "eval")
            return cmd_eval(cfg, out);
        return cmd_bench(cfg, out);
    } catch (const MissingArtifactError &e) {
        err << "error: " << e.what() << '\n';
        return kMissingArtifact;
    } catch (const StateError &e) {
        err << "error: " << e.what() << '\n';
        return kMissingArtifact;
    } catch (const DomainError &e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const ConditioningError &e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception &e) {
        err << "internal error: " << e.what() << '\n';
        return kInternal;
    }
}

} // namespace nlos::cli
