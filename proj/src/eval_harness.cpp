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

#include "nlos/eval_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <utility>

#include "nlos/errors.hpp"
#include "nlos/random.hpp"

namespace nlos::eval {

using nn::Matrix;
using nn::Vector;

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

double nlos_probability(const sim::RangingSample &s, const estimator::NlosClassifier &clf, ProbabilitySource source) {
    if (source == ProbabilitySource::KnownLabels)
        return s.condition == sim::Condition::Nlos ? 1.0 : 0.0;
    return estimator::classify_nlos(clf, s.pdp);
}

double median_of(std::vector<double> v) {
    return percentile(v, 0.5);
}

std::ofstream open_output(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    out.precision(17);
    return out;
}

std::string join(const std::vector<std::string> &parts, char sep) {
    std::string s;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i)
            s += sep;
        s += parts[i];
    }
    return s;
}

void check_protocol(const std::vector<std::string> &train_ids, const data::Dataset &ds, const char *what) {
    const std::set<std::string> train(train_ids.begin(), train_ids.end());
    for (const auto &s : ds.samples)
        if (train.count(s.scenario_id))
            throw ProtocolError(std::string(what) + " holds samples of training scenario " + s.scenario_id);
}

} // namespace

double percentile(std::span<const double> errors, double q) {
    if (errors.empty())
        throw InvalidInputError("percentile of an empty sequence");
    if (!(q >= 0.0 && q <= 1.0))
        throw InvalidInputError("percentile level must lie in [0, 1]");
    std::vector<double> sorted(errors.size());
    std::transform(errors.begin(), errors.end(), sorted.begin(), [](double e) { return std::abs(e); });
    std::sort(sorted.begin(), sorted.end());
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size())
        return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

std::vector<CdfPoint> cdf_curve(std::span<const double> errors, std::size_t points) {
    if (points < 2)
        throw InvalidInputError("a CDF curve needs at least two points");
    std::vector<CdfPoint> curve(points);
    for (std::size_t i = 0; i < points; ++i) {
        const double q = static_cast<double>(i) / static_cast<double>(points - 1);
        curve[i] = {q, percentile(errors, q)};
    }
    return curve;
}

Technique identity_technique() {
    return {"identity", [](const sim::RangingSample &) { return 0.0; }};
}

Technique oracle_technique() {
    return {"oracle", [](const sim::RangingSample &s) { return s.delta_d_m; }};
}

Technique npr_technique(const npr::NprModel &model, std::string name) {
    Technique t{std::move(name), [model](const sim::RangingSample &s) { return npr::predict(model, s.pdp).mean; }};
    t.ready = model.encoder_trained && model.head_trained;
    return t;
}

Technique npr_technique(const npr::NprModel &model, std::map<std::string, npr::LatentStats> per_scenario,
                        std::string name) {
    auto table = std::make_shared<std::map<std::string, npr::NprModel>>();
    for (auto &[id, stats] : per_scenario) {
        auto m = model;
        m.stats = std::move(stats);
        table->emplace(id, std::move(m));
    }
    Technique t{std::move(name), [model, table](const sim::RangingSample &s) {
                    const auto it = table->find(s.scenario_id);
                    return npr::predict(it == table->end() ? model : it->second, s.pdp).mean;
                }};
    t.ready = model.encoder_trained && model.head_trained;
    return t;
}

Technique gpr_technique(const baselines::GprModel &model) {
    Technique t{"gpr", [model](const sim::RangingSample &s) { return baselines::gpr_predict(model, s.pdp).mean; }};
    t.ready = model.fitted;
    return t;
}

Technique mlp_technique(const baselines::MlpModel &model, std::string name) {
    Technique t{std::move(name), [model](const sim::RangingSample &s) { return baselines::mlp_predict(model, s.pdp); }};
    t.ready = model.fitted;
    return t;
}

std::vector<EvalReport> run_offline_eval(std::span<const Technique> techniques, const data::Dataset &test,
                                         const estimator::NlosClassifier &classifier, const EvalOptions &options) {
    for (const auto &t : techniques)
        if (!t.ready || !t.mean_bias)
            throw StateError("technique '" + t.name + "' is not trained");
    std::vector<const sim::RangingSample *> eval_set;
    for (const auto &s : test.samples)
        if (!options.nlos_only || s.condition == sim::Condition::Nlos)
            eval_set.push_back(&s);
    if (eval_set.empty())
        throw InvalidInputError("evaluation split holds no usable samples");

    std::vector<double> baseline(eval_set.size());
    for (std::size_t i = 0; i < eval_set.size(); ++i)
        baseline[i] = std::abs(eval_set[i]->estimated_distance_m - eval_set[i]->true_distance_m);
    const double baseline_p50 = percentile(baseline, 0.5);

    std::set<std::string> test_ids;
    for (const auto *s : eval_set)
        test_ids.insert(s->scenario_id);
    const std::string test_label = join({test_ids.begin(), test_ids.end()}, ';');

    std::vector<EvalReport> reports;
    for (const auto &t : techniques) {
        EvalReport r;
        r.technique = t.name;
        r.train_scenarios = options.train_scenarios;
        r.test_scenario = test_label;
        r.errors.resize(eval_set.size());
        for (std::size_t i = 0; i < eval_set.size(); ++i) {
            const auto &s = *eval_set[i];
            const double p = nlos_probability(s, classifier, options.source);
            const double d_hat = estimator::mmse_range(s.estimated_distance_m, p, t.mean_bias(s));
            r.errors[i] = std::abs(d_hat - s.true_distance_m);
        }
        r.p10 = percentile(r.errors, 0.1);
        r.p50 = percentile(r.errors, 0.5);
        r.p90 = percentile(r.errors, 0.9);
        r.cdf = cdf_curve(r.errors);
        r.improvement_vs_baseline = baseline_p50 > 0.0 ? 1.0 - r.p50 / baseline_p50 : 0.0;

        // Single-prediction wall clock: classifier, bias estimate and range combination.
        volatile double sink = 0.0;
        std::vector<double> times;
        times.reserve(options.timing_runs);
        for (std::size_t k = 0; k < options.warmup_runs + options.timing_runs; ++k) {
            const auto &s = *eval_set[k % eval_set.size()];
            const auto start = Clock::now();
            const double p = nlos_probability(s, classifier, options.source);
            sink = sink + estimator::mmse_range(s.estimated_distance_m, p, t.mean_bias(s));
            const double ms = elapsed_ms(start);
            if (k >= options.warmup_runs)
                times.push_back(ms);
        }
        const double predict_ms = times.empty() ? 0.0 : median_of(times);
        r.adaptation_ms = t.adaptation_ms;
        r.adaptation_accepted = t.adaptation_accepted;
        r.online_time_ms = predict_ms + t.adaptation_ms / static_cast<double>(eval_set.size());
        reports.push_back(std::move(r));
    }
    return reports;
}

std::vector<EvalReport> run_online_eval(std::span<const std::string> techniques, const ModelBundle &models,
                                        const data::Dataset &adaptation_stream, const data::Dataset &test,
                                        const OnlineOptions &options) {
    check_protocol(options.eval.train_scenarios, adaptation_stream, "adaptation stream");
    check_protocol(options.eval.train_scenarios, test, "test split");
    const auto n_adapt = std::min(options.adaptation_size, adaptation_stream.size());

    std::vector<Technique> list;
    for (const auto &name : techniques) {
        if (name == "identity") {
            list.push_back(identity_technique());
        } else if (name == "npr") {
            if (!models.npr.encoder_trained || !models.npr.head_trained)
                throw StateError("technique 'npr' is not trained");
            auto adapted = models.npr;
            std::size_t accepted = 0;
            bool reset = !options.reset_on_first_accept;
            const auto start = Clock::now();
            for (std::size_t i = 0; i < n_adapt; ++i) {
                const auto &s = adaptation_stream.samples[i];
                const double p = nlos_probability(s, models.classifier, options.eval.source);
                if (!reset && p < options.threshold && s.pdp.size() >= 2) {
                    adapted.stats = npr::LatentStats::uninitialized(adapted.latent_dim(), adapted.config.forgetting);
                    reset = true;
                }
                if (npr::online_update(adapted, s.pdp, p, options.threshold) == npr::OnlineStatus::Accepted)
                    ++accepted;
            }
            const double ms = elapsed_ms(start);
            auto t = npr_technique(adapted);
            t.adaptation_ms = n_adapt ? ms : 0.0;
            t.adaptation_accepted = accepted;
            list.push_back(std::move(t));
        } else if (name == "gpr") {
            list.push_back(gpr_technique(models.gpr));
        } else if (name == "mlp") {
            list.push_back(mlp_technique(models.mlp));
        } else if (name == "mlp-retrained") {
            if (!models.mlp.fitted)
                throw StateError("technique 'mlp-retrained' is not trained");
            data::Dataset labeled;
            labeled.feature_dim = adaptation_stream.feature_dim;
            for (std::size_t i = 0; i < n_adapt; ++i)
                if (adaptation_stream.samples[i].condition == sim::Condition::Nlos)
                    labeled.samples.push_back(adaptation_stream.samples[i]);
            if (labeled.empty()) {
                list.push_back(mlp_technique(models.mlp, "mlp-retrained"));
                continue;
            }
            const auto start = Clock::now();
            auto retrained = baselines::mlp_retrain(models.mlp, labeled, options.retrain);
            const double ms = elapsed_ms(start);
            auto t = mlp_technique(retrained, "mlp-retrained");
            t.adaptation_ms = ms;
            t.adaptation_accepted = labeled.size();
            list.push_back(std::move(t));
        } else {
            throw ConfigError("technique", "unknown technique '" + name + "'");
        }
    }
    return run_offline_eval(list, test, models.classifier, options.eval);
}

ScenarioSplits protocol_split(const data::Dataset &ds, const std::string &scenario_id, std::uint64_t seed) {
    auto [train_all, test] = data::split(ds, 0.8, derive_seed(seed, "test-split/" + scenario_id));
    auto [train, val] = data::split(train_all, 0.9, derive_seed(seed, "val-split/" + scenario_id));
    return {std::move(train), std::move(val), std::move(test)};
}

ModelBundle train_bundle(const data::Dataset &train, const data::Dataset &val, const BundleOptions &options,
                         BundleTraces *traces) {
    ModelBundle b;
    b.classifier = estimator::train_classifier(train, options.classifier);
    b.npr = npr::make_model(options.npr, derive_seed(options.seed, "npr-init"));
    auto enc = npr::train_encoder_decoder(b.npr, train, val,
                                          {options.epochs, 128, derive_seed(options.seed, "npr-train")});
    auto head_opts = options.head;
    head_opts.seed = derive_seed(options.seed, "npr-head");
    auto head = npr::train_decoder_head(b.npr, train, head_opts);
    auto gpr_opts = options.gpr;
    gpr_opts.seed = derive_seed(options.seed, "gpr");
    b.gpr = baselines::gpr_fit_dataset(train, val, gpr_opts);
    auto mlp_opts = options.mlp;
    mlp_opts.seed = derive_seed(options.seed, "mlp");
    b.mlp = baselines::mlp_fit(train, mlp_opts);
    if (traces)
        *traces = {std::move(enc), std::move(head)};
    return b;
}

std::map<std::string, npr::LatentStats> scenario_statistics(const npr::NprModel &model, const data::Dataset &train) {
    std::map<std::string, data::Dataset> by_id;
    for (const auto &s : train.samples)
        if (s.condition == sim::Condition::Nlos)
            by_id[s.scenario_id].samples.push_back(s);
    std::map<std::string, npr::LatentStats> out;
    for (auto &[id, ds] : by_id) {
        ds.feature_dim = train.feature_dim;
        const auto context = npr::make_context(model, ds);
        auto stats = npr::context_statistics(model, context);
        stats.forgetting = model.config.forgetting;
        out.emplace(id, std::move(stats));
    }
    return out;
}

std::vector<ScalingRow> measure_scaling(const npr::NprModel &model, const ScalingOptions &options) {
    if (options.sizes.empty() || options.aggregate_batch == 0 || options.aggregate_reps == 0 || options.gpr_reps == 0)
        throw InvalidInputError("scaling options must be positive");
    const auto n_max = *std::max_element(options.sizes.begin(), options.sizes.end());
    auto config = sim::default_scenarios(options.seed).front();
    config.nlos_probability = 1.0;
    const auto ds = data::make_dataset(sim::generate_scenario(config, n_max), model.config.max_paths);
    const auto context = npr::make_context(model, ds);
    const auto latents = npr::encode_context(model, context);

    Matrix features(static_cast<Eigen::Index>(sim::kFeatureCount), static_cast<Eigen::Index>(n_max));
    Vector targets(static_cast<Eigen::Index>(n_max));
    for (std::size_t i = 0; i < n_max; ++i) {
        const auto f = sim::pdp_features(ds.samples[i].pdp);
        for (std::size_t k = 0; k < f.size(); ++k)
            features(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = f[k];
        targets[static_cast<Eigen::Index>(i)] = ds.samples[i].delta_d_m;
    }
    // Standardize features so the unit length scale is meaningful.
    for (Eigen::Index k = 0; k < features.rows(); ++k) {
        const double m = features.row(k).mean();
        const double sd = std::sqrt((features.row(k).array() - m).square().mean());
        features.row(k) = (features.row(k).array() - m) / (sd > 0.0 ? sd : 1.0);
    }

    std::vector<ScalingRow> rows;
    for (const auto n : options.sizes) {
        std::span<const Vector> subset(latents.data(), n);
        volatile double sink = 0.0;
        std::vector<double> agg;
        for (std::size_t rep = 0; rep < options.aggregate_reps; ++rep) {
            const auto start = Clock::now();
            for (std::size_t b = 0; b < options.aggregate_batch; ++b)
                sink = sink + npr::aggregate(subset).mu[0];
            agg.push_back(elapsed_ms(start) / static_cast<double>(options.aggregate_batch));
        }
        std::vector<double> fit;
        const auto cols = static_cast<Eigen::Index>(n);
        for (std::size_t rep = 0; rep < options.gpr_reps; ++rep) {
            const auto start = Clock::now();
            const auto gp = baselines::gpr_fit(features.leftCols(cols), targets.head(cols), {});
            sink = sink + gp.weights[0];
            fit.push_back(elapsed_ms(start));
        }
        rows.push_back({n, median_of(agg), median_of(fit)});
    }
    return rows;
}

double linear_r2(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw InvalidInputError("linear fit needs two or more paired points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i] / n;
        my += y[i] / n;
    }
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0)
        throw InvalidInputError("linear fit needs distinct x values");
    if (syy == 0.0)
        return 1.0;
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (intercept + slope * x[i]);
        ss_res += e * e;
    }
    return 1.0 - ss_res / syy;
}

void write_scaling_csv(std::span<const ScalingRow> rows, const std::filesystem::path &path) {
    auto out = open_output(path);
    out << "n,aggregate_ms,gpr_fit_ms\n";
    for (const auto &r : rows)
        out << r.n << ',' << r.aggregate_ms << ',' << r.gpr_fit_ms << '\n';
}

nlohmann::json to_json(const EvalReport &r) {
    nlohmann::json cdf = nlohmann::json::array();
    for (const auto &p : r.cdf)
        cdf.push_back({p.quantile, p.error_m});
    return {{"technique", r.technique},
            {"p10_m", r.p10},
            {"p50_m", r.p50},
            {"p90_m", r.p90},
            {"online_time_ms", r.online_time_ms},
            {"adaptation_ms", r.adaptation_ms},
            {"adaptation_accepted", r.adaptation_accepted},
            {"improvement_vs_baseline", r.improvement_vs_baseline},
            {"train_scenarios", r.train_scenarios},
            {"test_scenario", r.test_scenario},
            {"n_samples", r.errors.size()},
            {"errors_m", r.errors},
            {"cdf", cdf}};
}

void write_json(std::span<const EvalReport> reports, const std::filesystem::path &path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto &r : reports)
        j.push_back(to_json(r));
    auto out = open_output(path);
    out << j.dump(1) << '\n';
}

void write_csv(std::span<const EvalReport> reports, const std::filesystem::path &path) {
    auto out = open_output(path);
    out << "technique,test_scenario,train_scenarios,n_samples,p10_m,p50_m,p90_m,online_time_ms,adaptation_ms,"
           "adaptation_accepted,improvement_vs_baseline\n";
    for (const auto &r : reports)
        out << r.technique << ',' << r.test_scenario << ',' << join(r.train_scenarios, ';') << ',' << r.errors.size()
            << ',' << r.p10 << ',' << r.p50 << ',' << r.p90 << ',' << r.online_time_ms << ',' << r.adaptation_ms << ','
            << r.adaptation_accepted << ',' << r.improvement_vs_baseline << '\n';
}

void write_cdf_csv(std::span<const EvalReport> reports, const std::filesystem::path &path) {
    auto out = open_output(path);
    out << "technique,quantile,error_m\n";
    for (const auto &r : reports)
        for (const auto &p : r.cdf)
            out << r.technique << ',' << p.quantile << ',' << p.error_m << '\n';
}

} // namespace nlos::eval
