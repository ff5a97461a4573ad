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
// Acceptance suite: one PASS/FAIL line per criterion; nonzero exit when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "nlos/channel_sim.hpp"
#include "nlos/dataset_io.hpp"
#include "nlos/estimator.hpp"
#include "nlos/eval_harness.hpp"
#include "nlos/npr.hpp"
#include "nlos/random.hpp"
#include "oracles.hpp"

using namespace nlos;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char *title;
    double budget_s;
    std::function<Outcome()> body;
};

std::string fmt(const char *format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), format, a, b, c, d);
    return buf;
}

Outcome mmse_oracle() {
    Rng rng(101);
    std::uniform_real_distribution<double> dist(5.0, 100.0), prob(0.0, 1.0), bias(0.0, 3.0), s_los(0.02, 0.3),
        s_nlos(0.05, 0.5);
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
        const testing::MixtureDraw m{dist(rng), prob(rng), bias(rng), s_los(rng), s_nlos(rng)};
        const double d_hat = estimator::mmse_range(m.d_bar, m.p_nlos, m.mean_bias);
        worst = std::max(worst, std::abs(d_hat - testing::mixture_mean_on_grid(m)));
    }
    return {worst < 1e-6, fmt("100 draws, max |d_hat - grid posterior mean| = %.2e m (limit 1e-6)", worst)};
}

Outcome gradient_checks() {
    const testing::LossKind kinds[] = {testing::LossKind::Mse, testing::LossKind::GaussianNll,
                                       testing::LossKind::KlToPrior};
    double worst = 0.0;
    std::size_t checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto r = testing::gradient_check_trial(kinds[trial % 3], 5000 + static_cast<std::uint64_t>(trial));
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
    }
    return {worst < 1e-4 && checked > 0,
            fmt("100 trials over mse / gaussian_nll / kl, %.0f derivatives, max rel error %.2e (limit 1e-4)",
                static_cast<double>(checked), worst)};
}

double max_abs(const nn::Vector &v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Outcome aggregator_laws() {
    Rng rng(303);
    std::normal_distribution<double> g(1.0, 2.0);
    std::vector<nn::Vector> zs(100, nn::Vector(8));
    for (auto &z : zs)
        for (Eigen::Index k = 0; k < z.size(); ++k)
            z[k] = g(rng);
    const auto ref = npr::aggregate(zs);

    double perm_err = 0.0;
    for (int t = 0; t < 20; ++t) {
        auto p = zs;
        std::shuffle(p.begin(), p.end(), rng);
        const auto s = npr::aggregate(p);
        perm_err = std::max({perm_err, max_abs(s.mu - ref.mu), max_abs(s.var - ref.var)});
    }
    auto fold = npr::LatentStats::uninitialized(8);
    for (const auto &z : zs)
        fold = npr::aggregate_online(fold, z);
    const double stream_err = std::max(max_abs(fold.mu - ref.mu), max_abs(fold.var - ref.var));

    const auto one = npr::aggregate(std::vector<nn::Vector>{zs[0]});
    const auto same = npr::aggregate(std::vector<nn::Vector>(9, zs[1]));
    const bool degenerate = one.mu == zs[0] && one.var == nn::Vector::Zero(8) && one.count == 1 &&
                            same.mu == zs[1] && same.var == nn::Vector::Zero(8) && same.count == 9;
    return {perm_err <= 1e-12 && stream_err <= 1e-10 && degenerate,
            fmt("permutation %.1e (<= 1e-12), stream vs batch %.1e (<= 1e-10), degenerate cases ", perm_err,
                stream_err) +
                (degenerate ? "exact" : "WRONG")};
}

Outcome online_isolation() {
    const auto scenarios = sim::default_scenarios(4);
    auto ds = data::make_dataset(sim::generate_scenario(scenarios.front(), 800));
    auto [train, val] = data::split(ds, 0.8, 4);
    auto model = npr::make_model({}, 4);
    npr::train_encoder_decoder(model, train, val, {5, 128, 4});
    npr::train_decoder_head(model, train, npr::HeadOptions{.epochs = 5, .context_sets = 20});
    const auto before = model;

    const auto stream = sim::generate_scenario(scenarios.back(), 3000);
    std::size_t accepted = 0;
    for (const auto &s : stream) {
        if (accepted == 1000)
            break;
        accepted += npr::online_update(model, s.pdp, 0.0, 0.2) == npr::OnlineStatus::Accepted;
    }
    const bool nets = model.encoder == before.encoder && model.decoder == before.decoder;
    const bool rest = model.input_norm == before.input_norm &&
                      model.variance_calibration == before.variance_calibration &&
                      model.encoder_trained == before.encoder_trained && model.head_trained == before.head_trained;
    const bool stats_moved = !(model.stats == before.stats) && model.stats.count == before.stats.count + accepted;
    return {accepted == 1000 && nets && rest && stats_moved,
            fmt("%.0f accepted updates; encoder/decoder bit-identical: ", static_cast<double>(accepted)) +
                (nets ? "yes" : "NO") + ", other fields unchanged: " + (rest ? "yes" : "NO") +
                ", stats updated: " + (stats_moved ? "yes" : "NO")};
}

// Five training scenarios and one held-out scenario from the default catalog, split per scenario.
struct ProtocolData {
    data::Dataset train, val, test, unseen_stream, unseen_test;
    std::vector<std::string> train_ids;
    std::vector<data::Dataset> per_scenario_train;
};

ProtocolData protocol_data(std::uint64_t seed) {
    ProtocolData p;
    const auto scenarios = sim::default_scenarios(seed);
    std::vector<data::Dataset> tr, va, te;
    for (std::size_t i = 0; i + 1 < scenarios.size(); ++i) {
        const auto &c = scenarios[i];
        p.train_ids.push_back(c.scenario_id);
        auto sp = eval::protocol_split(data::make_dataset(sim::generate_scenario(c, 2000)), c.scenario_id, seed);
        tr.push_back(std::move(sp.train));
        va.push_back(std::move(sp.val));
        te.push_back(std::move(sp.test));
    }
    p.train = data::concat(tr);
    p.val = data::concat(va);
    p.test = data::concat(te);
    const auto &u = scenarios.back();
    auto usp = eval::protocol_split(data::make_dataset(sim::generate_scenario(u, 2000)), u.scenario_id, seed);
    p.unseen_stream = std::move(usp.train);
    p.unseen_test = std::move(usp.test);
    return p;
}

Outcome cross_scenario() {
    int passing = 0;
    std::ostringstream detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto p = protocol_data(seed);
        eval::BundleOptions bo;
        bo.seed = seed;
        const auto bundle = eval::train_bundle(p.train, p.val, bo);
        eval::OnlineOptions oo;
        oo.adaptation_size = 500;
        oo.eval.train_scenarios = p.train_ids;
        oo.eval.timing_runs = 20;
        const std::vector<std::string> names{"identity", "npr", "gpr", "mlp"};
        const auto r = eval::run_online_eval(names, bundle, p.unseen_stream, p.unseen_test, oo);
        const double improvement = r[1].improvement_vs_baseline;
        const bool ok = improvement >= 0.25 && r[1].p50 < r[2].p50 && r[1].p50 < r[3].p50;
        passing += ok;
        detail << "\n      seed " << seed << ": p50 none " << fmt("%.3f", r[0].p50) << " npr " << fmt("%.3f", r[1].p50)
               << " gpr " << fmt("%.3f", r[2].p50) << " mlp " << fmt("%.3f", r[3].p50) << " m, improvement "
               << fmt("%.1f%%", 100.0 * improvement) << ", " << r[1].adaptation_accepted << " LOS updates"
               << (ok ? "" : "  <- miss");
    }
    return {passing >= 4, fmt("%.0f of 5 seeds reach >= 25%% p50 improvement and beat GPR and frozen MLP (need 4)",
                              passing) +
                              detail.str()};
}

Outcome complexity() {
    const auto model = npr::make_model({}, 6);
    eval::ScalingOptions opts;
    opts.seed = 6;
    const auto rows = eval::measure_scaling(model, opts);
    std::vector<double> n, agg;
    for (const auto &r : rows) {
        n.push_back(static_cast<double>(r.n));
        agg.push_back(r.aggregate_ms);
    }
    const double r2 = eval::linear_r2(n, agg);
    double min_ratio = 1e300;
    std::ostringstream ratios;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double ratio = rows[i].gpr_fit_ms / rows[i - 1].gpr_fit_ms;
        ratios << (i > 1 ? ", " : "") << rows[i - 1].n << "->" << rows[i].n << " " << fmt("%.1f", ratio);
        if (rows[i - 1].n >= 400)
            min_ratio = std::min(min_ratio, ratio);
    }
    return {r2 > 0.9 && min_ratio >= 4.0,
            fmt("aggregation R^2 %.3f (> 0.9); GPR fit ratios ", r2) + ratios.str() + " (>= 4 from N = 400)"};
}

struct InDistribution {
    ProtocolData data;
    eval::ModelBundle bundle;
    eval::BundleTraces traces;
    double train_s = 0.0;
};

const InDistribution &in_distribution() {
    static const InDistribution run = [] {
        const auto start = std::chrono::steady_clock::now();
        InDistribution r;
        r.data = protocol_data(1);
        eval::BundleOptions bo;
        bo.seed = 1;
        r.bundle = eval::train_bundle(r.data.train, r.data.val, bo, &r.traces);
        r.train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    }();
    return run;
}

Outcome calibration() {
    const auto &run = in_distribution();
    const auto per_scenario = eval::scenario_statistics(run.bundle.npr, run.data.train);
    std::size_t inside = 0, total = 0;
    for (const auto &s : run.data.test.samples) {
        if (s.condition != sim::Condition::Nlos)
            continue;
        auto model = run.bundle.npr;
        model.stats = per_scenario.at(s.scenario_id);
        const auto pred = npr::predict(model, s.pdp);
        inside += std::abs(s.delta_d_m - pred.mean) <= std::sqrt(pred.variance);
        ++total;
    }
    const double coverage = static_cast<double>(inside) / static_cast<double>(total);
    return {coverage >= 0.58 && coverage <= 0.78,
            fmt("one-sigma coverage %.3f on %.0f in-distribution NLOS test samples (target [0.58, 0.78])", coverage,
                static_cast<double>(total))};
}

Outcome convergence() {
    const auto &run = in_distribution();
    const auto &tl = run.traces.encoder.train_loss;
    const double first = tl.front();
    const double best = *std::min_element(tl.begin(), tl.end());
    const double drop = 1.0 - best / first;
    const auto &hl = run.traces.head.loss;
    bool monotone = hl.size() >= 100;
    std::ostringstream windows;
    double prev = 0.0;
    for (std::size_t w = 0; w + 50 <= hl.size(); w += 50) {
        const double mean = std::accumulate(hl.begin() + static_cast<std::ptrdiff_t>(w),
                                            hl.begin() + static_cast<std::ptrdiff_t>(w + 50), 0.0) /
                            50.0;
        windows << (w ? ", " : "") << fmt("%.4f", mean);
        if (w && mean > prev)
            monotone = false;
        prev = mean;
    }
    return {drop >= 0.5 && monotone, fmt("encoder objective %.4f -> best %.4f (%.1f%% decrease, need 50%%); ", first,
                                         best, 100.0 * drop) +
                                         "head loss 50-epoch means " + windows.str() +
                                         (monotone ? " (non-increasing)" : " (INCREASING)")};
}

Outcome plumbing() {
    Rng rng(909);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> x(1000);
        for (auto &v : x)
            v = g(rng);
        for (int k = 0; k < 20; ++k) {
            const double q = u(rng);
            worst = std::max(worst, std::abs(eval::percentile(x, q) - testing::sorted_percentile(x, q)));
        }
    }

    auto ds = data::make_dataset(sim::generate_scenario(sim::default_scenarios(9).front(), 500));
    std::vector<std::vector<double>> rows;
    for (const auto &s : ds.samples)
        rows.push_back(data::encode(s.pdp, ds.max_paths()));
    ds.normalization = data::fit_normalization(rows);
    const auto path = std::filesystem::temp_directory_path() / "nlos_acceptance_roundtrip.jsonl";
    data::save(ds, path);
    const bool round_trip = data::load(path) == ds;
    std::filesystem::remove(path);

    const auto [a, b] = data::split(ds, 0.7, 9);
    std::vector<double> whole, parts;
    for (const auto &s : ds.samples)
        whole.push_back(s.true_distance_m);
    for (const auto *part : {&a, &b})
        for (const auto &s : part->samples)
            parts.push_back(s.true_distance_m);
    std::sort(whole.begin(), whole.end());
    std::sort(parts.begin(), parts.end());
    const bool partition = a.size() == 350 && b.size() == 150 && whole == parts &&
                           std::adjacent_find(whole.begin(), whole.end()) == whole.end();
    return {worst <= 1e-12 && round_trip && partition,
            fmt("percentile vs sort oracle %.1e (<= 1e-12); save/load identity: ", worst) +
                (round_trip ? "yes" : "NO") + "; split partition: " + (partition ? "yes" : "NO")};
}

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "MMSE oracle equivalence", 10.0, mmse_oracle},
        {2, "gradient correctness", 60.0, gradient_checks},
        {3, "aggregator laws", 5.0, aggregator_laws},
        {4, "online-update isolation", 30.0, online_isolation},
        {5, "cross-scenario improvement", 600.0, cross_scenario},
        {6, "complexity trends", 300.0, complexity},
        {7, "predictive calibration", 120.0, calibration},
        {8, "training convergence", 300.0, convergence},
        {9, "percentile and dataset plumbing", 10.0, plumbing},
    };
    int failed = 0;
    for (const auto &c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.body();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = seconds <= c.budget_s;
        const bool pass = o.pass && in_budget;
        failed += !pass;
        std::printf("[%s] %d. %s (%.1f s, budget %.0f s%s): %s\n", pass ? "PASS" : "FAIL", c.id, c.title, seconds,
                    c.budget_s, in_budget ? "" : ", OVER BUDGET", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
