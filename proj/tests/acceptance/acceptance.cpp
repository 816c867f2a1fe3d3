// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS or FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "hide_forge/bench.hpp"
#include "hide_forge/cka.hpp"
#include "hide_forge/continual.hpp"
#include "hide_forge/errors.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hide_forge;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

const std::vector<std::uint64_t> kSeeds = {7, 11, 13};

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string id;
    std::string title;
    std::function<Outcome(const fs::path&)> run;
};

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i == 0 ? "" : sep) + items[i];
    }
    return out;
}

std::string percent_list(const Vector& v) {
    std::vector<std::string> cells;
    for (double x : v) cells.push_back(fmt::format("{:.1f}", x));
    return "[" + join(cells, " ") + "]";
}

Outcome cka_oracle(const fs::path&) {
    const auto start = Clock::now();
    SeededRng rng(SeededRng::derive(1, "acceptance-cka"));
    double worst_rel = 0.0;
    double worst_self = 0.0;
    double worst_orth = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = 1 + rng.uniform_index(8);
        const std::size_t q = 1 + rng.uniform_index(8);
        const Matrix x = rng.normal_matrix(20, p, 1.0);
        const Matrix y = rng.normal_matrix(20, q, 1.0);
        const double want = oracle::brute_force_cka(oracle::to_dense(x), oracle::to_dense(y));
        worst_rel = std::max(worst_rel, std::abs(linear_cka(x, y) - want) / std::abs(want));
        worst_self = std::max(worst_self, std::abs(linear_cka(x, x) - 1.0));
        const Matrix rot = oracle::random_orthogonal(p, rng);
        worst_orth = std::max(worst_orth, std::abs(linear_cka(matmul(x, rot), y) - linear_cka(x, y)));
    }
    const double secs = seconds_since(start);
    return {worst_rel <= 1e-10 && worst_self <= 1e-12 && worst_orth <= 1e-8 && secs < 5.0,
            fmt::format("100 pairs: max rel err {:.1e}, self {:.1e}, orthogonal {:.1e}, {:.2f} s", worst_rel,
                        worst_self, worst_orth, secs)};
}

Outcome gradient_check(const fs::path&) {
    const auto start = Clock::now();
    const ModelConfig cfg = fixtures::tiny_config();
    const BaseModel base = BaseModel::random(cfg, 101);
    SeededRng rng(SeededRng::derive(2, "acceptance-gradients"));
    Projector proj = Projector::random(cfg, 202);
    proj.bias = rng.normal_vector(cfg.d_model, 0.1);
    TaskAdapterSet adapters = fixtures::random_adapters(cfg, "t", rng, 0.2);
    const Sample sample = fixtures::random_sample(cfg, rng, 3, 2);

    const Gradients grads = backward(base, proj, adapters, sample);
    auto loss = [&] {
        auto view = std::make_shared<const TaskAdapterSet>(adapters);
        return autoregressive_loss(forward(base, proj, single_set_composition(cfg, view), sample), cfg, sample);
    };
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst = 0.0;
    auto compare = [&](double analytic, double& coordinate) {
        const double numeric = oracle::central_difference(loss, coordinate, 1e-5);
        const double diff = std::abs(analytic - numeric);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const bool ok = diff <= 1e-4 * scale || diff <= 1e-9;
        if (scale > 1e-6) worst = std::max(worst, diff / scale);
        failures += !ok;
        ++checked;
    };
    const auto grad_sets = grads.adapters.adapters();
    auto live = adapters.adapters();
    for (std::size_t i = 0; i < live.size(); ++i) {
        for (std::size_t j = 0; j < live[i].a.size(); ++j) compare(grad_sets[i].a.data()[j], live[i].a.data()[j]);
        for (std::size_t j = 0; j < live[i].b.size(); ++j) compare(grad_sets[i].b.data()[j], live[i].b.data()[j]);
    }
    for (std::size_t j = 0; j < proj.weight.size(); ++j) compare(grads.projector.weight.data()[j], proj.weight.data()[j]);
    for (std::size_t j = 0; j < proj.bias.size(); ++j) compare(grads.projector.bias[j], proj.bias[j]);
    const double secs = seconds_since(start);
    return {failures == 0 && checked == adapters.parameter_count() + proj.parameter_count() && secs < 60.0,
            fmt::format("d_model {}, {} blocks: {} gradients, {} outside 1e-4, max rel err {:.1e}, {:.1f} s",
                        cfg.d_model, cfg.n_blocks, checked, failures, worst, secs)};
}

Outcome merge_linearity(const fs::path&) {
    const ModelConfig cfg;
    SeededRng rng(SeededRng::derive(3, "acceptance-merge"));
    std::vector<TaskAdapterSet> sets;
    std::vector<const TaskAdapterSet*> ptrs;
    Vector eps;
    for (std::size_t i = 0; i < 4; ++i) {
        sets.push_back(fixtures::random_adapters(cfg, "t" + std::to_string(i), rng, 0.1));
        eps.push_back(rng.uniform());
    }
    for (const auto& s : sets) ptrs.push_back(&s);
    const auto sites = non_top_sites(cfg);
    const MergedDelta merged = merge_adapters(ptrs, eps, sites);
    double worst = 0.0;
    for (std::size_t k = 0; k < 1000; ++k) {
        const SiteId id = sites[k % sites.size()];
        const Vector h = rng.normal_vector(site_shape(cfg, id.site).d_in, 1.0);
        const Vector fused = matvec(merged.at(id), h);
        Vector summed(fused.size(), 0.0);
        for (std::size_t i = 0; i < sets.size(); ++i) {
            const Vector d = adapter_delta(sets[i].at(id), h);
            for (std::size_t j = 0; j < d.size(); ++j) summed[j] += eps[i] * d[j];
        }
        for (std::size_t j = 0; j < fused.size(); ++j) worst = std::max(worst, std::abs(fused[j] - summed[j]));
    }
    return {worst <= 1e-8, fmt::format("4 tasks, {} sites, 1000 inputs: max abs err {:.1e}", sites.size(), worst)};
}

SuiteConfig separated_config(std::uint64_t seed) {
    SuiteConfig cfg;
    cfg.seed = seed;
    cfg.bench.preset = "separated";
    return cfg;
}

Outcome router_accuracy(const fs::path&) {
    bool pass = true;
    double worst_sum = 0.0;
    std::vector<std::string> lines;
    for (std::uint64_t seed : kSeeds) {
        const SuiteConfig cfg = separated_config(seed);
        const Suite suite = generate_suite(cfg);
        const FrozenParts frozen = FrozenParts::from_seed(cfg.model, seed, cfg.feat_dim);
        std::vector<TaskAnchor> anchors;
        for (const TaskData& d : suite.data) {
            anchors.push_back(extract_anchor(*frozen.encoder, d.task_id, d.train));
        }
        const auto router = make_router(frozen.encoder, anchors, cfg.router);
        for (const TaskData& d : suite.data) {
            for (const Sample& s : d.test) {
                const Vector w = router(s.prompt);
                double total = 0.0;
                for (double x : w) total += x;
                worst_sum = std::max(worst_sum, std::abs(total - 1.0));
            }
        }
        const Vector acc = routing_accuracy(*frozen.encoder, suite, cfg.router, Modality::dual);
        pass = pass && *std::min_element(acc.begin(), acc.end()) >= 95.0;
        lines.push_back(fmt::format("seed {} {}", seed, percent_list(acc)));
    }
    pass = pass && worst_sum <= 1e-9;
    return {pass, fmt::format("routing accuracy % {}; max |sum(d) - 1| {:.1e}", join(lines, ", "), worst_sum)};
}

const MetricsReport& find_report(const SuiteRun& run, Strategy s) {
    const auto it = std::find_if(run.reports.begin(), run.reports.end(), [&](const MetricsReport& r) {
        return r.strategy == strategy_name(s) && r.point == SweepPoint{};
    });
    if (it == run.reports.end()) {
        throw ContractError(fmt::format("run has no report for {}", strategy_name(s)));
    }
    return *it;
}

Outcome strategy_ordering(const fs::path& work) {
    std::size_t ordered_seeds = 0;
    std::size_t wrong_seeds = 0;
    bool fast = true;
    std::vector<std::string> lines;
    for (std::uint64_t seed : kSeeds) {
        SuiteConfig cfg;
        cfg.seed = seed;
        cfg.strategies = {Strategy::hide, Strategy::oracle_top, Strategy::merge_all, Strategy::wrong_top,
                          Strategy::seq_finetune};
        const auto start = Clock::now();
        RunOptions options;
        options.command = "acceptance";
        options.sweeps = options.orders = options.cka = false;
        const SuiteRun run = run_suite(cfg, generate_suite(cfg), work / "ordering", options);
        const double secs = seconds_since(start);
        fast = fast && secs < 600.0;
        auto last = [&](Strategy s) { return metrics(find_report(run, s).matrix).last; };
        const Vector oracle = last(Strategy::oracle_top);
        const Vector hide = last(Strategy::hide);
        const Vector merge = last(Strategy::merge_all);
        const Vector wrong = last(Strategy::wrong_top);
        const Vector seq = last(Strategy::seq_finetune);
        const std::size_t n = oracle.size();
        std::vector<std::string> broken;
        bool wrong_ok = true;
        for (std::size_t j = 0; j < n; ++j) {
            if (oracle[j] < hide[j]) broken.push_back(fmt::format("oracle<hide@{}", j));
            if (hide[j] < merge[j]) broken.push_back(fmt::format("hide<merge@{}", j));
            if (j + 1 < n && merge[j] < seq[j]) broken.push_back(fmt::format("merge<seq@{}", j));
            wrong_ok = wrong_ok && wrong[j] < oracle[j];
        }
        ordered_seeds += broken.empty();
        wrong_seeds += wrong_ok;
        lines.push_back(fmt::format("seed {}: oracle {} hide {} merge {} seq {} wrong {} ordering {} ({:.0f} s)", seed,
                                    percent_list(oracle), percent_list(hide), percent_list(merge), percent_list(seq),
                                    percent_list(wrong), broken.empty() ? "holds" : "breaks " + join(broken, " "),
                                    secs));
    }
    return {ordered_seeds >= 2 && wrong_seeds == 3 && fast,
            fmt::format("ordering in {}/3 seeds, wrong-top < oracle-top in {}/3 seeds\n      {}", ordered_seeds,
                        wrong_seeds, join(lines, "\n      "))};
}

Outcome top_block_cka(const fs::path&) {
    std::size_t holding = 0;
    std::vector<std::string> lines;
    for (std::uint64_t seed : kSeeds) {
        SuiteConfig cfg = separated_config(seed);
        cfg.bench.n_tasks = 2;
        cfg.sweep.order_permutations = 1;
        const Suite suite = generate_suite(cfg);
        const std::vector<std::size_t> order = {0, 1};
        const ContinualState state = train_suite(cfg, suite, order, false);
        const auto probe = cka_probe(suite, cfg.cka.probe_size);
        const std::vector<CkaRow> rows = consecutive_cka(state, probe, cfg.cka.position);
        const Vector& v = rows.at(0).values;
        std::vector<double> lower(v.begin(), v.end() - 1);
        std::sort(lower.begin(), lower.end());
        const std::size_t m = lower.size();
        const double median = m % 2 == 1 ? lower[m / 2] : 0.5 * (lower[m / 2 - 1] + lower[m / 2]);
        const bool ok = v.back() < median;
        holding += ok;
        std::vector<std::string> cells;
        for (double x : v) cells.push_back(fmt::format("{:.3f}", x));
        lines.push_back(fmt::format("seed {} [{}] top {} lower median {:.3f}", seed, join(cells, " "),
                                    ok ? "<" : ">=", median));
    }
    return {holding == 3, fmt::format("{}/3 seeds; {}", holding, join(lines, ", "))};
}

Outcome modality_routing(const fs::path&) {
    bool pass = true;
    std::vector<std::string> lines;
    for (std::uint64_t seed : kSeeds) {
        SuiteConfig cfg;
        cfg.seed = seed;
        const Suite suite = generate_suite(cfg);
        const FrozenParts frozen = FrozenParts::from_seed(cfg.model, seed, cfg.feat_dim);
        const Vector dual = routing_accuracy(*frozen.encoder, suite, cfg.router, Modality::dual);
        const Vector visual = routing_accuracy(*frozen.encoder, suite, cfg.router, Modality::visual_only);
        const Vector text = routing_accuracy(*frozen.encoder, suite, cfg.router, Modality::text_only);
        auto mean_over = [](const Vector& v, const std::vector<std::size_t>& idx) {
            double total = 0.0;
            for (std::size_t i : idx) total += v[i];
            return total / static_cast<double>(idx.size());
        };
        std::vector<std::size_t> all(suite.specs.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        auto pair_of = [&](Separability kind) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < suite.specs.size(); ++i) {
                if (suite.specs[i].separability == kind) idx.push_back(i);
            }
            return idx;
        };
        const auto visual_pair = pair_of(Separability::visual_confusable);
        const auto text_pair = pair_of(Separability::text_confusable);
        const double d = mean_over(dual, all);
        const double v = mean_over(visual, all);
        const double t = mean_over(text, all);
        const bool ok = !visual_pair.empty() && !text_pair.empty() && d >= v && d >= t &&
                        mean_over(visual, visual_pair) < mean_over(dual, visual_pair) &&
                        mean_over(text, text_pair) < mean_over(dual, text_pair);
        pass = pass && ok;
        lines.push_back(fmt::format(
            "seed {} dual {:.1f} visual {:.1f} text {:.1f}; visual pair {:.1f} vs {:.1f}, text pair {:.1f} vs {:.1f}",
            seed, d, v, t, mean_over(visual, visual_pair), mean_over(dual, visual_pair), mean_over(text, text_pair),
            mean_over(dual, text_pair)));
    }
    return {pass, join(lines, "\n      ")};
}

Outcome metrics_oracle(const fs::path&) {
    const Metrics m = metrics(AccuracyMatrix::from_rows({Vector{90}, Vector{80, 70}, Vector{75, 65, 60}}));
    const double last_err = std::abs(m.last_mean - 200.0 / 3.0);
    const double avg_err = std::abs(m.avg_mean - (245.0 / 3.0 + 67.5 + 60.0) / 3.0);
    return {last_err <= 1e-9 && avg_err <= 1e-9,
            fmt::format("Last {:.9f} (err {:.1e}), Avg {:.9f} (err {:.1e})", m.last_mean, last_err, m.avg_mean,
                        avg_err)};
}

std::map<std::string, std::string> report_files(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "manifest.json" &&
            e.path().filename() != "timing.json") {
            out[fs::relative(e.path(), dir).string()] = slurp(e.path());
        }
    }
    return out;
}

Outcome determinism(const fs::path& work) {
    SuiteConfig cfg;
    const Suite suite = generate_suite(cfg);
    RunOptions options;
    options.command = "acceptance";
    const auto start = Clock::now();
    const SuiteRun first = run_suite(cfg, suite, work / "determinism", options);
    const SuiteRun second = run_suite(cfg, generate_suite(cfg), work / "determinism", options);
    const auto a = report_files(first.dir);
    const auto b = report_files(second.dir);
    std::size_t differing = 0;
    for (const auto& [name, text] : a) {
        const auto it = b.find(name);
        differing += it == b.end() || it->second != text;
    }
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    return {!a.empty() && differing == 0 && first.dir != second.dir,
            fmt::format("{} JSON files per run, {} differ, {:.0f} s for two runs", a.size(), differing,
                        seconds_since(start))};
}

Outcome parameter_contract(const fs::path& work) {
    SuiteConfig cfg;
    cfg.bench.n_train = 40;
    cfg.bench.n_test = 20;
    cfg.cka.probe_size = 16;
    RunOptions options;
    options.command = "acceptance";
    options.sweeps = options.orders = options.cka = false;
    const SuiteRun run = run_suite(cfg, generate_suite(cfg), work / "parameters", options);
    const auto table = nlohmann::json::parse(slurp(run.dir / "parameters.json"));
    const std::size_t tasks = cfg.bench.n_tasks;
    const std::size_t blocks = cfg.model.n_blocks;
    const std::size_t expected_top = tasks * kSitesPerBlock;
    nlohmann::json hide;
    nlohmann::json expand;
    for (const auto& row : table.at("strategies")) {
        if (row.at("strategy") == strategy_name(Strategy::hide)) hide = row;
        if (row.at("strategy") == strategy_name(Strategy::expand_all)) expand = row;
    }
    if (hide.is_null() || expand.is_null()) {
        return {false, "parameters.json lacks hide or expand-all"};
    }
    const auto hide_adapters = hide.at("adapters_per_block").get<std::vector<std::size_t>>();
    const auto hide_merged = hide.at("merged_sites_per_block").get<std::vector<std::size_t>>();
    const auto expand_adapters = expand.at("adapters_per_block").get<std::vector<std::size_t>>();
    bool ok = hide_adapters.size() == blocks && expand_adapters.size() == blocks;
    for (std::size_t b = 0; ok && b < blocks; ++b) {
        const bool top = b + 1 == blocks;
        ok = hide_adapters[b] == (top ? expected_top : 0) && hide_merged[b] == (top ? 0 : kSitesPerBlock) &&
             expand_adapters[b] == expected_top;
    }
    auto list = [](const std::vector<std::size_t>& v) {
        std::vector<std::string> cells;
        for (std::size_t x : v) cells.push_back(std::to_string(x));
        return "[" + join(cells, " ") + "]";
    };
    return {ok, fmt::format("{} tasks x {} sites: hide adapters/block {} fused sites/block {}, expand-all {}; "
                            "adapter-equivalent totals hide {} expand-all {} (x{:.2f})",
                            tasks, kSitesPerBlock, list(hide_adapters), list(hide_merged), list(expand_adapters),
                            hide.at("adapter_equivalent_total").get<std::size_t>(),
                            expand.at("adapter_equivalent_total").get<std::size_t>(),
                            expand.at("adapter_equivalent_total").get<double>() /
                                hide.at("adapter_equivalent_total").get<double>())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<std::string> only;
    std::string work_arg;
    bool keep = false;
    app.add_option("--only", only, "criterion ids to run, e.g. C1 C5")->delimiter(',');
    app.add_option("--work", work_arg, "scratch directory for run artifacts");
    app.add_flag("--keep", keep, "keep the scratch directory");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria = {
        {"C1", "CKA oracle equivalence", cka_oracle},
        {"C2", "gradient correctness", gradient_check},
        {"C3", "merge linearity", merge_linearity},
        {"C4", "router validity and accuracy", router_accuracy},
        {"C5", "strategy ordering across seeds", strategy_ordering},
        {"C6", "top-block CKA below lower blocks", top_block_cka},
        {"C7", "dual-modality routing", modality_routing},
        {"C8", "metrics oracle", metrics_oracle},
        {"C9", "determinism of the default sweep", determinism},
        {"C10", "loaded-parameter contract", parameter_contract},
    };
    const std::set<std::string> selected(only.begin(), only.end());
    for (const std::string& id : selected) {
        if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.id == id; })) {
            std::cerr << "unknown criterion " << id << "\n";
            return 1;
        }
    }

    const fs::path work = work_arg.empty()
                              ? fs::temp_directory_path() / fmt::format("hide_forge_acceptance_{}",
                                                                        Clock::now().time_since_epoch().count())
                              : fs::path(work_arg);
    fs::create_directories(work);

    std::size_t failed = 0;
    for (const Criterion& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run(work);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << fmt::format("{} {:<4} {}: {}\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail)
                  << std::flush;
    }
    if (!keep) {
        fs::remove_all(work);
    }
    return failed == 0 ? 0 : 1;
}
