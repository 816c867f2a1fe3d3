// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <functional>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "hide_forge/bench.hpp"
#include "hide_forge/config_file.hpp"
#include "hide_forge/errors.hpp"

namespace hide_forge {

using ordered_json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

bool depends_on_epsilon(Strategy s) {
    return s == Strategy::hide || s == Strategy::oracle_top || s == Strategy::merge_all || s == Strategy::wrong_top ||
           s == Strategy::expand_remaining;
}

std::size_t permutation_limit(std::size_t n) {
    std::size_t total = 1;
    for (std::size_t k = 2; k <= n && total < 1'000'000; ++k) {
        total *= k;
    }
    return total;
}

std::vector<std::size_t> identity_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    return order;
}

std::vector<std::vector<std::size_t>> task_orders(std::uint64_t seed, std::size_t n_tasks, std::size_t count) {
    SeededRng rng(SeededRng::derive(seed, "orders"));
    const auto identity = identity_order(n_tasks);
    std::set<std::vector<std::size_t>> seen{identity};
    std::vector<std::vector<std::size_t>> out;
    while (out.size() < count) {
        auto order = identity;
        rng.shuffle(order);
        if (seen.insert(order).second) {
            out.push_back(std::move(order));
        }
    }
    return out;
}

std::vector<TaskTestSet> ordered_tests(const Suite& suite, std::span<const std::size_t> order) {
    const std::vector<TaskTestSet> all = suite.test_sets();
    std::vector<TaskTestSet> out;
    for (std::size_t idx : order) {
        out.push_back(all[idx]);
    }
    return out;
}

std::vector<std::string> task_names(const Suite& suite, std::span<const std::size_t> order) {
    std::vector<std::string> out;
    for (std::size_t idx : order) {
        out.push_back(suite.data[idx].task_id);
    }
    return out;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += (i == 0 ? "" : sep) + items[i];
    }
    return out;
}

std::string utc_timestamp(const char* format) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

std::filesystem::path fresh_run_dir(const std::filesystem::path& root, std::uint64_t seed) {
    const std::string stem = fmt::format("run-{}-s{}", utc_timestamp("%Y%m%dT%H%M%SZ"), seed);
    std::filesystem::path dir = root / stem;
    for (int n = 2; std::filesystem::exists(dir); ++n) {
        dir = root / fmt::format("{}-{}", stem, n);
    }
    std::filesystem::create_directories(dir / "reports");
    return dir;
}

template <typename Error>
[[noreturn]] void rethrow_as(const Error& e, const std::string& context) {
    throw Error(context + e.what());
}

// Runs one pipeline stage; a failure is recorded next to the run's
// artifacts and rethrown with the stage name and seed prepended.
template <typename Fn>
void run_stage(const std::string& name, std::uint64_t seed, const std::filesystem::path& dir, Fn&& fn) {
    const std::string context = fmt::format("stage '{}' (seed {}): ", name, seed);
    auto record = [&](const std::exception& e) {
        ordered_json j;
        j["stage"] = name;
        j["seed"] = seed;
        j["error"] = e.what();
        try {
            write_text_file(dir / "failure.json", j.dump(2) + "\n");
        } catch (const std::exception&) {
        }
    };
    try {
        fn();
    } catch (const DomainError& e) {
        record(e);
        rethrow_as(e, context);
    } catch (const ContractError& e) {
        record(e);
        rethrow_as(e, context);
    } catch (const ConfigurationError& e) {
        record(e);
        rethrow_as(e, context);
    } catch (const IngestionError& e) {
        record(e);
        rethrow_as(e, context);
    } catch (const GenerationError& e) {
        record(e);
        rethrow_as(e, context);
    } catch (const std::exception& e) {
        record(e);
        throw std::runtime_error(context + e.what());
    }
}

ordered_json count_json(const std::vector<std::size_t>& v) { return ordered_json(v); }

std::string parameters_json(const std::vector<ParameterRow>& rows, const ContinualState& state) {
    ordered_json j;
    j["num_tasks"] = state.num_tasks();
    j["sites_per_block"] = kSitesPerBlock;
    ordered_json list = ordered_json::array();
    for (const ParameterRow& r : rows) {
        ordered_json row;
        row["strategy"] = strategy_name(r.strategy);
        row["adapters_per_block"] = count_json(r.count.adapters_per_block);
        row["merged_sites_per_block"] = count_json(r.count.merged_sites_per_block);
        row["adapter_equivalent_total"] = r.count.adapter_equivalent_total;
        row["dense_total"] = r.count.dense_total;
        list.push_back(std::move(row));
    }
    j["strategies"] = std::move(list);
    return j.dump(2) + "\n";
}

std::string parameters_csv(const std::vector<ParameterRow>& rows, std::size_t n_blocks) {
    std::string out = "strategy";
    for (std::size_t b = 0; b < n_blocks; ++b) {
        out += fmt::format(",adapters_block{}", b);
    }
    for (std::size_t b = 0; b < n_blocks; ++b) {
        out += fmt::format(",merged_sites_block{}", b);
    }
    out += ",adapter_equivalent_total,dense_total\n";
    for (const ParameterRow& r : rows) {
        out += strategy_name(r.strategy);
        for (std::size_t v : r.count.adapters_per_block) {
            out += fmt::format(",{}", v);
        }
        for (std::size_t v : r.count.merged_sites_per_block) {
            out += fmt::format(",{}", v);
        }
        out += fmt::format(",{},{}\n", r.count.adapter_equivalent_total, r.count.dense_total);
    }
    return out;
}

std::string orders_csv(const std::vector<OrderRow>& rows) {
    std::string out = "order,last_mean,avg_mean,last_delta_vs_first\n";
    for (const OrderRow& r : rows) {
        out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", join(r.order, ">"), r.last_mean, r.avg_mean,
                           r.last_mean - rows.front().last_mean);
    }
    return out;
}

}  // namespace

void SuiteConfig::validate() const {
    model.validate();
    bench.validate(model);
    router.validate();
    train.validate();
    if (!std::isfinite(epsilon)) {
        throw ConfigurationError("run.epsilon must be finite");
    }
    if (feat_dim == 0) {
        throw ConfigurationError("run.feat_dim must be positive");
    }
    const auto unique = [](const std::vector<Strategy>& v) {
        return std::set<Strategy>(v.begin(), v.end()).size() == v.size();
    };
    if (strategies.empty() || !unique(strategies) || !unique(sweep.strategies)) {
        throw ConfigurationError("strategy lists must be non-empty and free of repeats");
    }
    if (std::any_of(sweep.epsilons.begin(), sweep.epsilons.end(), [](double e) { return !std::isfinite(e); })) {
        throw ConfigurationError("sweep.epsilons must be finite");
    }
    if (std::any_of(sweep.temperatures.begin(), sweep.temperatures.end(), [](double t) { return !(t > 0.0); })) {
        throw ConfigurationError("sweep.temperatures must be positive");
    }
    if (sweep.order_permutations >= permutation_limit(bench.n_tasks)) {
        throw ConfigurationError(fmt::format("sweep.order_permutations: {} tasks have fewer than {} non-default orders",
                                             bench.n_tasks, sweep.order_permutations));
    }
    if (cka.probe_size < 2 || cka.probe_size > bench.n_tasks * bench.n_test) {
        throw ConfigurationError("cka.probe_size must lie between 2 and the number of test prompts");
    }
}

Suite generate_suite(const SuiteConfig& cfg) {
    cfg.validate();
    return generate_suite(cfg.model, cfg.bench, cfg.seed, cfg.feat_dim);
}

void check_suite_matches(const SuiteConfig& cfg, const Suite& suite) {
    if (suite.seed != cfg.seed || !(suite.model == cfg.model) || !(suite.bench == cfg.bench) ||
        suite.feat_dim != cfg.feat_dim) {
        throw ConfigurationError(
            fmt::format("dataset was generated with seed {} under a different model, bench or feature "
                        "configuration than the run (seed {})",
                        suite.seed, cfg.seed));
    }
}

ContinualState train_suite(const SuiteConfig& cfg, const Suite& suite, std::span<const std::size_t> order,
                           bool sequential_baseline) {
    TrainConfig train = cfg.train;
    train.sequential_baseline = sequential_baseline;
    ContinualState state(cfg.model, cfg.seed, cfg.router, cfg.epsilon, train, cfg.feat_dim);
    for (std::size_t idx : order) {
        if (idx >= suite.data.size()) {
            throw ContractError(fmt::format("task index {} outside the suite", idx));
        }
        state.learn_task(suite.data[idx].task_id, suite.data[idx].train);
    }
    return state;
}

std::vector<Prompt> cka_probe(const Suite& suite, std::size_t size) {
    std::vector<Prompt> probe;
    for (std::size_t i = 0; probe.size() < size; ++i) {
        bool any = false;
        for (const TaskData& d : suite.data) {
            if (i < d.test.size() && probe.size() < size) {
                probe.push_back(d.test[i].prompt);
                any = true;
            }
        }
        if (!any) {
            throw ContractError(fmt::format("CKA probe of {} prompts exceeds the test sets", size));
        }
    }
    return probe;
}

std::vector<CkaRow> consecutive_cka(const ContinualState& state, std::span<const Prompt> probe,
                                    ProbePosition position) {
    std::vector<CkaRow> rows;
    const auto single = [&](std::size_t t) {
        AdaptedModel m;
        m.projector = state.projector_after(t + 1);
        m.composition = single_set_composition(state.config(), state.tasks()[t].adapters);
        m.tag = state.tasks()[t].adapters->task_id();
        return m;
    };
    for (std::size_t t = 0; t + 1 < state.num_tasks(); ++t) {
        const AdaptedModel a = single(t);
        const AdaptedModel b = single(t + 1);
        rows.push_back({a.tag + "|" + b.tag, layerwise_scan(state.base(), a, b, probe, position)});
    }
    return rows;
}

std::vector<ParameterRow> parameter_table(const ContinualState& state) {
    std::vector<ParameterRow> rows;
    for (Strategy s : kAllStrategies) {
        const std::optional<std::size_t> label = requires_label(s) ? std::optional<std::size_t>(0) : std::nullopt;
        const AdaptedModel m = compose(state, s, label);
        rows.push_back({s, count_loaded_parameters(m.composition, state.config())});
    }
    return rows;
}

Vector routing_accuracy(const FrozenEncoder& encoder, const Suite& suite, const RouterConfig& router,
                        Modality modality) {
    std::vector<TaskAnchor> anchors;
    for (const TaskData& d : suite.data) {
        anchors.push_back(extract_anchor(encoder, d.task_id, d.train));
    }
    Vector out;
    for (std::size_t j = 0; j < suite.data.size(); ++j) {
        const auto& test = suite.data[j].test;
        if (test.empty()) {
            throw ContractError("routing accuracy needs a non-empty test set for " + suite.data[j].task_id);
        }
        std::size_t hits = 0;
        for (const Sample& s : test) {
            hits += argmax(ablated_score_tasks(encoder, anchors, s.prompt, router, modality)) == j ? 1 : 0;
        }
        out.push_back(100.0 * static_cast<double>(hits) / static_cast<double>(test.size()));
    }
    return out;
}

SuiteRun run_suite(const SuiteConfig& cfg, const Suite& suite, const std::filesystem::path& out_root,
                   const RunOptions& options) {
    cfg.validate();
    check_suite_matches(cfg, suite);
    const std::string hash = config_hash(cfg);
    const std::string text = canonical_config_text(cfg);

    SuiteRun run;
    run.dir = fresh_run_dir(out_root, cfg.seed);
    {
        ordered_json manifest;
        manifest["command"] = options.command;
        manifest["config_path"] = options.config_path;
        manifest["seed"] = cfg.seed;
        manifest["output_dir"] = run.dir.string();
        manifest["created_at"] = utc_timestamp("%Y-%m-%dT%H:%M:%SZ");
        manifest["config_hash"] = hash;
        write_text_file(run.dir / "manifest.json", manifest.dump(2) + "\n");
        write_text_file(run.dir / "config.yaml", text);
    }

    ordered_json timing;
    timing["note"] = "wall-clock seconds; not part of the deterministic reports";
    const auto default_order = identity_order(suite.data.size());
    const auto tests = ordered_tests(suite, default_order);

    auto emit = [&](Strategy s, SweepPoint point, const StrategyRun& r, const std::vector<std::string>& order,
                    double seconds) {
        MetricsReport report;
        report.config_hash = hash;
        report.config_text = text;
        report.seed = cfg.seed;
        report.strategy = std::string(strategy_name(s));
        report.point = std::move(point);
        report.task_order = order;
        report.matrix = r.matrix;
        report.routing = r.routing;
        const std::string file = report_file_name(report);
        write_text_file(run.dir / "reports" / file, report_to_json(report));
        timing["evaluation"][file] = seconds;
        run.reports.push_back(std::move(report));
    };

    std::optional<ContinualState> state;
    run_stage("train", cfg.seed, run.dir, [&] {
        state.emplace(train_suite(cfg, suite, default_order, cfg.train.sequential_baseline));
        for (const StageLog& log : state->logs()) {
            timing["training"][log.task_id] = log.seconds;
        }
    });

    const auto names = task_names(suite, default_order);
    run_stage("evaluate", cfg.seed, run.dir, [&] {
        for (Strategy s : cfg.strategies) {
            if (s == Strategy::seq_finetune && !state->has_sequential_track()) {
                continue;
            }
            const auto start = Clock::now();
            const StrategyRun r = evaluate_all_stages(*state, s, tests);
            emit(s, {}, r, names, seconds_since(start));
        }
    });

    if (options.sweeps) {
        run_stage("sweep", cfg.seed, run.dir, [&] {
            for (double eps : cfg.sweep.epsilons) {
                for (Strategy s : cfg.sweep.strategies) {
                    if (!depends_on_epsilon(s)) continue;
                    ComposeOptions o;
                    o.epsilon = eps;
                    const auto start = Clock::now();
                    emit(s, {"epsilon", fmt::format("{}", eps)}, evaluate_all_stages(*state, s, tests, o), names,
                         seconds_since(start));
                }
            }
            for (double temp : cfg.sweep.temperatures) {
                for (Strategy s : cfg.sweep.strategies) {
                    if (!is_routed(s)) continue;
                    ComposeOptions o;
                    RouterConfig router = cfg.router;
                    router.temperature = temp;
                    o.router = router;
                    const auto start = Clock::now();
                    emit(s, {"temperature", fmt::format("{}", temp)}, evaluate_all_stages(*state, s, tests, o), names,
                         seconds_since(start));
                }
            }
            for (Modality m : cfg.sweep.modalities) {
                for (Strategy s : cfg.sweep.strategies) {
                    if (!is_routed(s)) continue;
                    ComposeOptions o;
                    o.modality = m;
                    const auto start = Clock::now();
                    emit(s, {"modality", std::string(modality_name(m))}, evaluate_all_stages(*state, s, tests, o),
                         names, seconds_since(start));
                }
            }
        });
    }

    if (options.orders && cfg.sweep.order_permutations > 0) {
        run_stage("orders", cfg.seed, run.dir, [&] {
            const auto existing = std::find_if(run.reports.begin(), run.reports.end(), [](const MetricsReport& r) {
                return r.strategy == strategy_name(Strategy::hide) && r.point == SweepPoint{};
            });
            const Metrics base_order = metrics(existing != run.reports.end()
                                                   ? existing->matrix
                                                   : evaluate_all_stages(*state, Strategy::hide, tests).matrix);
            run.orders.push_back({names, base_order.last_mean, base_order.avg_mean});
            for (const auto& order : task_orders(cfg.seed, suite.data.size(), cfg.sweep.order_permutations)) {
                const auto start = Clock::now();
                const ContinualState permuted = train_suite(cfg, suite, order, false);
                const auto order_names = task_names(suite, order);
                const StrategyRun r = evaluate_all_stages(permuted, Strategy::hide, ordered_tests(suite, order));
                const Metrics m = metrics(r.matrix);
                run.orders.push_back({order_names, m.last_mean, m.avg_mean});
                emit(Strategy::hide, {"order", join(order_names, ">")}, r, order_names, seconds_since(start));
            }
            write_text_file(run.dir / "orders.csv", orders_csv(run.orders));
        });
    }

    if (options.cka && state->num_tasks() >= 2) {
        run_stage("cka", cfg.seed, run.dir, [&] {
            const auto start = Clock::now();
            const auto probe = cka_probe(suite, cfg.cka.probe_size);
            run.cka = consecutive_cka(*state, probe, cfg.cka.position);
            write_cka_csv(run.dir / "cka.csv", run.cka);
            timing["cka"] = seconds_since(start);
        });
    }

    run_stage("report", cfg.seed, run.dir, [&] {
        run.parameters = parameter_table(*state);
        write_text_file(run.dir / "parameters.json", parameters_json(run.parameters, *state));
        write_text_file(run.dir / "parameters.csv", parameters_csv(run.parameters, cfg.model.n_blocks));
        write_text_file(run.dir / "metrics.csv", summary_csv(run.reports));
        write_text_file(run.dir / "accuracy.csv", accuracy_csv(run.reports));
        write_text_file(run.dir / "routing.csv", routing_csv(run.reports));
        write_text_file(run.dir / "timing.json", timing.dump(2) + "\n");
    });
    return run;
}

}  // namespace hide_forge
