// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/cli.hpp"

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "hide_forge/bench.hpp"
#include "hide_forge/config_file.hpp"
#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

struct ConfigArgs {
    std::string path;
    std::optional<std::uint64_t> seed;
};

SuiteConfig load_config(const ConfigArgs& args) {
    SuiteConfig cfg;
    try {
        if (!args.path.empty()) {
            cfg = read_suite_config(args.path);
        }
        if (args.seed) {
            cfg.seed = *args.seed;
        }
        cfg.validate();
    } catch (const IngestionError& e) {
        throw UsageError(std::string("config: ") + e.what());
    } catch (const ConfigurationError& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return cfg;
}

void require_fresh(const fs::path& path) {
    if (fs::exists(path) && !(fs::is_directory(path) && fs::is_empty(path))) {
        throw UsageError("refusing to overwrite existing output " + path.string());
    }
}

fs::path manifest_path(const fs::path& out) {
    fs::path p = out;
    while (!p.empty() && p.filename().empty()) {
        p = p.parent_path();
    }
    return p.string() + ".manifest.json";
}

void write_manifest(const fs::path& path, const std::string& command, const std::string& config_path,
                    std::uint64_t seed, const fs::path& out, const std::string& hash) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    ordered_json j;
    j["command"] = command;
    j["config_path"] = config_path;
    j["seed"] = seed;
    j["output_dir"] = out.string();
    j["created_at"] = stamp;
    j["config_hash"] = hash;
    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    write_text_file(path, j.dump(2) + "\n");
}

std::string meta_or(const TensorContainer& c, const std::string& key, const std::string& fallback) {
    const auto it = c.metadata().find(key);
    return it == c.metadata().end() ? fallback : it->second;
}

Strategy strategy_arg(const std::string& name) {
    try {
        return parse_strategy(name);
    } catch (const std::exception&) {
        throw UsageError("unknown strategy '" + name + "'");
    }
}

Modality modality_arg(const std::string& name) {
    try {
        return parse_modality(name);
    } catch (const std::exception&) {
        throw UsageError("unknown modality '" + name + "'");
    }
}

ProbePosition position_arg(const std::string& name) {
    if (name == "final") return ProbePosition::final_position;
    if (name == "mean") return ProbePosition::mean_over_positions;
    throw UsageError("probe position must be final or mean, got '" + name + "'");
}

std::size_t task_index(const ContinualState& state, const std::string& id) {
    for (std::size_t t = 0; t < state.num_tasks(); ++t) {
        if (state.tasks()[t].adapters->task_id() == id) {
            return t;
        }
    }
    throw ContractError("the state has not learned a task named '" + id + "'");
}

// Test sets in the order the state learned its tasks.
std::vector<TaskTestSet> tests_in_state_order(const ContinualState& state, const Suite& suite) {
    if (state.seed() != suite.seed || !(state.config() == suite.model)) {
        throw ContractError("the data was generated for a different seed or model than the state");
    }
    const std::vector<TaskTestSet> all = suite.test_sets();
    std::vector<TaskTestSet> out;
    for (const TaskRecord& rec : state.tasks()) {
        const auto it = std::find_if(all.begin(), all.end(),
                                     [&](const TaskTestSet& t) { return t.task_id == rec.adapters->task_id(); });
        if (it == all.end()) {
            throw ContractError("the data has no test set for task '" + rec.adapters->task_id() + "'");
        }
        out.push_back(*it);
    }
    return out;
}

void add_config_options(CLI::App& cmd, ConfigArgs& args) {
    cmd.add_option("--config", args.path, "experiment config (YAML)")->check(CLI::ExistingFile);
    cmd.add_option("--seed", args.seed, "override the config seed");
}

struct GenDataArgs {
    ConfigArgs config;
    std::string out;
};

void run_gen_data(const GenDataArgs& a) {
    const SuiteConfig cfg = load_config(a.config);
    require_fresh(a.out);
    write_manifest(manifest_path(a.out), "gen-data", a.config.path, cfg.seed, a.out, config_hash(cfg));
    write_suite(generate_suite(cfg), a.out);
}

struct TrainArgs {
    ConfigArgs config;
    std::string data;
    std::optional<std::size_t> tasks;
    std::string out;
};

void run_train(const TrainArgs& a) {
    const SuiteConfig cfg = load_config(a.config);
    require_fresh(a.out);
    const std::string hash = config_hash(cfg);
    write_manifest(manifest_path(a.out), "train", a.config.path, cfg.seed, a.out, hash);
    const Suite suite = read_suite(a.data);
    try {
        check_suite_matches(cfg, suite);
    } catch (const ConfigurationError& e) {
        throw ContractError(e.what());
    }
    if (a.tasks && (*a.tasks == 0 || *a.tasks > suite.data.size())) {
        throw UsageError(fmt::format("--tasks must lie in [1, {}]", suite.data.size()));
    }
    std::vector<std::size_t> order(a.tasks.value_or(suite.data.size()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const ContinualState state = train_suite(cfg, suite, order, cfg.train.sequential_baseline);
    TensorContainer c = state.to_container();
    c.metadata()["run.config_hash"] = hash;
    c.metadata()["run.config_text"] = canonical_config_text(cfg);
    c.write(a.out);
}

struct ComposeArgs {
    std::string state;
    std::string strategy;
    std::string task;
    std::optional<std::size_t> stages;
    std::optional<double> epsilon;
    std::optional<double> temperature;
    std::string modality = "dual";
    std::string out;
};

ComposeOptions compose_options(const ContinualState& state, std::optional<std::size_t> stages,
                               std::optional<double> epsilon, std::optional<double> temperature,
                               const std::string& modality) {
    ComposeOptions o;
    o.stages = stages;
    o.epsilon = epsilon;
    if (temperature) {
        RouterConfig router = state.router();
        router.temperature = *temperature;
        o.router = router;
    }
    o.modality = modality_arg(modality);
    return o;
}

void run_compose(const ComposeArgs& a) {
    const Strategy strategy = strategy_arg(a.strategy);
    require_fresh(a.out);
    const TensorContainer stored = TensorContainer::read(a.state);
    const ContinualState state = ContinualState::from_container(stored);
    write_manifest(manifest_path(a.out), "compose", "", state.seed(), a.out, meta_or(stored, "run.config_hash", ""));
    std::optional<std::size_t> task;
    if (!a.task.empty()) {
        task = task_index(state, a.task);
    }
    const ComposeOptions o = compose_options(state, a.stages, a.epsilon, a.temperature, a.modality);
    composition_to_container(state, strategy, task, o).write(a.out);
}

struct EvalArgs {
    std::string state;
    std::string data;
    std::string strategy;
    std::optional<double> epsilon;
    std::optional<double> temperature;
    std::string modality = "dual";
    std::string out;
};

void run_eval(const EvalArgs& a) {
    const Strategy strategy = strategy_arg(a.strategy);
    require_fresh(a.out);
    const TensorContainer stored = TensorContainer::read(a.state);
    const ContinualState state = ContinualState::from_container(stored);
    const std::string hash = meta_or(stored, "run.config_hash", "");
    write_manifest(manifest_path(a.out), "eval", "", state.seed(), a.out, hash);
    const Suite suite = read_suite(a.data);
    const auto tests = tests_in_state_order(state, suite);
    const ComposeOptions o = compose_options(state, std::nullopt, a.epsilon, a.temperature, a.modality);
    const StrategyRun r = evaluate_all_stages(state, strategy, tests, o);

    MetricsReport report;
    report.config_hash = hash;
    report.config_text = meta_or(stored, "run.config_text", "");
    report.seed = state.seed();
    report.strategy = std::string(strategy_name(strategy));
    if (a.epsilon) {
        report.point = {"epsilon", fmt::format("{}", *a.epsilon)};
    } else if (a.temperature) {
        report.point = {"temperature", fmt::format("{}", *a.temperature)};
    } else if (o.modality != Modality::dual) {
        report.point = {"modality", a.modality};
    }
    for (const TaskTestSet& t : tests) {
        report.task_order.push_back(t.task_id);
    }
    report.matrix = r.matrix;
    report.routing = r.routing;
    write_text_file(a.out, report_to_json(report));
}

struct CkaArgs {
    std::string a;
    std::string b;
    std::string data;
    std::optional<std::size_t> probe_size;
    std::string position = "final";
    std::string out;
};

void run_cka(const CkaArgs& a) {
    const ProbePosition position = position_arg(a.position);
    require_fresh(a.out);
    const StoredComposition first = composition_from_container(TensorContainer::read(a.a));
    const StoredComposition second = composition_from_container(TensorContainer::read(a.b));
    if (first.seed != second.seed || first.frozen.base->checksum() != second.frozen.base->checksum()) {
        throw ContractError("the two compositions were built on different base models");
    }
    write_manifest(manifest_path(a.out), "cka", "", first.seed, a.out, "");
    const Suite suite = read_suite(a.data);
    if (suite.seed != first.seed || !(suite.model == first.frozen.base->config)) {
        throw ContractError("the probe data was generated for a different seed or model than the compositions");
    }
    std::size_t available = 0;
    for (const TaskData& d : suite.data) available += d.test.size();
    const auto probe = cka_probe(suite, a.probe_size.value_or(std::min(CkaSettings{}.probe_size, available)));
    const CkaRow row{fs::path(a.a).stem().string() + "|" + fs::path(a.b).stem().string(),
                     layerwise_scan(*first.frozen.base, first.model, second.model, probe, position)};
    write_cka_csv(a.out, std::span<const CkaRow>(&row, 1));
}

struct SweepArgs {
    ConfigArgs config;
    std::string data;
    std::string out;
    bool no_sweeps = false;
    bool no_orders = false;
    bool no_cka = false;
};

void run_sweep(const SweepArgs& a) {
    const SuiteConfig cfg = load_config(a.config);
    Suite suite = a.data.empty() ? generate_suite(cfg) : read_suite(a.data);
    try {
        check_suite_matches(cfg, suite);
    } catch (const ConfigurationError& e) {
        throw ContractError(e.what());
    }
    RunOptions options;
    options.command = "sweep";
    options.config_path = a.config.path;
    options.sweeps = !a.no_sweeps;
    options.orders = !a.no_orders;
    options.cka = !a.no_cka;
    fs::create_directories(a.out);
    const SuiteRun run = run_suite(cfg, suite, a.out, options);
    std::cerr << "wrote " << run.dir.string() << "\n";
}

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out;
};

void run_report(const ReportArgs& a) {
    require_fresh(a.out);
    std::vector<MetricsReport> all;
    for (const std::string& dir : a.inputs) {
        auto reports = collect_reports(dir);
        std::move(reports.begin(), reports.end(), std::back_inserter(all));
    }
    if (all.empty()) {
        throw IngestionError("no metrics reports found");
    }
    write_manifest(manifest_path(a.out), "report", "", all.front().seed, a.out, all.front().config_hash);
    write_text_file(a.out, summary_csv(all));
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Hierarchical LoRA decoupling for continual instruction tuning on synthetic tasks", "hide-forge"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic benchmark");
    add_config_options(*gen_cmd, gen.config);
    gen_cmd->add_option("--out", gen.out, "output directory (must not exist or be empty)")->required();

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "learn the benchmark's tasks in sequence");
    add_config_options(*train_cmd, train.config);
    train_cmd->add_option("--data", train.data, "directory written by gen-data")->required();
    train_cmd->add_option("--tasks", train.tasks, "learn only the first N tasks");
    train_cmd->add_option("--out", train.out, "state checkpoint to write")->required();

    ComposeArgs compose_a;
    auto* compose_cmd = app.add_subcommand("compose", "write the inference composition of one strategy");
    compose_cmd->add_option("--state", compose_a.state, "state checkpoint")->required()->check(CLI::ExistingFile);
    compose_cmd->add_option("--strategy", compose_a.strategy, "composition strategy")->required();
    compose_cmd->add_option("--task", compose_a.task, "true task id, for oracle strategies");
    compose_cmd->add_option("--stages", compose_a.stages, "number of learned tasks to include");
    compose_cmd->add_option("--epsilon", compose_a.epsilon, "fusion coefficient");
    compose_cmd->add_option("--temperature", compose_a.temperature, "router temperature");
    compose_cmd->add_option("--modality", compose_a.modality, "router modality: dual, visual-only or text-only");
    compose_cmd->add_option("--out", compose_a.out, "composition checkpoint to write")->required();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate one strategy after every stage");
    eval_cmd->add_option("--state", eval.state, "state checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eval.data, "directory written by gen-data")->required();
    eval_cmd->add_option("--strategy", eval.strategy, "composition strategy")->required();
    eval_cmd->add_option("--epsilon", eval.epsilon, "fusion coefficient");
    eval_cmd->add_option("--temperature", eval.temperature, "router temperature");
    eval_cmd->add_option("--modality", eval.modality, "router modality: dual, visual-only or text-only");
    eval_cmd->add_option("--out", eval.out, "metrics report (JSON) to write")->required();

    CkaArgs cka;
    auto* cka_cmd = app.add_subcommand("cka", "layer-wise CKA between two compositions");
    cka_cmd->add_option("--a", cka.a, "first composition checkpoint")->required()->check(CLI::ExistingFile);
    cka_cmd->add_option("--b", cka.b, "second composition checkpoint")->required()->check(CLI::ExistingFile);
    cka_cmd->add_option("--data", cka.data, "directory written by gen-data, source of probe prompts")->required();
    cka_cmd->add_option("--probe-size", cka.probe_size, "number of probe prompts (default: 256 or every test prompt, if fewer)");
    cka_cmd->add_option("--position", cka.position, "pooling: final or mean");
    cka_cmd->add_option("--out", cka.out, "CSV to write")->required();

    SweepArgs sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "run every strategy, sweep grid and analysis");
    add_config_options(*sweep_cmd, sweep.config);
    sweep_cmd->add_option("--data", sweep.data, "directory written by gen-data (generated when omitted)");
    sweep_cmd->add_option("--out", sweep.out, "root directory for the new run directory")->required();
    sweep_cmd->add_flag("--no-sweeps", sweep.no_sweeps, "skip the epsilon, temperature and modality grids");
    sweep_cmd->add_flag("--no-orders", sweep.no_orders, "skip the task-order permutations");
    sweep_cmd->add_flag("--no-cka", sweep.no_cka, "skip the consecutive-task CKA scan");

    ReportArgs report;
    auto* report_cmd = app.add_subcommand("report", "merge metrics reports into one CSV");
    report_cmd->add_option("--in", report.inputs, "directories to scan for reports")->required();
    report_cmd->add_option("--out", report.out, "summary CSV to write")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        if (*gen_cmd) run_gen_data(gen);
        if (*train_cmd) run_train(train);
        if (*compose_cmd) run_compose(compose_a);
        if (*eval_cmd) run_eval(eval);
        if (*cka_cmd) run_cka(cka);
        if (*sweep_cmd) run_sweep(sweep);
        if (*report_cmd) run_report(report);
    } catch (const UsageError& e) {
        std::cerr << "hide-forge: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "hide-forge: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return dispatch(args);
}

}  // namespace hide_forge
