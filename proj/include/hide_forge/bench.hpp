// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-task instruction benchmark and the experiment driver that
// runs every strategy, sweep and analysis over it.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hide_forge/anchors.hpp"
#include "hide_forge/cka.hpp"
#include "hide_forge/continual.hpp"
#include "hide_forge/model.hpp"
#include "hide_forge/report.hpp"

namespace hide_forge {

enum class Separability { separated, visual_confusable, text_confusable };

std::string_view separability_name(Separability s);
Separability parse_separability(std::string_view name);

/// One synthetic task.
///
/// A prompt shows `visual_prefix_len` noisy copies of center + offset[class]
/// and the instruction template with one slot token inserted. The answer is
/// a slot code shared by all tasks followed by this task's code for the class.
struct TaskSpec {
    std::string name;
    Separability separability = Separability::separated;
    std::string partner;  // task sharing one modality by design, if any
    Vector visual_center;
    Matrix class_offsets;  // n_classes × visual_dim
    double visual_noise = 0.0;
    std::vector<int> template_tokens;
    std::size_t slot_position = 0;
    std::vector<int> slot_tokens;
    std::vector<std::vector<int>> answer_table;  // index = class · n_slots + slot
    std::size_t n_train = 0;
    std::size_t n_test = 0;

    std::size_t n_classes() const { return class_offsets.rows(); }
    std::size_t n_slots() const { return slot_tokens.size(); }
    const std::vector<int>& answer_for(std::size_t cls, std::size_t slot) const;
    Sample draw(SeededRng& rng, std::uint64_t id, std::size_t prefix_len) const;
};

struct BenchConfig {
    std::string preset = "confusable";  // "confusable" or "separated"
    std::size_t n_tasks = 4;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::size_t n_classes = 4;
    std::size_t n_slots = 8;
    std::size_t template_len = 4;
    std::vector<std::size_t> answer_lengths = {2, 2, 3, 2};  // cycled over tasks
    double center_scale = 1.0;
    double offset_scale = 0.5;
    double visual_noise = 0.3;
    double separability_threshold = 0.5;
    std::size_t max_attempts = 64;

    void validate(const ModelConfig& model) const;
    friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

/// Pairwise anchor cosines between tasks, per modality.
struct SeparabilityReport {
    Matrix visual;
    Matrix instruction;
    double threshold = 0.5;
    std::size_t attempts = 0;
    // Pairs allowed above the threshold in one modality by design.
    bool exempt(std::size_t i, std::size_t j, bool visual_side) const;
    std::vector<Separability> classes;
    std::vector<std::string> partners;
    std::vector<std::string> names;
    // Every non-exempt off-diagonal pair is below the threshold.
    bool passed() const;
    std::string worst_pair() const;
};

struct TaskData {
    std::string task_id;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

struct Suite {
    std::uint64_t seed = 0;
    ModelConfig model;
    BenchConfig bench;
    std::size_t feat_dim = kDefaultFeatureDim;
    std::vector<TaskSpec> specs;
    std::vector<TaskData> data;
    SeparabilityReport separability;

    std::vector<TaskTestSet> test_sets() const;
};

// Measures pairwise anchor cosines of the tasks' training streams.
SeparabilityReport measure_separability(const FrozenEncoder& encoder, const std::vector<TaskSpec>& specs,
                                        const std::vector<TaskData>& data, double threshold);

// Deterministic in (model, bench, seed, feat_dim). Throws GenerationError
// when no attempt satisfies the separability threshold.
Suite generate_suite(const ModelConfig& model, const BenchConfig& bench, std::uint64_t seed,
                     std::size_t feat_dim = kDefaultFeatureDim);

// suite.json plus one train and one test JSONL file per task.
void write_suite(const Suite& suite, const std::filesystem::path& dir);
// Reads a written suite back and re-checks separability; throws
// IngestionError on malformed files or a failed check.
Suite read_suite(const std::filesystem::path& dir);

std::string sample_to_json(const Sample& sample);
Sample sample_from_json(const std::string& line, const ModelConfig& cfg);

struct SweepConfig {
    std::vector<double> epsilons = {0.25, 0.5, 0.75, 1.0};
    std::vector<double> temperatures = {0.05, 0.1, 0.5, 1.0};
    std::vector<Modality> modalities = {Modality::dual, Modality::visual_only, Modality::text_only};
    // Strategies re-evaluated at sweep points they depend on.
    std::vector<Strategy> strategies = {Strategy::hide, Strategy::merge_all};
    std::size_t order_permutations = 3;

    friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct CkaSettings {
    std::size_t probe_size = 256;
    ProbePosition position = ProbePosition::final_position;

    friend bool operator==(const CkaSettings&, const CkaSettings&) = default;
};

/// Everything one experiment run depends on.
struct SuiteConfig {
    std::uint64_t seed = 7;
    ModelConfig model;
    BenchConfig bench;
    RouterConfig router;
    TrainConfig train;
    double epsilon = 0.5;
    std::size_t feat_dim = kDefaultFeatureDim;
    std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
    SweepConfig sweep;
    CkaSettings cka;

    // Throws ConfigurationError on any invalid field.
    void validate() const;
    friend bool operator==(const SuiteConfig&, const SuiteConfig&) = default;
};

Suite generate_suite(const SuiteConfig& cfg);

// Throws ConfigurationError when the suite was generated under a different
// seed, model, bench or feature configuration.
void check_suite_matches(const SuiteConfig& cfg, const Suite& suite);

// Learns the suite's tasks in the given order (indices into suite.data).
ContinualState train_suite(const SuiteConfig& cfg, const Suite& suite, std::span<const std::size_t> order,
                           bool sequential_baseline);

// Round-robin over the tasks' test prompts until `size` prompts are taken.
std::vector<Prompt> cka_probe(const Suite& suite, std::size_t size);

// Layer-wise CKA between the single-task models of consecutively learned
// tasks, each with the projector as it was right after its own stage.
std::vector<CkaRow> consecutive_cka(const ContinualState& state, std::span<const Prompt> probe,
                                    ProbePosition position);

struct ParameterRow {
    Strategy strategy;
    LoadedParameterCount count;
};

// Loaded adapters per block for every strategy over all learned tasks.
std::vector<ParameterRow> parameter_table(const ContinualState& state);

// Percent of each task's test prompts whose highest router weight is their
// own task, with anchors taken from the training streams.
Vector routing_accuracy(const FrozenEncoder& encoder, const Suite& suite, const RouterConfig& router,
                        Modality modality);

struct OrderRow {
    std::vector<std::string> order;
    double last_mean = 0.0;
    double avg_mean = 0.0;
};

struct RunOptions {
    std::string command = "sweep";
    std::string config_path;
    bool sweeps = true;
    bool orders = true;
    bool cka = true;
};

struct SuiteRun {
    std::filesystem::path dir;
    std::vector<MetricsReport> reports;
    std::vector<CkaRow> cka;
    std::vector<ParameterRow> parameters;
    std::vector<OrderRow> orders;
};

// Trains, evaluates every strategy and sweep point, and writes all
// artifacts under a fresh timestamped directory inside `out_root`. A
// failing stage is rethrown with the stage name and seed in its message.
SuiteRun run_suite(const SuiteConfig& cfg, const Suite& suite, const std::filesystem::path& out_root,
                   const RunOptions& options = {});

}  // namespace hide_forge
