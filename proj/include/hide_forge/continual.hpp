// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sequential task learning, inference-time composition strategies, greedy
// evaluation and the Last/Avg forgetting metrics.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hide_forge/adapters.hpp"
#include "hide_forge/anchors.hpp"
#include "hide_forge/checkpoint.hpp"
#include "hide_forge/model.hpp"

namespace hide_forge {

enum class Strategy {
    hide,               // fused lower blocks, routed expert mixture at the top block
    corresponding_all,  // true task's adapters at every block
    oracle_top,         // fused lower blocks, true task's adapters at the top block
    merge_all,          // every block fused
    wrong_top,          // fused lower blocks, another task's adapters at the top block
    seq_finetune,       // one adapter set fine-tuned task after task
    expand_all,         // routed expert mixture at every block
    expand_remaining,   // routed mixture at the lower blocks, fused top block
};

inline constexpr std::array<Strategy, 8> kAllStrategies = {
    Strategy::hide,      Strategy::corresponding_all, Strategy::oracle_top, Strategy::merge_all,
    Strategy::wrong_top, Strategy::seq_finetune,      Strategy::expand_all, Strategy::expand_remaining};

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);
// Oracle strategies read the ground-truth task label; harness use only.
bool requires_label(Strategy s);
bool is_routed(Strategy s);

struct TrainConfig {
    double lora_lr = 2e-3;
    double projector_lr = 2e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 1;
    double warmup_ratio = 0.03;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    // Also train the persistent adapter set behind seq_finetune.
    bool sequential_baseline = true;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Linear warm-up over ceil(warmup_ratio · total) steps, then cosine decay
// to zero. `step` is 0-based.
double learning_rate_at(std::size_t step, std::size_t total, double base, double warmup_ratio);

/// Frozen pieces fully determined by the model config and a seed.
struct FrozenParts {
    std::shared_ptr<const BaseModel> base;
    std::shared_ptr<const FrozenEncoder> encoder;
    Projector initial_projector;

    static FrozenParts from_seed(const ModelConfig& cfg, std::uint64_t seed,
                                 std::size_t feat_dim = kDefaultFeatureDim);
};

struct TaskRecord {
    std::shared_ptr<const TaskAdapterSet> adapters;
    TaskAnchor anchor;
};

struct SequentialSnapshot {
    std::shared_ptr<const TaskAdapterSet> adapters;
    std::shared_ptr<const Projector> projector;
};

struct StageLog {
    std::string task_id;
    std::vector<double> step_losses;  // mean per-sample loss of each optimizer step
    std::vector<double> sequential_step_losses;
    double seconds = 0.0;
};

/// Everything learned so far. Append-only: a stored adapter set, anchor or
/// projector snapshot never changes once its stage has finished.
class ContinualState {
 public:
    ContinualState(const ModelConfig& cfg, std::uint64_t seed, RouterConfig router = {}, double epsilon = 1.0,
                   TrainConfig train = {}, std::size_t feat_dim = kDefaultFeatureDim);

    const BaseModel& base() const { return *frozen_.base; }
    const ModelConfig& config() const { return frozen_.base->config; }
    const FrozenParts& frozen() const { return frozen_; }
    const FrozenEncoder& encoder() const { return *frozen_.encoder; }
    std::shared_ptr<const FrozenEncoder> shared_encoder() const { return frozen_.encoder; }
    std::uint64_t seed() const { return seed_; }
    std::size_t feature_dim() const { return feat_dim_; }
    const RouterConfig& router() const { return router_; }
    double epsilon() const { return epsilon_; }
    const TrainConfig& train_config() const { return train_; }

    std::size_t num_tasks() const { return tasks_.size(); }
    const std::vector<TaskRecord>& tasks() const { return tasks_; }
    std::vector<TaskAnchor> anchors(std::size_t stages) const;

    // Shared projector after `stages` tasks (0 = before any training).
    std::shared_ptr<const Projector> projector_after(std::size_t stages) const;
    std::shared_ptr<const Projector> projector() const { return projector_after(num_tasks()); }

    bool has_sequential_track() const { return !sequential_.empty(); }
    const SequentialSnapshot& sequential_after(std::size_t stages) const;

    const std::vector<StageLog>& logs() const { return logs_; }

    // Trains a fresh zero-init adapter set (and the shared projector) on the
    // answer loss, accumulates the task anchor in the same pass and appends
    // both. Throws IngestionError on a malformed sample and ContractError on
    // an empty dataset or a task id that was already learned.
    void learn_task(const std::string& task_id, std::span<const Sample> dataset);

    TensorContainer to_container() const;
    // Rebuilds the frozen parts from the stored seed and verifies the base
    // checksum. Throws IngestionError on any inconsistency.
    static ContinualState from_container(const TensorContainer& container);

 private:
    FrozenParts frozen_;
    std::uint64_t seed_;
    std::size_t feat_dim_;
    RouterConfig router_;
    double epsilon_;
    TrainConfig train_;
    std::vector<TaskRecord> tasks_;
    std::vector<std::shared_ptr<const Projector>> projectors_;  // index = stages
    std::vector<SequentialSnapshot> sequential_;                // index = stages − 1
    std::vector<StageLog> logs_;
};

struct ComposeOptions {
    std::optional<std::size_t> stages;  // tasks visible, default all learned
    std::optional<double> epsilon;      // default: the state's ε
    std::optional<RouterConfig> router;  // default: the state's router
    Modality modality = Modality::dual;
};

// Per-prompt expert weights from the fused anchor similarities.
std::function<Vector(const Prompt&)> make_router(std::shared_ptr<const FrozenEncoder> encoder,
                                                std::vector<TaskAnchor> anchors, const RouterConfig& router);

// Inference model for a strategy over the first `stages` tasks. Throws
// ContractError when no task is visible, or when a label is given to a
// label-free strategy or withheld from an oracle one.
AdaptedModel compose(const ContinualState& state, Strategy strategy, std::optional<std::size_t> true_task,
                     const ComposeOptions& options = {});

/// A composed inference model stored on its own, with the frozen parts
/// rebuilt from the stored seed.
struct StoredComposition {
    FrozenParts frozen;
    std::uint64_t seed = 0;
    std::string strategy;
    std::size_t stages = 0;
    AdaptedModel model;
};

// Composes and serializes; the router, when present, is stored as its
// anchors and effective configuration.
TensorContainer composition_to_container(const ContinualState& state, Strategy strategy,
                                         std::optional<std::size_t> true_task, const ComposeOptions& options = {});
// Throws IngestionError on a malformed container or a base checksum mismatch.
StoredComposition composition_from_container(const TensorContainer& container);

struct TaskTestSet {
    std::string task_id;
    std::vector<Sample> samples;
};

struct EvaluationRow {
    Vector accuracy;          // percent, one per visible task
    Vector routing_accuracy;  // percent of prompts routed to their own task; empty unless routed
};

// Greedy exact-match accuracy on the visible tasks' test sets. Samples are
// spread over worker threads and reduced in task/sample order. Throws
// ContractError when a visible task has no matching test set.
EvaluationRow evaluate(const ContinualState& state, Strategy strategy, std::span<const TaskTestSet> tests,
                       const ComposeOptions& options = {});

/// Lower-triangular A[t][j]: accuracy on task j after stage t, in percent.
class AccuracyMatrix {
 public:
    AccuracyMatrix() = default;
    static AccuracyMatrix from_rows(std::vector<Vector> rows);

    // Row t must hold t+1 entries in [0, 100]; throws ContractError otherwise.
    void append(Vector row);
    std::size_t stages() const { return rows_.size(); }
    double at(std::size_t t, std::size_t j) const;
    const std::vector<Vector>& rows() const { return rows_; }

    friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
    std::vector<Vector> rows_;
};

struct Metrics {
    Vector last;  // A[T][j]
    double last_mean = 0.0;
    Vector avg;  // mean over t ≥ j of A[t][j]
    double avg_mean = 0.0;
};

// Throws ContractError on an empty matrix.
Metrics metrics(const AccuracyMatrix& matrix);

struct StrategyRun {
    AccuracyMatrix matrix;
    std::vector<Vector> routing;  // per stage, when routed
};

// evaluate() at every stage 1..num_tasks.
StrategyRun evaluate_all_stages(const ContinualState& state, Strategy strategy, std::span<const TaskTestSet> tests,
                                ComposeOptions options = {});

}  // namespace hide_forge
