// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/continual.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "hide_forge/errors.hpp"
#include "hide_forge/parallel.hpp"
#include "hide_forge/state_io.hpp"

namespace hide_forge {

namespace {

constexpr double kPi = 3.141592653589793;

struct AdamMoments {
    TaskAdapterSet m_adapters, v_adapters;
    Projector m_projector, v_projector;
    std::size_t steps = 0;

    AdamMoments(const TaskAdapterSet& like, const ModelConfig& cfg)
        : m_adapters(TaskAdapterSet::zeros_like(like)),
          v_adapters(TaskAdapterSet::zeros_like(like)),
          m_projector(Projector::zeros(cfg)),
          v_projector(Projector::zeros(cfg)) {}
};

void adam_step(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
               double lr, const TrainConfig& cfg, std::size_t t) {
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
        v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
}

void apply_update(TaskAdapterSet& adapters, Projector& projector, const Gradients& g, AdamMoments& moments,
                  double lora_lr, double projector_lr, const TrainConfig& cfg) {
    const std::size_t t = ++moments.steps;
    auto params = adapters.adapters();
    const auto grads = g.adapters.adapters();
    auto m = moments.m_adapters.adapters();
    auto v = moments.v_adapters.adapters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        adam_step(params[i].a.values(), grads[i].a.values(), m[i].a.values(), v[i].a.values(), lora_lr, cfg, t);
        adam_step(params[i].b.values(), grads[i].b.values(), m[i].b.values(), v[i].b.values(), lora_lr, cfg, t);
    }
    adam_step(projector.weight.values(), g.projector.weight.values(), moments.m_projector.weight.values(),
              moments.v_projector.weight.values(), projector_lr, cfg, t);
    adam_step(projector.bias, g.projector.bias, moments.m_projector.bias, moments.v_projector.bias, projector_lr, cfg,
              t);
}

// Mean gradient over a batch, reduced in batch order.
Gradients batch_gradient(const BaseModel& base, const Projector& proj, const TaskAdapterSet& adapters,
                         std::span<const Sample> dataset, std::span<const std::size_t> batch) {
    std::vector<Gradients> per_sample(batch.size());
    parallel_for(batch.size(),
                 [&](std::size_t i) { per_sample[i] = backward(base, proj, adapters, dataset[batch[i]]); });
    Gradients total = std::move(per_sample.front());
    for (std::size_t i = 1; i < per_sample.size(); ++i) {
        total.accumulate(per_sample[i]);
    }
    total.scale(1.0 / static_cast<double>(batch.size()));
    return total;
}

// Every non-top block fused with ε; the top block too when `top_fused`.
ComposedAdapters fused_lower(const ModelConfig& cfg, std::span<const TaskAdapterSet* const> sets, double epsilon,
                             bool top_fused) {
    ComposedAdapters c;
    const std::vector<double> eps(sets.size(), epsilon);
    std::vector<SiteId> sites = non_top_sites(cfg);
    if (top_fused) {
        const std::vector<SiteId> top = block_sites(cfg.top_block());
        sites.insert(sites.end(), top.begin(), top.end());
    }
    c.merged = std::make_shared<const MergedDelta>(merge_adapters(sets, eps, sites));
    c.block_modes.assign(cfg.n_blocks, BlockMode::merged);
    return c;
}

}  // namespace

std::string_view strategy_name(Strategy s) {
    switch (s) {
        case Strategy::hide: return "hide";
        case Strategy::corresponding_all: return "corresponding-all";
        case Strategy::oracle_top: return "oracle-top";
        case Strategy::merge_all: return "merge-all";
        case Strategy::wrong_top: return "wrong-top";
        case Strategy::seq_finetune: return "seq-finetune";
        case Strategy::expand_all: return "expand-all";
        case Strategy::expand_remaining: return "expand-remaining";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    for (Strategy s : kAllStrategies) {
        if (strategy_name(s) == name) {
            return s;
        }
    }
    throw ConfigurationError(fmt::format("unknown strategy '{}'", name));
}

bool requires_label(Strategy s) {
    return s == Strategy::corresponding_all || s == Strategy::oracle_top || s == Strategy::wrong_top;
}

bool is_routed(Strategy s) {
    return s == Strategy::hide || s == Strategy::expand_all || s == Strategy::expand_remaining;
}

void TrainConfig::validate() const {
    if (!(lora_lr > 0.0) || !(projector_lr >= 0.0)) {
        throw ConfigurationError("train: learning rates must be positive");
    }
    if (batch_size == 0 || epochs == 0) {
        throw ConfigurationError("train: batch_size and epochs must be positive");
    }
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
        throw ConfigurationError("train: warmup_ratio must lie in [0, 1)");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
        throw ConfigurationError("train: invalid Adam hyper-parameters");
    }
}

double learning_rate_at(std::size_t step, std::size_t total, double base, double warmup_ratio) {
    if (total == 0) {
        return base;
    }
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
    if (step < warmup) {
        return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    const std::size_t span = total - warmup;
    if (span == 0) {
        return base;
    }
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
    return base * 0.5 * (1.0 + std::cos(kPi * progress));
}

FrozenParts FrozenParts::from_seed(const ModelConfig& cfg, std::uint64_t seed, std::size_t feat_dim) {
    cfg.validate();
    FrozenParts parts;
    auto base = std::make_shared<const BaseModel>(BaseModel::random(cfg, SeededRng::derive(seed, "base")));
    parts.encoder =
        std::make_shared<const FrozenEncoder>(FrozenEncoder::create(*base, SeededRng::derive(seed, "encoder"), feat_dim));
    parts.initial_projector = Projector::random(cfg, SeededRng::derive(seed, "projector"));
    parts.base = std::move(base);
    return parts;
}

ContinualState::ContinualState(const ModelConfig& cfg, std::uint64_t seed, RouterConfig router, double epsilon,
                               TrainConfig train, std::size_t feat_dim)
    : frozen_(FrozenParts::from_seed(cfg, seed, feat_dim)),
      seed_(seed),
      feat_dim_(feat_dim),
      router_(router),
      epsilon_(epsilon),
      train_(train) {
    router_.validate();
    train_.validate();
    if (!std::isfinite(epsilon_)) {
        throw ConfigurationError("fusion coefficient must be finite");
    }
    projectors_.push_back(std::make_shared<const Projector>(frozen_.initial_projector));
}

std::vector<TaskAnchor> ContinualState::anchors(std::size_t stages) const {
    if (stages > tasks_.size()) {
        throw ContractError(fmt::format("{} stages requested, {} learned", stages, tasks_.size()));
    }
    std::vector<TaskAnchor> out;
    out.reserve(stages);
    for (std::size_t i = 0; i < stages; ++i) {
        out.push_back(tasks_[i].anchor);
    }
    return out;
}

std::shared_ptr<const Projector> ContinualState::projector_after(std::size_t stages) const {
    if (stages >= projectors_.size()) {
        throw ContractError(fmt::format("no projector snapshot after {} stages", stages));
    }
    return projectors_[stages];
}

const SequentialSnapshot& ContinualState::sequential_after(std::size_t stages) const {
    if (stages == 0 || stages > sequential_.size()) {
        throw ContractError(fmt::format("no sequential fine-tuning snapshot after {} stages", stages));
    }
    return sequential_[stages - 1];
}

void ContinualState::learn_task(const std::string& task_id, std::span<const Sample> dataset) {
    const auto started = std::chrono::steady_clock::now();
    if (dataset.empty()) {
        throw ContractError("learn_task: empty dataset for task '" + task_id + "'");
    }
    for (const TaskRecord& r : tasks_) {
        if (r.adapters->task_id() == task_id) {
            throw ContractError("learn_task: task '" + task_id + "' was already learned");
        }
    }
    const ModelConfig& cfg = config();
    for (const Sample& s : dataset) {
        s.validate(cfg);
    }

    SeededRng init_rng(SeededRng::derive(seed_, "adapters." + task_id));
    SeededRng order_rng(SeededRng::derive(seed_, "order." + task_id));
    TaskAdapterSet adapters = TaskAdapterSet::initialized(cfg, task_id, init_rng);
    Projector projector = *projectors_.back();
    AdamMoments moments(adapters, cfg);

    const bool sequential = train_.sequential_baseline;
    TaskAdapterSet seq_adapters;
    Projector seq_projector;
    std::optional<AdamMoments> seq_moments;
    if (sequential) {
        if (sequential_.empty()) {
            SeededRng seq_rng(SeededRng::derive(seed_, "adapters.sequential"));
            seq_adapters = TaskAdapterSet::initialized(cfg, "sequential", seq_rng);
            seq_projector = frozen_.initial_projector;
        } else {
            seq_adapters = *sequential_.back().adapters;
            seq_projector = *sequential_.back().projector;
        }
        seq_moments.emplace(seq_adapters, cfg);
    }

    StageLog log;
    log.task_id = task_id;
    TaskAnchor anchor;
    anchor.task_id = task_id;

    const std::size_t n = dataset.size();
    const std::size_t per_epoch = (n + train_.batch_size - 1) / train_.batch_size;
    const std::size_t total = per_epoch * train_.epochs;
    std::vector<std::size_t> order(n);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < train_.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        order_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += train_.batch_size, ++step) {
            const std::span<const std::size_t> batch(order.data() + start, std::min(train_.batch_size, n - start));
            if (epoch == 0) {
                for (std::size_t i : batch) {
                    anchor.add(frozen_.encoder->features(dataset[i].prompt));
                }
            }
            const double lora_lr = learning_rate_at(step, total, train_.lora_lr, train_.warmup_ratio);
            const double proj_lr = learning_rate_at(step, total, train_.projector_lr, train_.warmup_ratio);

            const Gradients g = batch_gradient(base(), projector, adapters, dataset, batch);
            log.step_losses.push_back(g.loss);
            apply_update(adapters, projector, g, moments, lora_lr, proj_lr, train_);

            if (sequential) {
                const Gradients sg = batch_gradient(base(), seq_projector, seq_adapters, dataset, batch);
                log.sequential_step_losses.push_back(sg.loss);
                apply_update(seq_adapters, seq_projector, sg, *seq_moments, lora_lr, proj_lr, train_);
            }
        }
    }
    anchor.validate();

    tasks_.push_back({std::make_shared<const TaskAdapterSet>(std::move(adapters)), std::move(anchor)});
    projectors_.push_back(std::make_shared<const Projector>(std::move(projector)));
    if (sequential) {
        sequential_.push_back({std::make_shared<const TaskAdapterSet>(std::move(seq_adapters)),
                               std::make_shared<const Projector>(std::move(seq_projector))});
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    logs_.push_back(std::move(log));
}

TensorContainer ContinualState::to_container() const {
    TensorContainer c;
    auto& meta = c.metadata();
    meta["kind"] = "continual-state";
    for (const auto& [k, v] : config().to_key_values()) {
        meta["model." + k] = v;
    }
    meta["seed"] = std::to_string(seed_);
    meta["feat_dim"] = std::to_string(feat_dim_);
    meta["base_checksum"] = base().checksum();
    meta["epsilon"] = fmt::format("{}", epsilon_);
    store_router(meta, "router.", router_);
    store_train_config(meta, "train.", train_);
    meta["num_tasks"] = std::to_string(tasks_.size());
    meta["sequential_stages"] = std::to_string(sequential_.size());
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
        const std::string prefix = fmt::format("task{}.", t);
        meta[prefix + "id"] = tasks_[t].adapters->task_id();
        store_adapters(c, prefix, *tasks_[t].adapters);
        store_anchor(c, prefix, tasks_[t].anchor);
    }
    for (std::size_t s = 0; s < projectors_.size(); ++s) {
        store_projector(c, fmt::format("projector.stage{}.", s), *projectors_[s]);
    }
    for (std::size_t s = 0; s < sequential_.size(); ++s) {
        const std::string prefix = fmt::format("sequential.stage{}.", s + 1);
        store_adapters(c, prefix, *sequential_[s].adapters);
        store_projector(c, prefix + "projector.", *sequential_[s].projector);
    }
    return c;
}

ContinualState ContinualState::from_container(const TensorContainer& c) {
    const auto& meta = c.metadata();
    if (c.meta("kind") != "continual-state") {
        throw IngestionError("checkpoint is a '" + c.meta("kind") + "', not a continual state");
    }
    ContinualState state(load_model_config(meta, "model."), parse_u64(c.meta("seed"), "seed"),
                         load_router(meta, "router."), parse_real(c.meta("epsilon"), "epsilon"),
                         load_train_config(meta, "train."), parse_u64(c.meta("feat_dim"), "feat_dim"));
    if (state.base().checksum() != c.meta("base_checksum")) {
        throw IngestionError("checkpoint base checksum does not match the base rebuilt from its seed");
    }
    const ModelConfig& cfg = state.config();
    const std::size_t n_tasks = parse_u64(c.meta("num_tasks"), "num_tasks");
    for (std::size_t t = 0; t < n_tasks; ++t) {
        const std::string prefix = fmt::format("task{}.", t);
        const std::string& id = c.meta(prefix + "id");
        TaskAnchor anchor = load_anchor(c, prefix, id);
        if (anchor.m_v.size() != state.feat_dim_ || anchor.m_ins.size() != state.feat_dim_) {
            throw IngestionError("checkpoint anchor dimension does not match feat_dim for task '" + id + "'");
        }
        state.tasks_.push_back(
            {std::make_shared<const TaskAdapterSet>(load_adapters(c, prefix, cfg, id)), std::move(anchor)});
    }
    state.projectors_.clear();
    for (std::size_t s = 0; s <= n_tasks; ++s) {
        state.projectors_.push_back(
            std::make_shared<const Projector>(load_projector(c, fmt::format("projector.stage{}.", s), cfg)));
    }
    const std::size_t seq = parse_u64(c.meta("sequential_stages"), "sequential_stages");
    if (seq != 0 && seq != n_tasks) {
        throw IngestionError("checkpoint sequential track does not cover every stage");
    }
    for (std::size_t s = 1; s <= seq; ++s) {
        const std::string prefix = fmt::format("sequential.stage{}.", s);
        state.sequential_.push_back(
            {std::make_shared<const TaskAdapterSet>(load_adapters(c, prefix, cfg, "sequential")),
             std::make_shared<const Projector>(load_projector(c, prefix + "projector.", cfg))});
    }
    return state;
}

std::function<Vector(const Prompt&)> make_router(std::shared_ptr<const FrozenEncoder> encoder,
                                                std::vector<TaskAnchor> anchors, const RouterConfig& router) {
    if (!encoder || anchors.empty()) {
        throw ContractError("router needs an encoder and at least one anchor");
    }
    auto shared = std::make_shared<const std::vector<TaskAnchor>>(std::move(anchors));
    return [shared, encoder = std::move(encoder), router](const Prompt& prompt) {
        return score_tasks(*encoder, *shared, prompt, router);
    };
}

AdaptedModel compose(const ContinualState& state, Strategy strategy, std::optional<std::size_t> true_task,
                     const ComposeOptions& options) {
    const std::size_t stages = options.stages.value_or(state.num_tasks());
    if (stages == 0 || stages > state.num_tasks()) {
        throw ContractError(fmt::format("compose: {} visible tasks requested, {} learned", stages, state.num_tasks()));
    }
    if (requires_label(strategy) != true_task.has_value()) {
        throw ContractError(fmt::format("compose: strategy '{}' {}", strategy_name(strategy),
                                        requires_label(strategy) ? "needs the true task label"
                                                                 : "must not be given a task label"));
    }
    if (true_task && *true_task >= stages) {
        throw ContractError(fmt::format("compose: true task {} is not among the {} visible tasks", *true_task, stages));
    }
    const ModelConfig& cfg = state.config();
    const double epsilon = options.epsilon.value_or(state.epsilon());
    const RouterConfig router = ablated_config(options.router.value_or(state.router()), options.modality);
    router.validate();

    std::vector<std::shared_ptr<const TaskAdapterSet>> experts;
    std::vector<const TaskAdapterSet*> sets;
    for (std::size_t i = 0; i < stages; ++i) {
        experts.push_back(state.tasks()[i].adapters);
        sets.push_back(state.tasks()[i].adapters.get());
    }
    auto one_hot = [&](std::size_t k) {
        Vector d(stages, 0.0);
        d[k] = 1.0;
        return d;
    };

    AdaptedModel model;
    model.tag = std::string(strategy_name(strategy));
    model.projector = state.projector_after(stages);
    ComposedAdapters& c = model.composition;
    switch (strategy) {
        case Strategy::hide:
        case Strategy::oracle_top:
        case Strategy::wrong_top:
            c = fused_lower(cfg, sets, epsilon, false);
            c.block_modes[cfg.top_block()] = BlockMode::mixture;
            c.experts = experts;
            break;
        case Strategy::merge_all: c = fused_lower(cfg, sets, epsilon, true); break;
        case Strategy::corresponding_all:
            c = single_set_composition(cfg, experts[*true_task]);
            break;
        case Strategy::seq_finetune: {
            const SequentialSnapshot& snap = state.sequential_after(stages);
            c = single_set_composition(cfg, snap.adapters);
            model.projector = snap.projector;
            break;
        }
        case Strategy::expand_all:
            c.block_modes.assign(cfg.n_blocks, BlockMode::mixture);
            c.experts = experts;
            break;
        case Strategy::expand_remaining:
            c.merged = std::make_shared<const MergedDelta>(merge_adapters(
                sets, std::vector<double>(stages, epsilon), block_sites(cfg.top_block())));
            c.block_modes.assign(cfg.n_blocks, BlockMode::mixture);
            c.block_modes[cfg.top_block()] = BlockMode::merged;
            c.experts = experts;
            break;
    }
    c.strategy = model.tag;
    if (strategy == Strategy::oracle_top) {
        c.weights = one_hot(*true_task);
    } else if (strategy == Strategy::wrong_top) {
        c.weights = one_hot((*true_task + 1) % stages);
    }
    if (is_routed(strategy)) {
        c.routed = true;
        model.router = make_router(state.shared_encoder(), state.anchors(stages), router);
    }
    return model;
}

EvaluationRow evaluate(const ContinualState& state, Strategy strategy, std::span<const TaskTestSet> tests,
                       const ComposeOptions& options) {
    const std::size_t stages = options.stages.value_or(state.num_tasks());
    if (stages == 0 || stages > state.num_tasks()) {
        throw ContractError(fmt::format("evaluate: {} stages requested, {} learned", stages, state.num_tasks()));
    }
    for (std::size_t j = 0; j < stages; ++j) {
        const std::string& id = state.tasks()[j].adapters->task_id();
        if (j >= tests.size() || tests[j].task_id != id) {
            throw ContractError("evaluate: missing test set for task '" + id + "'");
        }
        if (tests[j].samples.empty()) {
            throw ContractError("evaluate: empty test set for task '" + id + "'");
        }
    }
    ComposeOptions opts = options;
    opts.stages = stages;
    std::optional<AdaptedModel> shared;
    if (!requires_label(strategy)) {
        shared = compose(state, strategy, std::nullopt, opts);
    }

    EvaluationRow row;
    row.accuracy.assign(stages, 0.0);
    if (is_routed(strategy)) {
        row.routing_accuracy.assign(stages, 0.0);
    }
    for (std::size_t j = 0; j < stages; ++j) {
        const AdaptedModel model = shared ? *shared : compose(state, strategy, j, opts);
        const auto& samples = tests[j].samples;
        std::vector<char> correct(samples.size(), 0);
        std::vector<char> routed_home(samples.size(), 0);
        parallel_for(samples.size(), [&](std::size_t i) {
            const Sample& s = samples[i];
            ComposedAdapters composition = model.composition;
            if (composition.routed) {
                composition.weights = model.router(s.prompt);
                routed_home[i] = argmax(composition.weights) == j ? 1 : 0;
            }
            const Matrix logits = forward(state.base(), *model.projector, composition, s);
            correct[i] = greedy_matches(logits, state.config(), s) ? 1 : 0;
        });
        const double n = static_cast<double>(samples.size());
        row.accuracy[j] = 100.0 * static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / n;
        if (!row.routing_accuracy.empty()) {
            row.routing_accuracy[j] =
                100.0 * static_cast<double>(std::count(routed_home.begin(), routed_home.end(), 1)) / n;
        }
    }
    return row;
}

AccuracyMatrix AccuracyMatrix::from_rows(std::vector<Vector> rows) {
    AccuracyMatrix m;
    for (Vector& r : rows) {
        m.append(std::move(r));
    }
    return m;
}

void AccuracyMatrix::append(Vector row) {
    if (row.size() != rows_.size() + 1) {
        throw ContractError(fmt::format("AccuracyMatrix: stage {} needs {} entries, got {}", rows_.size(),
                                        rows_.size() + 1, row.size()));
    }
    for (double v : row) {
        if (!(v >= 0.0 && v <= 100.0)) {
            throw ContractError(fmt::format("AccuracyMatrix: entry {} outside [0, 100]", v));
        }
    }
    rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(std::size_t t, std::size_t j) const {
    if (t >= rows_.size() || j > t) {
        throw ContractError(fmt::format("AccuracyMatrix: A[{}][{}] is not defined", t, j));
    }
    return rows_[t][j];
}

Metrics metrics(const AccuracyMatrix& matrix) {
    const std::size_t T = matrix.stages();
    if (T == 0) {
        throw ContractError("metrics: empty accuracy matrix");
    }
    Metrics out;
    out.last = matrix.rows().back();
    out.avg.assign(T, 0.0);
    for (std::size_t j = 0; j < T; ++j) {
        double sum = 0.0;
        for (std::size_t t = j; t < T; ++t) {
            sum += matrix.at(t, j);
        }
        out.avg[j] = sum / static_cast<double>(T - j);
    }
    out.last_mean = std::accumulate(out.last.begin(), out.last.end(), 0.0) / static_cast<double>(T);
    out.avg_mean = std::accumulate(out.avg.begin(), out.avg.end(), 0.0) / static_cast<double>(T);
    return out;
}

StrategyRun evaluate_all_stages(const ContinualState& state, Strategy strategy, std::span<const TaskTestSet> tests,
                                ComposeOptions options) {
    StrategyRun run;
    for (std::size_t stages = 1; stages <= state.num_tasks(); ++stages) {
        options.stages = stages;
        EvaluationRow row = evaluate(state, strategy, tests, options);
        run.matrix.append(std::move(row.accuracy));
        if (!row.routing_accuracy.empty()) {
            run.routing.push_back(std::move(row.routing_accuracy));
        }
    }
    return run;
}

}  // namespace hide_forge
