// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/adapters.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace {

std::size_t site_index(SiteId id) { return id.block * kSitesPerBlock + static_cast<std::size_t>(id.site); }

}  // namespace

LoraAdapter LoraAdapter::initialized(const ModelConfig& cfg, SiteId site, SeededRng& rng) {
    const SiteShape shape = site_shape(cfg, site.site);
    LoraAdapter adapter;
    adapter.site = site;
    adapter.a = rng.normal_matrix(cfg.lora_rank, shape.d_in, kLoraInitStddev);
    adapter.b = Matrix(shape.d_out, cfg.lora_rank);
    adapter.scaling = cfg.lora_scaling();
    return adapter;
}

Matrix LoraAdapter::dense_delta() const {
    Matrix delta(d_out(), d_in());
    add_matmul(delta, b, a, scaling);
    return delta;
}

Vector adapter_delta(const LoraAdapter& adapter, std::span<const double> h) {
    if (h.size() != adapter.d_in()) {
        throw ContractError(fmt::format("adapter_delta: input length {} does not match d_in {} at {}", h.size(),
                                        adapter.d_in(), adapter.site.name()));
    }
    const Vector low = matvec(adapter.a, h);
    Vector out = matvec(adapter.b, low);
    for (double& v : out) {
        v *= adapter.scaling;
    }
    return out;
}

void add_adapter_rows(Matrix& out, const LoraAdapter& adapter, const Matrix& x, double weight) {
    const Matrix low = matmul_bt(x, adapter.a);
    add_matmul_bt(out, low, adapter.b, weight * adapter.scaling);
}

TaskAdapterSet::TaskAdapterSet(std::string task_id, std::vector<LoraAdapter> adapters)
    : task_id_(std::move(task_id)), adapters_(std::move(adapters)) {
    if (adapters_.size() % kSitesPerBlock != 0) {
        throw ConfigurationError("TaskAdapterSet: adapter count is not a whole number of blocks");
    }
    for (std::size_t i = 0; i < adapters_.size(); ++i) {
        const SiteId expected{i / kSitesPerBlock, kAllSites[i % kSitesPerBlock]};
        if (adapters_[i].site != expected) {
            throw ConfigurationError("TaskAdapterSet: adapters out of site order at " + expected.name());
        }
    }
}

TaskAdapterSet TaskAdapterSet::initialized(const ModelConfig& cfg, std::string task_id, SeededRng& rng) {
    std::vector<LoraAdapter> adapters;
    adapters.reserve(cfg.n_blocks * kSitesPerBlock);
    for (std::size_t block = 0; block < cfg.n_blocks; ++block) {
        for (Site site : kAllSites) {
            adapters.push_back(LoraAdapter::initialized(cfg, {block, site}, rng));
        }
    }
    return TaskAdapterSet(std::move(task_id), std::move(adapters));
}

TaskAdapterSet TaskAdapterSet::zeros_like(const TaskAdapterSet& like) {
    std::vector<LoraAdapter> adapters;
    adapters.reserve(like.adapters_.size());
    for (const LoraAdapter& src : like.adapters_) {
        LoraAdapter z;
        z.site = src.site;
        z.a = Matrix(src.a.rows(), src.a.cols());
        z.b = Matrix(src.b.rows(), src.b.cols());
        z.scaling = src.scaling;
        adapters.push_back(std::move(z));
    }
    return TaskAdapterSet(like.task_id_, std::move(adapters));
}

const LoraAdapter& TaskAdapterSet::at(SiteId id) const {
    const std::size_t i = site_index(id);
    if (i >= adapters_.size()) {
        throw ConfigurationError("TaskAdapterSet '" + task_id_ + "' has no adapter at " + id.name());
    }
    return adapters_[i];
}

LoraAdapter& TaskAdapterSet::at(SiteId id) {
    return const_cast<LoraAdapter&>(std::as_const(*this).at(id));
}

std::size_t TaskAdapterSet::parameter_count() const {
    return std::accumulate(adapters_.begin(), adapters_.end(), std::size_t{0},
                           [](std::size_t acc, const LoraAdapter& a) { return acc + a.parameter_count(); });
}

std::size_t TaskAdapterSet::block_parameter_count(std::size_t block) const {
    std::size_t total = 0;
    for (Site site : kAllSites) {
        total += at({block, site}).parameter_count();
    }
    return total;
}

void TaskAdapterSet::validate(const ModelConfig& cfg) const {
    if (adapters_.size() != cfg.n_blocks * kSitesPerBlock) {
        throw ConfigurationError(fmt::format("TaskAdapterSet '{}': covers {} sites, model has {}", task_id_,
                                             adapters_.size(), cfg.n_blocks * kSitesPerBlock));
    }
    for (const LoraAdapter& adapter : adapters_) {
        const SiteShape shape = site_shape(cfg, adapter.site.site);
        if (adapter.a.rows() != adapter.b.cols() || adapter.a.cols() != shape.d_in || adapter.b.rows() != shape.d_out) {
            throw ConfigurationError("TaskAdapterSet '" + task_id_ + "': bad adapter shape at " + adapter.site.name());
        }
    }
}

const Matrix& MergedDelta::at(SiteId id) const {
    const auto it = deltas.find(id);
    if (it == deltas.end()) {
        throw ConfigurationError("MergedDelta has no delta at " + id.name());
    }
    return it->second;
}

std::size_t MergedDelta::parameter_count() const {
    std::size_t total = 0;
    for (const auto& [id, delta] : deltas) {
        total += delta.size();
    }
    return total;
}

MergedDelta merge_adapters(std::span<const TaskAdapterSet* const> sets, std::span<const double> epsilons,
                           std::span<const SiteId> sites) {
    if (sets.empty() || sets.size() != epsilons.size()) {
        throw ContractError(fmt::format("merge_adapters: need |sets| = |epsilons| >= 1, got {} and {}", sets.size(),
                                        epsilons.size()));
    }
    MergedDelta merged;
    for (SiteId id : sites) {
        const LoraAdapter& first = sets.front()->at(id);
        Matrix delta(first.d_out(), first.d_in());
        for (std::size_t i = 0; i < sets.size(); ++i) {
            const LoraAdapter& adapter = sets[i]->at(id);
            if (adapter.d_out() != delta.rows() || adapter.d_in() != delta.cols()) {
                throw ConfigurationError("merge_adapters: shape mismatch at " + id.name());
            }
            add_matmul(delta, adapter.b, adapter.a, epsilons[i] * adapter.scaling);
        }
        merged.deltas.emplace(id, std::move(delta));
    }
    return merged;
}

std::vector<SiteId> block_sites(std::size_t block) {
    std::vector<SiteId> sites;
    for (Site site : kAllSites) {
        sites.push_back({block, site});
    }
    return sites;
}

std::vector<SiteId> non_top_sites(const ModelConfig& cfg) {
    std::vector<SiteId> sites;
    for (std::size_t block = 0; block + 1 < cfg.n_blocks; ++block) {
        for (Site site : kAllSites) {
            sites.push_back({block, site});
        }
    }
    return sites;
}

Vector mixture_output(std::span<const LoraAdapter* const> experts, std::span<const double> weights,
                      std::span<const double> h) {
    if (experts.size() != weights.size() || experts.empty()) {
        throw ContractError("mixture_output: need one weight per expert");
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) {
        throw ContractError(fmt::format("mixture_output: expert weights sum to {}, not 1", total));
    }
    Vector out(experts.front()->d_out(), 0.0);
    for (std::size_t i = 0; i < experts.size(); ++i) {
        const Vector delta = adapter_delta(*experts[i], h);
        if (delta.size() != out.size()) {
            throw ContractError("mixture_output: experts disagree on output size");
        }
        for (std::size_t j = 0; j < out.size(); ++j) {
            out[j] += weights[i] * delta[j];
        }
    }
    return out;
}

ComposedAdapters ComposedAdapters::empty(const ModelConfig& cfg) {
    ComposedAdapters c;
    c.block_modes.assign(cfg.n_blocks, BlockMode::base);
    return c;
}

ComposedAdapters ComposedAdapters::with_weights(Vector d) const {
    ComposedAdapters c = *this;
    c.weights = std::move(d);
    return c;
}

bool ComposedAdapters::has_mixture() const {
    for (BlockMode m : block_modes) {
        if (m == BlockMode::mixture) {
            return true;
        }
    }
    return false;
}

void ComposedAdapters::validate(const ModelConfig& cfg) const {
    if (block_modes.size() != cfg.n_blocks) {
        throw ConfigurationError(fmt::format("composition '{}' describes {} blocks, model has {}", strategy,
                                             block_modes.size(), cfg.n_blocks));
    }
    for (std::size_t block = 0; block < block_modes.size(); ++block) {
        if (block_modes[block] == BlockMode::merged) {
            if (!merged) {
                throw ConfigurationError("composition '" + strategy + "' has a merged block but no merged delta");
            }
            for (SiteId id : block_sites(block)) {
                const SiteShape shape = site_shape(cfg, id.site);
                const Matrix& delta = merged->at(id);
                if (delta.rows() != shape.d_out || delta.cols() != shape.d_in) {
                    throw ConfigurationError("composition '" + strategy + "': merged delta shape mismatch at " +
                                             id.name());
                }
            }
        }
    }
    if (!has_mixture()) {
        return;
    }
    if (experts.empty()) {
        throw ConfigurationError("composition '" + strategy + "' has a mixture block but no experts");
    }
    for (const auto& expert : experts) {
        if (!expert) {
            throw ConfigurationError("composition '" + strategy + "' has a null expert");
        }
        expert->validate(cfg);
    }
    if (weights.size() != experts.size()) {
        throw ContractError(fmt::format("composition '{}': {} expert weights for {} experts{}", strategy,
                                        weights.size(), experts.size(),
                                        routed ? " (routed weights not resolved)" : ""));
    }
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-9) {
        throw ContractError(fmt::format("composition '{}': expert weights sum to {}", strategy, total));
    }
}

LoadedParameterCount count_loaded_parameters(const ComposedAdapters& composition, const ModelConfig& cfg) {
    LoadedParameterCount count;
    count.adapters_per_block.assign(cfg.n_blocks, 0);
    count.merged_sites_per_block.assign(cfg.n_blocks, 0);
    for (std::size_t block = 0; block < cfg.n_blocks; ++block) {
        switch (composition.block_modes.at(block)) {
            case BlockMode::base: break;
            case BlockMode::merged:
                count.merged_sites_per_block[block] = kSitesPerBlock;
                for (SiteId id : block_sites(block)) {
                    const SiteShape shape = site_shape(cfg, id.site);
                    count.dense_total += shape.d_out * shape.d_in;
                    count.adapter_equivalent_total += cfg.lora_rank * (shape.d_out + shape.d_in);
                }
                break;
            case BlockMode::mixture:
                count.adapters_per_block[block] = composition.experts.size() * kSitesPerBlock;
                for (const auto& expert : composition.experts) {
                    const std::size_t n = expert->block_parameter_count(block);
                    count.dense_total += n;
                    count.adapter_equivalent_total += n;
                }
                break;
        }
    }
    return count;
}

}  // namespace hide_forge
