// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// LoRA adapter algebra: per-site low-rank deltas, ε-weighted fusion into
// dense per-site deltas, and similarity-weighted expert mixtures.

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hide_forge/model_config.hpp"
#include "hide_forge/numerics.hpp"

namespace hide_forge {

// Standard deviation of the Gaussian used for A at initialization.
inline constexpr double kLoraInitStddev = 0.02;

struct LoraAdapter {
    SiteId site;
    Matrix a;  // rank × d_in
    Matrix b;  // d_out × rank
    double scaling = 1.0;

    // A ~ N(0, 0.02²), B = 0, scaling = alpha / rank.
    static LoraAdapter initialized(const ModelConfig& cfg, SiteId site, SeededRng& rng);

    std::size_t rank() const { return a.rows(); }
    std::size_t d_in() const { return a.cols(); }
    std::size_t d_out() const { return b.rows(); }
    std::size_t parameter_count() const { return a.size() + b.size(); }

    // scaling · B · A, shaped like the site's frozen weight.
    Matrix dense_delta() const;
};

// scaling · B (A h).
Vector adapter_delta(const LoraAdapter& adapter, std::span<const double> h);

// Row-batched form: out += weight · scaling · (X Aᵀ) Bᵀ. X is n × d_in.
void add_adapter_rows(Matrix& out, const LoraAdapter& adapter, const Matrix& x, double weight);

/// All adapters learned for one task, one per linear site of every block.
class TaskAdapterSet {
 public:
    TaskAdapterSet() = default;
    TaskAdapterSet(std::string task_id, std::vector<LoraAdapter> adapters);

    static TaskAdapterSet initialized(const ModelConfig& cfg, std::string task_id, SeededRng& rng);
    // Same shapes as `like`, all entries zero. Used as a gradient buffer.
    static TaskAdapterSet zeros_like(const TaskAdapterSet& like);

    const std::string& task_id() const { return task_id_; }
    std::size_t n_blocks() const { return adapters_.size() / kSitesPerBlock; }

    const LoraAdapter& at(SiteId id) const;
    LoraAdapter& at(SiteId id);
    std::span<const LoraAdapter> adapters() const { return adapters_; }
    std::span<LoraAdapter> adapters() { return adapters_; }

    std::size_t parameter_count() const;
    std::size_t block_parameter_count(std::size_t block) const;

    // Complete, correctly shaped coverage of every site; throws ConfigurationError.
    void validate(const ModelConfig& cfg) const;

 private:
    std::string task_id_;
    std::vector<LoraAdapter> adapters_;  // index = block * kSitesPerBlock + site
};

/// Dense ΔW = Σ_i ε_i · scaling_i · B_i A_i for a set of sites.
struct MergedDelta {
    std::map<SiteId, Matrix> deltas;

    const Matrix& at(SiteId id) const;
    bool covers(SiteId id) const { return deltas.count(id) != 0; }
    std::size_t parameter_count() const;
};

// Fuses the given sites of several tasks. Throws ContractError when
// |sets| != |epsilons| or the list is empty, ConfigurationError when a set
// lacks one of the sites or shapes disagree.
MergedDelta merge_adapters(std::span<const TaskAdapterSet* const> sets, std::span<const double> epsilons,
                           std::span<const SiteId> sites);

// Every site of every block except the top one.
std::vector<SiteId> non_top_sites(const ModelConfig& cfg);
std::vector<SiteId> block_sites(std::size_t block);

// Σ_i d_i · adapter_delta(expert_i, h). Throws ContractError when the
// counts differ or d does not sum to 1 within 1e-9.
Vector mixture_output(std::span<const LoraAdapter* const> experts, std::span<const double> weights,
                      std::span<const double> h);

enum class BlockMode {
    base,     // frozen weights only
    merged,   // frozen weights plus a dense fused delta
    mixture,  // frozen weights plus Σ d_i E_i(h) over the expert sets
};

/// The adapter configuration the model runs with at inference time.
///
/// Each block is either untouched, carries a fused dense delta, or mixes
/// the per-task expert adapters with weights d. One weight vector is shared
/// by every mixture block. When `routed` is set the weights are chosen per
/// prompt by the task router and must be filled in with `with_weights`
/// before the composition is used.
struct ComposedAdapters {
    std::string strategy = "base";
    std::vector<BlockMode> block_modes;
    std::shared_ptr<const MergedDelta> merged;
    std::vector<std::shared_ptr<const TaskAdapterSet>> experts;
    Vector weights;
    bool routed = false;

    static ComposedAdapters empty(const ModelConfig& cfg);

    ComposedAdapters with_weights(Vector d) const;

    bool has_mixture() const;
    // Throws ConfigurationError on structural mismatch with the model and
    // ContractError when mixture weights are missing or do not sum to 1.
    void validate(const ModelConfig& cfg) const;
};

/// Parameters a composition keeps resident at inference time.
struct LoadedParameterCount {
    std::vector<std::size_t> adapters_per_block;  // LoRA experts kept per block
    std::vector<std::size_t> merged_sites_per_block;
    // Adapters counted at their rank-r size, fused sites as dense deltas.
    std::size_t dense_total = 0;
    // Adapters counted at their rank-r size, each fused site counted as one
    // adapter-sized module (the accounting used for LoRA fusion tables).
    std::size_t adapter_equivalent_total = 0;
};

LoadedParameterCount count_loaded_parameters(const ComposedAdapters& composition, const ModelConfig& cfg);

}  // namespace hide_forge
