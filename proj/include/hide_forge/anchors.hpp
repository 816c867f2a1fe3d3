// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen dual-modality features, per-task anchors and the router-free
// expert weighting built on them.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hide_forge/model.hpp"
#include "hide_forge/numerics.hpp"

namespace hide_forge {

inline constexpr std::size_t kDefaultFeatureDim = 64;

struct PromptFeatures {
    Vector visual;
    Vector instruction;
};

/// Stand-in for the frozen image and text encoders.
///
/// Visual side: mean over the prefix vectors, then a fixed random
/// projection. Instruction side: mean of the frozen token embeddings of the
/// instruction, then a second fixed random projection. Never trained.
struct FrozenEncoder {
    Matrix visual_projection;       // feat_dim × visual_dim
    Matrix instruction_projection;  // feat_dim × d_model
    Matrix token_embedding;         // vocab × d_model, copied from the base model

    static FrozenEncoder create(const BaseModel& base, std::uint64_t seed,
                                std::size_t feat_dim = kDefaultFeatureDim);

    std::size_t feature_dim() const { return visual_projection.rows(); }
    Vector visual_features(const Prompt& prompt) const;
    Vector instruction_features(const Prompt& prompt) const;
    PromptFeatures features(const Prompt& prompt) const;
};

struct TaskAnchor {
    std::string task_id;
    Vector m_v;
    Vector m_ins;
    std::uint64_t n_seen = 0;

    // Running-mean update with one sample's features.
    void add(const PromptFeatures& features);
    void validate() const;

    friend bool operator==(const TaskAnchor&, const TaskAnchor&) = default;
};

// Mean features over a task's training stream. Throws ContractError when
// the stream is empty.
TaskAnchor extract_anchor(const FrozenEncoder& encoder, std::string task_id, std::span<const Sample> stream);

struct RouterConfig {
    double alpha = 0.5;
    double beta = 0.5;
    double temperature = 0.1;

    // Throws ConfigurationError unless temperature > 0 and α, β are finite.
    void validate() const;

    friend bool operator==(const RouterConfig&, const RouterConfig&) = default;
};

enum class Modality { dual, visual_only, text_only };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);

// Router config actually used for `mode`: visual-only is α=1, β=0,
// text-only is α=0, β=1, dual leaves cfg unchanged.
RouterConfig ablated_config(const RouterConfig& cfg, Modality mode);

// Fused per-task score α·cos(f_v, m_v) + β·cos(f_ins, m_ins).
Vector fused_scores(const PromptFeatures& features, std::span<const TaskAnchor> anchors, const RouterConfig& cfg);

// softmax(fused_scores / T). Throws ContractError on an empty anchor list
// and DomainError on a zero-norm feature.
Vector weights_from_features(const PromptFeatures& features, std::span<const TaskAnchor> anchors,
                             const RouterConfig& cfg);

Vector score_tasks(const FrozenEncoder& encoder, std::span<const TaskAnchor> anchors, const Prompt& prompt,
                   const RouterConfig& cfg);

Vector ablated_score_tasks(const FrozenEncoder& encoder, std::span<const TaskAnchor> anchors, const Prompt& prompt,
                           const RouterConfig& cfg, Modality mode);

// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> values);

}  // namespace hide_forge
