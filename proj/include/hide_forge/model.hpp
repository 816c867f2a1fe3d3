// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small pre-LN decoder-only transformer with frozen weights, a trainable
// pseudo-visual projector, LoRA deltas at every linear site, the
// answer-masked autoregressive loss and hand-written backpropagation into
// the LoRA and projector parameters.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hide_forge/adapters.hpp"
#include "hide_forge/model_config.hpp"
#include "hide_forge/numerics.hpp"

namespace hide_forge {

struct BlockWeights {
    Matrix wq, wk, wv, wo;  // d_model × d_model, applied as x Wᵀ
    Matrix w1;              // d_ff × d_model
    Matrix w2;              // d_model × d_ff
    Vector ln1_gain, ln1_bias;
    Vector ln2_gain, ln2_bias;

    const Matrix& weight(Site site) const;
};

struct BaseModel {
    ModelConfig config;
    Matrix token_embedding;     // vocab × d_model
    Matrix position_embedding;  // max_seq_len × d_model
    std::vector<BlockWeights> blocks;
    Vector final_gain, final_bias;
    Matrix head;  // vocab × d_model

    static BaseModel random(const ModelConfig& cfg, std::uint64_t seed);

    // Hex SHA-256 over the config and every frozen tensor.
    std::string checksum() const;
    void validate() const;
};

struct Projector {
    Matrix weight;  // d_model × visual_dim
    Vector bias;    // d_model

    static Projector random(const ModelConfig& cfg, std::uint64_t seed);
    static Projector zeros(const ModelConfig& cfg);
    void validate(const ModelConfig& cfg) const;
    std::size_t parameter_count() const { return weight.size() + bias.size(); }

    friend bool operator==(const Projector&, const Projector&) = default;
};

// What the model sees at inference time. Carries no task label.
struct Prompt {
    Matrix visual;  // visual_prefix_len × visual_dim
    std::vector<int> instruction;
};

struct Sample {
    std::uint64_t id = 0;
    std::string task;  // ground truth, read by the harness only
    Prompt prompt;
    std::vector<int> answer;

    std::size_t sequence_length() const;
    // Throws IngestionError when the sample does not fit the model.
    void validate(const ModelConfig& cfg) const;
};

// Position whose logits predict answer token 0.
std::size_t first_answer_logit_row(const ModelConfig& cfg, const Prompt& prompt);

// Logits for the sequence [proj(visual) ; instruction ; answer], one row per
// position. The composition must be fully resolved (routed weights filled).
Matrix forward(const BaseModel& base, const Projector& proj, const ComposedAdapters& composition,
               const Prompt& prompt, std::span<const int> answer);
Matrix forward(const BaseModel& base, const Projector& proj, const ComposedAdapters& composition,
               const Sample& sample);

enum class ProbePosition { final_position, mean_over_positions };

// Output of every block (the residual stream after it) pooled at `pooling`,
// for the prompt alone. Row i = block i.
Matrix block_outputs(const BaseModel& base, const Projector& proj, const ComposedAdapters& composition,
                     const Prompt& prompt, ProbePosition pooling);

// −Σ_l log p(answer_l | prefix) over the answer span only.
double autoregressive_loss(const Matrix& logits, const ModelConfig& cfg, const Sample& sample);

// True iff greedy decoding reproduces the answer. Teacher-forced logits are
// enough: while decoding matches, the decoder's prefix equals the target's.
bool greedy_matches(const Matrix& logits, const ModelConfig& cfg, const Sample& sample);

struct Gradients {
    TaskAdapterSet adapters;  // dL/dA and dL/dB per site
    Projector projector;      // dL/dW and dL/db
    double loss = 0.0;

    static Gradients zeros_like(const TaskAdapterSet& adapters, const ModelConfig& cfg);
    void accumulate(const Gradients& other);
    void scale(double factor);
};

// Gradient of the answer loss with respect to every LoRA A/B matrix and the
// projector, with `adapters` applied at every site with weight 1. Frozen
// weights get no gradient.
Gradients backward(const BaseModel& base, const Projector& proj, const TaskAdapterSet& adapters,
                   const Sample& sample);

// Composition that applies one adapter set at every block with weight 1.
ComposedAdapters single_set_composition(const ModelConfig& cfg, std::shared_ptr<const TaskAdapterSet> set,
                                        std::string strategy = "single");

/// A projector and a composition over the shared frozen base. A routed
/// composition gets its mixture weights per prompt from `router`, which
/// only ever sees the prompt.
struct AdaptedModel {
    std::shared_ptr<const Projector> projector;
    ComposedAdapters composition;
    std::function<Vector(const Prompt&)> router;
    std::string tag;

    // The composition with routed weights filled in for `prompt`.
    ComposedAdapters resolved(const Prompt& prompt) const;
    Matrix logits(const BaseModel& base, const Sample& sample) const;
};

}  // namespace hide_forge
