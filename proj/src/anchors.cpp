// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/anchors.hpp"

#include <cmath>

#include <fmt/format.h>

#include "hide_forge/errors.hpp"

namespace hide_forge {

FrozenEncoder FrozenEncoder::create(const BaseModel& base, std::uint64_t seed, std::size_t feat_dim) {
    if (feat_dim == 0) {
        throw ConfigurationError("FrozenEncoder: feature dimension must be positive");
    }
    const ModelConfig& cfg = base.config;
    SeededRng visual_rng(SeededRng::derive(seed, "encoder.visual"));
    SeededRng text_rng(SeededRng::derive(seed, "encoder.instruction"));
    FrozenEncoder enc;
    enc.visual_projection =
        visual_rng.normal_matrix(feat_dim, cfg.visual_dim, 1.0 / std::sqrt(static_cast<double>(cfg.visual_dim)));
    enc.instruction_projection =
        text_rng.normal_matrix(feat_dim, cfg.d_model, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)));
    enc.token_embedding = base.token_embedding;
    return enc;
}

Vector FrozenEncoder::visual_features(const Prompt& prompt) const {
    const Matrix& v = prompt.visual;
    if (v.rows() == 0 || v.cols() != visual_projection.cols()) {
        throw ContractError(fmt::format("FrozenEncoder: visual input is {}×{}, expected n×{}", v.rows(), v.cols(),
                                        visual_projection.cols()));
    }
    return matvec(visual_projection, column_means(v));
}

Vector FrozenEncoder::instruction_features(const Prompt& prompt) const {
    if (prompt.instruction.empty()) {
        throw ContractError("FrozenEncoder: empty instruction");
    }
    Vector pooled(token_embedding.cols(), 0.0);
    for (int token : prompt.instruction) {
        if (token < 0 || static_cast<std::size_t>(token) >= token_embedding.rows()) {
            throw ContractError(fmt::format("FrozenEncoder: token {} outside the vocabulary", token));
        }
        const auto row = token_embedding.row(static_cast<std::size_t>(token));
        for (std::size_t j = 0; j < pooled.size(); ++j) {
            pooled[j] += row[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(prompt.instruction.size());
    for (double& x : pooled) {
        x *= inv;
    }
    return matvec(instruction_projection, pooled);
}

PromptFeatures FrozenEncoder::features(const Prompt& prompt) const {
    return {visual_features(prompt), instruction_features(prompt)};
}

void TaskAnchor::add(const PromptFeatures& features) {
    if (n_seen == 0) {
        m_v.assign(features.visual.size(), 0.0);
        m_ins.assign(features.instruction.size(), 0.0);
    } else if (features.visual.size() != m_v.size() || features.instruction.size() != m_ins.size()) {
        throw ContractError("TaskAnchor: feature dimension changed mid-stream");
    }
    ++n_seen;
    const double inv = 1.0 / static_cast<double>(n_seen);
    for (std::size_t i = 0; i < m_v.size(); ++i) {
        m_v[i] += (features.visual[i] - m_v[i]) * inv;
    }
    for (std::size_t i = 0; i < m_ins.size(); ++i) {
        m_ins[i] += (features.instruction[i] - m_ins[i]) * inv;
    }
}

void TaskAnchor::validate() const {
    if (n_seen == 0 || m_v.empty() || m_ins.empty()) {
        throw ContractError("TaskAnchor '" + task_id + "' is empty");
    }
    if (!all_finite(m_v) || !all_finite(m_ins)) {
        throw DomainError("TaskAnchor '" + task_id + "' has non-finite entries");
    }
}

TaskAnchor extract_anchor(const FrozenEncoder& encoder, std::string task_id, std::span<const Sample> stream) {
    if (stream.empty()) {
        throw ContractError("extract_anchor: empty stream for task '" + task_id + "'");
    }
    TaskAnchor anchor;
    anchor.task_id = std::move(task_id);
    for (const Sample& s : stream) {
        anchor.add(encoder.features(s.prompt));
    }
    return anchor;
}

void RouterConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigurationError(fmt::format("router temperature must be positive, got {}", temperature));
    }
    if (!std::isfinite(alpha) || !std::isfinite(beta)) {
        throw ConfigurationError("router α and β must be finite");
    }
}

std::string_view modality_name(Modality m) {
    switch (m) {
        case Modality::dual: return "dual";
        case Modality::visual_only: return "visual-only";
        case Modality::text_only: return "text-only";
    }
    return "?";
}

Modality parse_modality(std::string_view name) {
    for (Modality m : {Modality::dual, Modality::visual_only, Modality::text_only}) {
        if (modality_name(m) == name) {
            return m;
        }
    }
    throw ConfigurationError(fmt::format("unknown routing modality '{}'", name));
}

RouterConfig ablated_config(const RouterConfig& cfg, Modality mode) {
    RouterConfig out = cfg;
    switch (mode) {
        case Modality::dual: break;
        case Modality::visual_only:
            out.alpha = 1.0;
            out.beta = 0.0;
            break;
        case Modality::text_only:
            out.alpha = 0.0;
            out.beta = 1.0;
            break;
    }
    return out;
}

Vector fused_scores(const PromptFeatures& features, std::span<const TaskAnchor> anchors, const RouterConfig& cfg) {
    if (anchors.empty()) {
        throw ContractError("score_tasks: no anchors");
    }
    Vector scores;
    scores.reserve(anchors.size());
    for (const TaskAnchor& anchor : anchors) {
        const double r_v = cosine_similarity(features.visual, anchor.m_v);
        const double r_ins = cosine_similarity(features.instruction, anchor.m_ins);
        scores.push_back(cfg.alpha * r_v + cfg.beta * r_ins);
    }
    return scores;
}

Vector weights_from_features(const PromptFeatures& features, std::span<const TaskAnchor> anchors,
                             const RouterConfig& cfg) {
    cfg.validate();
    return softmax_with_temperature(fused_scores(features, anchors, cfg), cfg.temperature);
}

Vector score_tasks(const FrozenEncoder& encoder, std::span<const TaskAnchor> anchors, const Prompt& prompt,
                   const RouterConfig& cfg) {
    return weights_from_features(encoder.features(prompt), anchors, cfg);
}

Vector ablated_score_tasks(const FrozenEncoder& encoder, std::span<const TaskAnchor> anchors, const Prompt& prompt,
                           const RouterConfig& cfg, Modality mode) {
    return score_tasks(encoder, anchors, prompt, ablated_config(cfg, mode));
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) {
        throw ContractError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace hide_forge
