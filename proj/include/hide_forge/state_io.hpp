// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tensor-container encodings of adapters, anchors, projectors and the
// small configuration records stored alongside them.

#pragma once

#include <map>
#include <string>

#include "hide_forge/adapters.hpp"
#include "hide_forge/anchors.hpp"
#include "hide_forge/checkpoint.hpp"
#include "hide_forge/model.hpp"

namespace hide_forge {

struct TrainConfig;

using MetaMap = std::map<std::string, std::string>;

// Tensors "{prefix}block{i}.{site}.A" and ".B".
void store_adapters(TensorContainer& c, const std::string& prefix, const TaskAdapterSet& set);
TaskAdapterSet load_adapters(const TensorContainer& c, const std::string& prefix, const ModelConfig& cfg,
                             std::string task_id);

// Tensors "{prefix}anchor_v", "{prefix}anchor_ins" (1 × feat_dim) and
// "{prefix}n_seen" (1 × 1).
void store_anchor(TensorContainer& c, const std::string& prefix, const TaskAnchor& anchor);
TaskAnchor load_anchor(const TensorContainer& c, const std::string& prefix, std::string task_id);

// Tensors "{prefix}weight" and "{prefix}bias" (1 × d_model).
void store_projector(TensorContainer& c, const std::string& prefix, const Projector& projector);
Projector load_projector(const TensorContainer& c, const std::string& prefix, const ModelConfig& cfg);

void store_router(MetaMap& meta, const std::string& prefix, const RouterConfig& router);
RouterConfig load_router(const MetaMap& meta, const std::string& prefix);

void store_train_config(MetaMap& meta, const std::string& prefix, const TrainConfig& train);
TrainConfig load_train_config(const MetaMap& meta, const std::string& prefix);

ModelConfig load_model_config(const MetaMap& meta, const std::string& prefix);

// Strict parsers; throw IngestionError naming `what`.
std::uint64_t parse_u64(const std::string& text, const std::string& what);
double parse_real(const std::string& text, const std::string& what);

}  // namespace hide_forge
