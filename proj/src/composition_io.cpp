// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <fmt/format.h>

#include "hide_forge/continual.hpp"
#include "hide_forge/errors.hpp"
#include "hide_forge/state_io.hpp"

namespace hide_forge {

namespace {

std::string_view block_mode_name(BlockMode m) {
    switch (m) {
        case BlockMode::base: return "base";
        case BlockMode::merged: return "merged";
        case BlockMode::mixture: return "mixture";
    }
    return "?";
}

BlockMode parse_block_mode(const std::string& name) {
    for (BlockMode m : {BlockMode::base, BlockMode::merged, BlockMode::mixture}) {
        if (block_mode_name(m) == name) {
            return m;
        }
    }
    throw IngestionError("unknown block mode '" + name + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    if (text.empty()) {
        return out;
    }
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, sep)) {
        out.push_back(item);
    }
    return out;
}

}  // namespace

TensorContainer composition_to_container(const ContinualState& state, Strategy strategy,
                                         std::optional<std::size_t> true_task, const ComposeOptions& options) {
    const AdaptedModel model = compose(state, strategy, true_task, options);
    const ComposedAdapters& c = model.composition;
    const std::size_t stages = options.stages.value_or(state.num_tasks());

    TensorContainer out;
    auto& meta = out.metadata();
    meta["kind"] = "composition";
    for (const auto& [k, v] : state.config().to_key_values()) {
        meta["model." + k] = v;
    }
    meta["seed"] = std::to_string(state.seed());
    meta["feat_dim"] = std::to_string(state.feature_dim());
    meta["base_checksum"] = state.base().checksum();
    meta["strategy"] = std::string(strategy_name(strategy));
    meta["stages"] = std::to_string(stages);

    std::string modes;
    for (std::size_t b = 0; b < c.block_modes.size(); ++b) {
        modes += (b == 0 ? "" : ",") + std::string(block_mode_name(c.block_modes[b]));
    }
    meta["block_modes"] = modes;
    meta["routed"] = c.routed ? "true" : "false";
    std::string weights;
    for (std::size_t i = 0; i < c.weights.size(); ++i) {
        weights += (i == 0 ? "" : ",") + fmt::format("{}", c.weights[i]);
    }
    meta["weights"] = weights;

    store_projector(out, "projector.", *model.projector);
    if (c.merged) {
        for (const auto& [site, delta] : c.merged->deltas) {
            out.put("merged." + site.name(), delta);
        }
    }
    meta["num_experts"] = std::to_string(c.experts.size());
    for (std::size_t i = 0; i < c.experts.size(); ++i) {
        const std::string prefix = fmt::format("expert{}.", i);
        meta[prefix + "id"] = c.experts[i]->task_id();
        store_adapters(out, prefix, *c.experts[i]);
    }
    if (c.routed) {
        const ComposeOptions& o = options;
        store_router(meta, "router.", ablated_config(o.router.value_or(state.router()), o.modality));
        const std::vector<TaskAnchor> anchors = state.anchors(stages);
        meta["num_anchors"] = std::to_string(anchors.size());
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            const std::string prefix = fmt::format("anchor{}.", i);
            meta[prefix + "id"] = anchors[i].task_id;
            store_anchor(out, prefix, anchors[i]);
        }
    }
    return out;
}

StoredComposition composition_from_container(const TensorContainer& c) {
    const auto& meta = c.metadata();
    if (!meta.count("kind") || c.meta("kind") != "composition") {
        throw IngestionError("checkpoint is not a composition");
    }
    StoredComposition out;
    const ModelConfig cfg = load_model_config(meta, "model.");
    out.seed = parse_u64(c.meta("seed"), "seed");
    const std::size_t feat_dim = parse_u64(c.meta("feat_dim"), "feat_dim");
    try {
        out.frozen = FrozenParts::from_seed(cfg, out.seed, feat_dim);
    } catch (const ConfigurationError& e) {
        throw IngestionError(std::string("composition model config: ") + e.what());
    }
    if (out.frozen.base->checksum() != c.meta("base_checksum")) {
        throw IngestionError("composition base checksum does not match the base rebuilt from its seed");
    }
    out.strategy = c.meta("strategy");
    out.stages = parse_u64(c.meta("stages"), "stages");

    AdaptedModel& model = out.model;
    model.tag = out.strategy;
    model.projector = std::make_shared<const Projector>(load_projector(c, "projector.", cfg));
    ComposedAdapters& comp = model.composition;
    comp.strategy = out.strategy;
    for (const std::string& m : split(c.meta("block_modes"), ',')) {
        comp.block_modes.push_back(parse_block_mode(m));
    }
    for (const std::string& w : split(c.meta("weights"), ',')) {
        comp.weights.push_back(parse_real(w, "weights"));
    }
    comp.routed = c.meta("routed") == "true";

    MergedDelta merged;
    for (const auto& [name, tensor] : c.tensors()) {
        if (name.rfind("merged.", 0) == 0) {
            try {
                merged.deltas.emplace(SiteId::parse(name.substr(7)), tensor);
            } catch (const std::exception&) {
                throw IngestionError("malformed merged tensor name '" + name + "'");
            }
        }
    }
    if (!merged.deltas.empty()) {
        comp.merged = std::make_shared<const MergedDelta>(std::move(merged));
    }
    const std::size_t n_experts = parse_u64(c.meta("num_experts"), "num_experts");
    for (std::size_t i = 0; i < n_experts; ++i) {
        const std::string prefix = fmt::format("expert{}.", i);
        comp.experts.push_back(
            std::make_shared<const TaskAdapterSet>(load_adapters(c, prefix, cfg, c.meta(prefix + "id"))));
    }
    if (comp.routed) {
        const RouterConfig router = load_router(meta, "router.");
        std::vector<TaskAnchor> anchors;
        const std::size_t n_anchors = parse_u64(c.meta("num_anchors"), "num_anchors");
        for (std::size_t i = 0; i < n_anchors; ++i) {
            const std::string prefix = fmt::format("anchor{}.", i);
            anchors.push_back(load_anchor(c, prefix, c.meta(prefix + "id")));
        }
        if (anchors.size() != comp.experts.size()) {
            throw IngestionError("composition stores a different number of anchors and experts");
        }
        try {
            router.validate();
            model.router = make_router(out.frozen.encoder, std::move(anchors), router);
        } catch (const std::exception& e) {
            throw IngestionError(std::string("composition router: ") + e.what());
        }
    }
    try {
        if (comp.routed) {
            comp.with_weights(Vector(comp.experts.size(), 1.0 / static_cast<double>(comp.experts.size())))
                .validate(cfg);
        } else {
            comp.validate(cfg);
        }
    } catch (const std::exception& e) {
        throw IngestionError(std::string("composition is inconsistent: ") + e.what());
    }
    return out;
}

}  // namespace hide_forge
