// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/state_io.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "hide_forge/continual.hpp"
#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace {

const std::string& lookup(const MetaMap& meta, const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) {
        throw IngestionError("checkpoint: missing metadata key '" + key + "'");
    }
    return it->second;
}

Matrix row_of(const Vector& v) { return Matrix(1, v.size(), v); }

Vector vector_of(const Matrix& m, const std::string& name) {
    if (m.rows() != 1) {
        throw IngestionError("checkpoint: tensor '" + name + "' is not a row vector");
    }
    return Vector(m.values().begin(), m.values().end());
}

}  // namespace

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw IngestionError(fmt::format("'{}' is not a non-negative integer: '{}'", what, text));
    }
    return value;
}

double parse_real(const std::string& text, const std::string& what) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
        throw IngestionError(fmt::format("'{}' is not a finite real: '{}'", what, text));
    }
    return value;
}

void store_adapters(TensorContainer& c, const std::string& prefix, const TaskAdapterSet& set) {
    for (const LoraAdapter& adapter : set.adapters()) {
        const std::string name = prefix + adapter.site.name();
        c.put(name + ".A", adapter.a);
        c.put(name + ".B", adapter.b);
    }
}

TaskAdapterSet load_adapters(const TensorContainer& c, const std::string& prefix, const ModelConfig& cfg,
                             std::string task_id) {
    std::vector<LoraAdapter> adapters;
    for (std::size_t block = 0; block < cfg.n_blocks; ++block) {
        for (Site site : kAllSites) {
            LoraAdapter adapter;
            adapter.site = {block, site};
            const std::string name = prefix + adapter.site.name();
            adapter.a = c.get(name + ".A");
            adapter.b = c.get(name + ".B");
            adapter.scaling = cfg.lora_scaling();
            adapters.push_back(std::move(adapter));
        }
    }
    TaskAdapterSet set(std::move(task_id), std::move(adapters));
    try {
        set.validate(cfg);
    } catch (const ConfigurationError& e) {
        throw IngestionError(std::string("checkpoint: ") + e.what());
    }
    return set;
}

void store_anchor(TensorContainer& c, const std::string& prefix, const TaskAnchor& anchor) {
    c.put(prefix + "anchor_v", row_of(anchor.m_v));
    c.put(prefix + "anchor_ins", row_of(anchor.m_ins));
    c.put(prefix + "n_seen", Matrix(1, 1, static_cast<double>(anchor.n_seen)));
}

TaskAnchor load_anchor(const TensorContainer& c, const std::string& prefix, std::string task_id) {
    TaskAnchor anchor;
    anchor.task_id = std::move(task_id);
    anchor.m_v = vector_of(c.get(prefix + "anchor_v"), prefix + "anchor_v");
    anchor.m_ins = vector_of(c.get(prefix + "anchor_ins"), prefix + "anchor_ins");
    const Matrix& n = c.get(prefix + "n_seen");
    if (n.size() != 1 || !(n(0, 0) >= 1.0) || n(0, 0) != std::floor(n(0, 0))) {
        throw IngestionError("checkpoint: bad sample count for anchor '" + anchor.task_id + "'");
    }
    anchor.n_seen = static_cast<std::uint64_t>(n(0, 0));
    try {
        anchor.validate();
    } catch (const std::exception& e) {
        throw IngestionError(std::string("checkpoint: ") + e.what());
    }
    return anchor;
}

void store_projector(TensorContainer& c, const std::string& prefix, const Projector& projector) {
    c.put(prefix + "weight", projector.weight);
    c.put(prefix + "bias", row_of(projector.bias));
}

Projector load_projector(const TensorContainer& c, const std::string& prefix, const ModelConfig& cfg) {
    Projector p;
    p.weight = c.get(prefix + "weight");
    p.bias = vector_of(c.get(prefix + "bias"), prefix + "bias");
    try {
        p.validate(cfg);
    } catch (const std::exception& e) {
        throw IngestionError(std::string("checkpoint: ") + e.what());
    }
    return p;
}

void store_router(MetaMap& meta, const std::string& prefix, const RouterConfig& router) {
    meta[prefix + "alpha"] = fmt::format("{}", router.alpha);
    meta[prefix + "beta"] = fmt::format("{}", router.beta);
    meta[prefix + "temperature"] = fmt::format("{}", router.temperature);
}

RouterConfig load_router(const MetaMap& meta, const std::string& prefix) {
    RouterConfig r;
    r.alpha = parse_real(lookup(meta, prefix + "alpha"), prefix + "alpha");
    r.beta = parse_real(lookup(meta, prefix + "beta"), prefix + "beta");
    r.temperature = parse_real(lookup(meta, prefix + "temperature"), prefix + "temperature");
    return r;
}

void store_train_config(MetaMap& meta, const std::string& prefix, const TrainConfig& t) {
    meta[prefix + "lora_lr"] = fmt::format("{}", t.lora_lr);
    meta[prefix + "projector_lr"] = fmt::format("{}", t.projector_lr);
    meta[prefix + "batch_size"] = std::to_string(t.batch_size);
    meta[prefix + "epochs"] = std::to_string(t.epochs);
    meta[prefix + "warmup_ratio"] = fmt::format("{}", t.warmup_ratio);
    meta[prefix + "adam_beta1"] = fmt::format("{}", t.adam_beta1);
    meta[prefix + "adam_beta2"] = fmt::format("{}", t.adam_beta2);
    meta[prefix + "adam_eps"] = fmt::format("{}", t.adam_eps);
    meta[prefix + "sequential_baseline"] = t.sequential_baseline ? "true" : "false";
}

TrainConfig load_train_config(const MetaMap& meta, const std::string& prefix) {
    TrainConfig t;
    auto real = [&](const char* key) { return parse_real(lookup(meta, prefix + key), prefix + key); };
    t.lora_lr = real("lora_lr");
    t.projector_lr = real("projector_lr");
    t.batch_size = parse_u64(lookup(meta, prefix + "batch_size"), prefix + "batch_size");
    t.epochs = parse_u64(lookup(meta, prefix + "epochs"), prefix + "epochs");
    t.warmup_ratio = real("warmup_ratio");
    t.adam_beta1 = real("adam_beta1");
    t.adam_beta2 = real("adam_beta2");
    t.adam_eps = real("adam_eps");
    const std::string& seq = lookup(meta, prefix + "sequential_baseline");
    if (seq != "true" && seq != "false") {
        throw IngestionError("checkpoint: sequential_baseline must be true or false");
    }
    t.sequential_baseline = seq == "true";
    return t;
}

ModelConfig load_model_config(const MetaMap& meta, const std::string& prefix) {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : meta) {
        if (k.starts_with(prefix)) {
            kv[k.substr(prefix.size())] = v;
        }
    }
    try {
        return ModelConfig::from_key_values(kv);
    } catch (const ConfigurationError& e) {
        throw IngestionError(std::string("checkpoint: ") + e.what());
    }
}

}  // namespace hide_forge
