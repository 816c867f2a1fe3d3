// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/model_config.hpp"

#include <charconv>

#include <fmt/format.h>

#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace {

std::size_t parse_count(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw IngestionError("model config: missing key '" + key + "'");
    }
    std::size_t value = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw IngestionError("model config: '" + key + "' is not a count: " + s);
    }
    return value;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_seq_len == 0 || visual_dim == 0 ||
        visual_prefix_len == 0) {
        throw ConfigurationError("model config: all counts must be positive");
    }
    if (n_blocks < 2) {
        throw ConfigurationError("model config: n_blocks must be >= 2 so a distinct top block exists");
    }
    if (d_model % n_heads != 0) {
        throw ConfigurationError("model config: d_model must be divisible by n_heads");
    }
    if (lora_rank == 0) {
        throw ConfigurationError("model config: lora_rank must be >= 1");
    }
    if (!(lora_alpha > 0.0)) {
        throw ConfigurationError("model config: lora_alpha must be positive");
    }
    if (visual_prefix_len >= max_seq_len) {
        throw ConfigurationError("model config: visual prefix leaves no room for text");
    }
}

std::map<std::string, std::string> ModelConfig::to_key_values() const {
    return {
        {"vocab_size", std::to_string(vocab_size)},
        {"d_model", std::to_string(d_model)},
        {"n_blocks", std::to_string(n_blocks)},
        {"n_heads", std::to_string(n_heads)},
        {"d_ff", std::to_string(d_ff)},
        {"max_seq_len", std::to_string(max_seq_len)},
        {"visual_dim", std::to_string(visual_dim)},
        {"visual_prefix_len", std::to_string(visual_prefix_len)},
        {"lora_rank", std::to_string(lora_rank)},
        {"lora_alpha", fmt::format("{}", lora_alpha)},
    };
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
    ModelConfig cfg;
    cfg.vocab_size = parse_count(kv, "vocab_size");
    cfg.d_model = parse_count(kv, "d_model");
    cfg.n_blocks = parse_count(kv, "n_blocks");
    cfg.n_heads = parse_count(kv, "n_heads");
    cfg.d_ff = parse_count(kv, "d_ff");
    cfg.max_seq_len = parse_count(kv, "max_seq_len");
    cfg.visual_dim = parse_count(kv, "visual_dim");
    cfg.visual_prefix_len = parse_count(kv, "visual_prefix_len");
    cfg.lora_rank = parse_count(kv, "lora_rank");
    const auto it = kv.find("lora_alpha");
    if (it == kv.end()) {
        throw IngestionError("model config: missing key 'lora_alpha'");
    }
    try {
        cfg.lora_alpha = std::stod(it->second);
    } catch (const std::exception&) {
        throw IngestionError("model config: 'lora_alpha' is not a real: " + it->second);
    }
    cfg.validate();
    return cfg;
}

std::string_view site_name(Site site) {
    switch (site) {
        case Site::attn_q: return "attn_q";
        case Site::attn_k: return "attn_k";
        case Site::attn_v: return "attn_v";
        case Site::attn_o: return "attn_o";
        case Site::ff_1: return "ff_1";
        case Site::ff_2: return "ff_2";
    }
    return "unknown";
}

Site parse_site(std::string_view name) {
    for (Site s : kAllSites) {
        if (site_name(s) == name) {
            return s;
        }
    }
    throw IngestionError("unknown linear site '" + std::string(name) + "'");
}

SiteShape site_shape(const ModelConfig& cfg, Site site) {
    switch (site) {
        case Site::attn_q:
        case Site::attn_k:
        case Site::attn_v:
        case Site::attn_o: return {cfg.d_model, cfg.d_model};
        case Site::ff_1: return {cfg.d_ff, cfg.d_model};
        case Site::ff_2: return {cfg.d_model, cfg.d_ff};
    }
    return {0, 0};
}

std::string SiteId::name() const { return fmt::format("block{}.{}", block, site_name(site)); }

SiteId SiteId::parse(std::string_view name) {
    constexpr std::string_view prefix = "block";
    const auto dot = name.find('.');
    if (!name.starts_with(prefix) || dot == std::string_view::npos) {
        throw IngestionError("malformed site name '" + std::string(name) + "'");
    }
    SiteId id;
    const auto digits = name.substr(prefix.size(), dot - prefix.size());
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), id.block);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) {
        throw IngestionError("malformed site name '" + std::string(name) + "'");
    }
    id.site = parse_site(name.substr(dot + 1));
    return id;
}

}  // namespace hide_forge
