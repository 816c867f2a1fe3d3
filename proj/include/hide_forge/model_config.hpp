// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>

namespace hide_forge {

struct ModelConfig {
    std::size_t vocab_size = 64;
    std::size_t d_model = 64;
    std::size_t n_blocks = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_seq_len = 16;
    std::size_t visual_dim = 16;
    std::size_t visual_prefix_len = 4;
    std::size_t lora_rank = 8;
    double lora_alpha = 16.0;

    // Throws ConfigurationError when an invariant does not hold.
    void validate() const;

    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t top_block() const { return n_blocks - 1; }
    double lora_scaling() const { return lora_alpha / static_cast<double>(lora_rank); }

    // Flat key/value view, used by checkpoints and report echoes.
    std::map<std::string, std::string> to_key_values() const;
    static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// The six linear layers of a transformer block that carry a LoRA adapter.
enum class Site { attn_q, attn_k, attn_v, attn_o, ff_1, ff_2 };

inline constexpr std::array<Site, 6> kAllSites = {Site::attn_q, Site::attn_k, Site::attn_v,
                                                  Site::attn_o, Site::ff_1,   Site::ff_2};
inline constexpr std::size_t kSitesPerBlock = kAllSites.size();

std::string_view site_name(Site site);
Site parse_site(std::string_view name);

struct SiteShape {
    std::size_t d_out;
    std::size_t d_in;
};

SiteShape site_shape(const ModelConfig& cfg, Site site);

struct SiteId {
    std::size_t block = 0;
    Site site = Site::attn_q;

    // Stable name "block{i}.{site}".
    std::string name() const;
    static SiteId parse(std::string_view name);

    friend auto operator<=>(const SiteId&, const SiteId&) = default;
};

}  // namespace hide_forge
