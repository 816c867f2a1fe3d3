// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "support/fixtures.hpp"

namespace hide_forge::fixtures {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 12;
    cfg.d_model = 16;
    cfg.n_blocks = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 24;
    cfg.max_seq_len = 10;
    cfg.visual_dim = 5;
    cfg.visual_prefix_len = 2;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 4.0;
    return cfg;
}

Sample random_sample(const ModelConfig& cfg, SeededRng& rng, std::size_t instruction_len, std::size_t answer_len) {
    Sample s;
    s.id = rng.next_u64() % 100000;
    s.task = "fixture";
    s.prompt.visual = rng.normal_matrix(cfg.visual_prefix_len, cfg.visual_dim, 1.0);
    for (std::size_t i = 0; i < instruction_len; ++i) {
        s.prompt.instruction.push_back(static_cast<int>(rng.uniform_index(cfg.vocab_size)));
    }
    for (std::size_t i = 0; i < answer_len; ++i) {
        s.answer.push_back(static_cast<int>(rng.uniform_index(cfg.vocab_size)));
    }
    return s;
}

TaskAdapterSet random_adapters(const ModelConfig& cfg, const std::string& task, SeededRng& rng, double stddev) {
    TaskAdapterSet set = TaskAdapterSet::initialized(cfg, task, rng);
    for (LoraAdapter& a : set.adapters()) {
        a.a = rng.normal_matrix(a.a.rows(), a.a.cols(), stddev);
        a.b = rng.normal_matrix(a.b.rows(), a.b.cols(), stddev);
    }
    return set;
}

}  // namespace hide_forge::fixtures
