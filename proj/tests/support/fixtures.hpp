// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "hide_forge/model.hpp"

namespace hide_forge::fixtures {

// d_model 16, 2 blocks, small everything: fast enough for exhaustive
// finite-difference sweeps.
ModelConfig tiny_config();

// A well-formed sample with random visual values and token ids.
Sample random_sample(const ModelConfig& cfg, SeededRng& rng, std::size_t instruction_len = 3,
                     std::size_t answer_len = 2);

// Adapter set with every A and B drawn from N(0, stddev²), so that both
// halves carry gradient.
TaskAdapterSet random_adapters(const ModelConfig& cfg, const std::string& task, SeededRng& rng,
                               double stddev = 0.1);

}  // namespace hide_forge::fixtures
