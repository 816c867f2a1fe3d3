// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace hide_forge {

// HIDE_FORGE_THREADS when set to a positive integer, else the number of
// hardware threads (at least 1).
std::size_t worker_count();

// Calls fn(i) for every i in [0, n), split into contiguous ranges over at
// most worker_count() threads. fn must only write to slots owned by i.
// An exception thrown by a worker is rethrown once all threads have joined.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hide_forge
