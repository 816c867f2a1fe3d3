// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: gen-data, train, compose, eval, cka, sweep and
// report. Results go to files, diagnostics to the error stream.

#pragma once

#include <string>
#include <vector>

namespace hide_forge {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// `args` excludes the program name. Returns 0 on success, 1 on a usage or
// config error and 2 on a data or contract error.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

}  // namespace hide_forge
