// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration files: a YAML document with one mapping per
// module (run, model, bench, router, train, sweep, cka) holding scalar or
// list values. Missing keys keep their defaults; unknown sections, unknown
// keys and mistyped values are errors.

#pragma once

#include <filesystem>
#include <string>

#include "hide_forge/bench.hpp"

namespace hide_forge {

// Throws IngestionError on malformed text, unknown keys or mistyped values,
// and ConfigurationError when the parsed configuration is invalid.
SuiteConfig parse_suite_config(const std::string& text);
SuiteConfig read_suite_config(const std::filesystem::path& path);

// Every field in a fixed order with round-trip number formatting; parsing
// it back gives an equal configuration.
std::string canonical_config_text(const SuiteConfig& cfg);

// SHA-256 of the canonical text, lowercase hex.
std::string config_hash(const SuiteConfig& cfg);

}  // namespace hide_forge
