// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace hide_forge {

// Degenerate numeric input (zero-norm vector, non-positive temperature, ...).
class DomainError : public std::domain_error {
 public:
    using std::domain_error::domain_error;
};

// A caller violated an operation's precondition.
class ContractError : public std::logic_error {
 public:
    using std::logic_error::logic_error;
};

// Shapes or site coverage do not line up with the model configuration.
class ConfigurationError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

// Malformed dataset, checkpoint, or config file.
class IngestionError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

// The synthetic benchmark could not satisfy its separability constraints.
class GenerationError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

}  // namespace hide_forge
