// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Linear centered kernel alignment and the layer-wise similarity scan
// between two adapted models.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hide_forge/model.hpp"
#include "hide_forge/numerics.hpp"

namespace hide_forge {

struct ActivationMatrix {
    Matrix values;  // n × p
    std::size_t layer = 0;
    std::string model_tag;

    std::size_t n() const { return values.rows(); }
    std::size_t p() const { return values.cols(); }
    // Throws ContractError when n < 2 and DomainError on non-finite entries.
    void validate() const;
};

// K = X̂ X̂ᵀ with X̂ the column-centered X.
Matrix centered_linear_kernel(const Matrix& x);

// tr(K_X K_Y) / (n−1)² for centered kernels.
double hsic(const Matrix& kx, const Matrix& ky);

// HSIC(K_X, K_Y) / √(HSIC(K_X, K_X) · HSIC(K_Y, K_Y)). Throws ContractError on
// a sample-count mismatch and DomainError when either input has zero
// variance.
double linear_cka(const ActivationMatrix& x, const ActivationMatrix& y);
double linear_cka(const Matrix& x, const Matrix& y);

// Per-block CKA between the two models' block outputs over the probe
// prompts. Returns one value per block. Throws ContractError when the
// compositions describe different architectures or the probe has fewer
// than two prompts.
Vector layerwise_scan(const BaseModel& base, const AdaptedModel& a, const AdaptedModel& b,
                      std::span<const Prompt> probe, ProbePosition pooling = ProbePosition::final_position);

struct CkaRow {
    std::string pair;  // e.g. "task0|task1"
    Vector values;     // one per block
};

// Heatmap table: header "pair,block0,...", cells with 9 decimal places.
std::string cka_csv(std::span<const CkaRow> rows);
void write_cka_csv(const std::filesystem::path& path, std::span<const CkaRow> rows);

}  // namespace hide_forge
