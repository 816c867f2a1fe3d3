// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/cka.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "hide_forge/errors.hpp"

namespace hide_forge {

void ActivationMatrix::validate() const {
    if (n() < 2) {
        throw ContractError(fmt::format("ActivationMatrix '{}' layer {}: need n >= 2, got {}", model_tag, layer, n()));
    }
    if (!all_finite(values.values())) {
        throw DomainError(fmt::format("ActivationMatrix '{}' layer {}: non-finite entries", model_tag, layer));
    }
}

Matrix centered_linear_kernel(const Matrix& x) {
    const Matrix centered = center_columns(x);
    return matmul_bt(centered, centered);
}

double hsic(const Matrix& kx, const Matrix& ky) {
    if (!kx.same_shape(ky) || kx.rows() != kx.cols()) {
        throw ContractError("hsic: kernels must be square and of equal size");
    }
    if (kx.rows() < 2) {
        throw ContractError("hsic: need at least two samples");
    }
    // tr(K_X K_Y) = Σ_ij K_X[i,j] K_Y[j,i]
    double tr = 0.0;
    const std::size_t n = kx.rows();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            tr += kx(i, j) * ky(j, i);
        }
    }
    const double m = static_cast<double>(n - 1);
    return tr / (m * m);
}

double linear_cka(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows()) {
        throw ContractError(fmt::format("linear_cka: sample counts differ ({} vs {})", x.rows(), y.rows()));
    }
    const Matrix kx = centered_linear_kernel(x);
    const Matrix ky = centered_linear_kernel(y);
    const double xx = hsic(kx, kx);
    const double yy = hsic(ky, ky);
    if (!(xx > 0.0) || !(yy > 0.0)) {
        throw DomainError("linear_cka: degenerate activations (zero variance)");
    }
    return hsic(kx, ky) / std::sqrt(xx * yy);
}

double linear_cka(const ActivationMatrix& x, const ActivationMatrix& y) {
    x.validate();
    y.validate();
    return linear_cka(x.values, y.values);
}

Vector layerwise_scan(const BaseModel& base, const AdaptedModel& a, const AdaptedModel& b,
                      std::span<const Prompt> probe, ProbePosition pooling) {
    const std::size_t n_blocks = base.config.n_blocks;
    if (a.composition.block_modes.size() != n_blocks || b.composition.block_modes.size() != n_blocks) {
        throw ContractError("layerwise_scan: compositions do not match the base architecture");
    }
    if (!a.projector || !b.projector) {
        throw ContractError("layerwise_scan: missing projector");
    }
    if (probe.size() < 2) {
        throw ContractError("layerwise_scan: probe needs at least two prompts");
    }
    const std::size_t d = base.config.d_model;
    std::vector<ActivationMatrix> xs(n_blocks), ys(n_blocks);
    for (std::size_t block = 0; block < n_blocks; ++block) {
        xs[block] = {Matrix(probe.size(), d), block, a.tag};
        ys[block] = {Matrix(probe.size(), d), block, b.tag};
    }
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const Matrix out_a = block_outputs(base, *a.projector, a.resolved(probe[i]), probe[i], pooling);
        const Matrix out_b = block_outputs(base, *b.projector, b.resolved(probe[i]), probe[i], pooling);
        for (std::size_t block = 0; block < n_blocks; ++block) {
            for (std::size_t j = 0; j < d; ++j) {
                xs[block].values(i, j) = out_a(block, j);
                ys[block].values(i, j) = out_b(block, j);
            }
        }
    }
    Vector result(n_blocks);
    for (std::size_t block = 0; block < n_blocks; ++block) {
        result[block] = linear_cka(xs[block], ys[block]);
    }
    return result;
}

std::string cka_csv(std::span<const CkaRow> rows) {
    std::size_t width = 0;
    for (const CkaRow& row : rows) {
        width = std::max(width, row.values.size());
    }
    std::string out = "pair";
    for (std::size_t block = 0; block < width; ++block) {
        out += fmt::format(",block{}", block);
    }
    out += '\n';
    for (const CkaRow& row : rows) {
        if (row.values.size() != width) {
            throw ContractError("cka_csv: rows have different block counts");
        }
        out += row.pair;
        for (double v : row.values) {
            out += fmt::format(",{:.9f}", v);
        }
        out += '\n';
    }
    return out;
}

void write_cka_csv(const std::filesystem::path& path, std::span<const CkaRow> rows) {
    std::ofstream out(path);
    out << cka_csv(rows);
    if (!out) {
        throw IngestionError("cannot write " + path.string());
    }
}

}  // namespace hide_forge
