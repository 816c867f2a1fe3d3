// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "support/oracles.hpp"

#include <cmath>

namespace hide_forge::oracle {

namespace {

Dense centered_kernel(const Dense& x) {
    const std::size_t n = x.size();
    Dense k(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < x[i].size(); ++c) {
                k[i][j] += x[i][c] * x[j][c];
            }
        }
    }
    Dense h(n, std::vector<double>(n, -1.0 / static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
        h[i][i] += 1.0;
    }
    return naive_matmul(naive_matmul(h, k), h);
}

}  // namespace

Dense to_dense(const Matrix& m) {
    Dense d(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            d[r][c] = m(r, c);
        }
    }
    return d;
}

Dense naive_matmul(const Dense& a, const Dense& b) {
    const std::size_t n = a.size();
    const std::size_t m = b.empty() ? 0 : b[0].size();
    Dense out(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t k = 0; k < b.size(); ++k) {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    return out;
}

double brute_force_hsic(const Dense& x, const Dense& y) {
    const Dense kx = centered_kernel(x);
    const Dense ky = centered_kernel(y);
    const Dense prod = naive_matmul(kx, ky);
    double tr = 0.0;
    for (std::size_t i = 0; i < prod.size(); ++i) {
        tr += prod[i][i];
    }
    const double n1 = static_cast<double>(x.size()) - 1.0;
    return tr / (n1 * n1);
}

double brute_force_cka(const Dense& x, const Dense& y) {
    return brute_force_hsic(x, y) / std::sqrt(brute_force_hsic(x, x) * brute_force_hsic(y, y));
}

double central_difference(const std::function<double()>& f, double& coordinate, double step) {
    const double saved = coordinate;
    coordinate = saved + step;
    const double up = f();
    coordinate = saved - step;
    const double down = f();
    coordinate = saved;
    return (up - down) / (2.0 * step);
}

Matrix random_orthogonal(std::size_t n, SeededRng& rng) {
    Dense cols(n, std::vector<double>(n));
    for (auto& col : cols) {
        for (double& v : col) {
            v = rng.normal();
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double proj = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                proj += cols[i][k] * cols[j][k];
            }
            for (std::size_t k = 0; k < n; ++k) {
                cols[i][k] -= proj * cols[j][k];
            }
        }
        double len = 0.0;
        for (double v : cols[i]) {
            len += v * v;
        }
        len = std::sqrt(len);
        for (double& v : cols[i]) {
            v /= len;
        }
    }
    Matrix q(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            q(r, c) = cols[c][r];
        }
    }
    return q;
}

}  // namespace hide_forge::oracle
