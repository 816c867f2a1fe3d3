// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>

#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) { return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }
MutMap view(Matrix& m) { return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(what) + ": shape mismatch");
    }
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw ContractError("Matrix: value count does not match rows*cols");
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw ContractError("Matrix::from_rows: ragged rows");
        }
        values.insert(values.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

void Matrix::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "Matrix::operator+=");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] += other.values_[i];
    }
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "Matrix::operator-=");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        values_[i] -= other.values_[i];
    }
    return *this;
}

Matrix& Matrix::operator*=(double scale) {
    for (double& v : values_) {
        v *= scale;
    }
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double scale) { return a *= scale; }
Matrix operator*(double scale, Matrix a) { return a *= scale; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    add_matmul(out, a, b);
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    add_matmul_bt(out, a, b);
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    add_matmul_at(out, a, b);
    return out;
}

void add_matmul(Matrix& out, const Matrix& a, const Matrix& b, double scale) {
    if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
        throw ContractError("matmul: inner dimensions do not agree");
    }
    view(out).noalias() += scale * (view(a) * view(b));
}

void add_matmul_bt(Matrix& out, const Matrix& a, const Matrix& b, double scale) {
    if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
        throw ContractError("matmul_bt: inner dimensions do not agree");
    }
    view(out).noalias() += scale * (view(a) * view(b).transpose());
}

void add_matmul_at(Matrix& out, const Matrix& a, const Matrix& b, double scale) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw ContractError("matmul_at: inner dimensions do not agree");
    }
    view(out).noalias() += scale * (view(a).transpose() * view(b));
}

Vector matvec(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.cols()) {
        throw ContractError("matvec: length mismatch");
    }
    Vector y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        y[r] = dot(m.row(r), x);
    }
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ContractError("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double frobenius_norm(const Matrix& m) { return norm(m.values()); }

double trace(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw ContractError("trace: matrix is not square");
    }
    double t = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        t += m(i, i);
    }
    return t;
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw ContractError("cosine_similarity: vectors must have equal nonzero length");
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0 || !std::isfinite(na) || !std::isfinite(nb)) {
        throw DomainError("degenerate feature vector");
    }
    // Clamp rounding excursions so |result| <= 1 always holds.
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector softmax_with_temperature(std::span<const double> scores, double temperature) {
    if (scores.empty()) {
        throw DomainError("softmax_with_temperature: empty input");
    }
    if (!(temperature > 0.0)) {
        throw DomainError("softmax_with_temperature: temperature must be positive");
    }
    const double peak = *std::max_element(scores.begin(), scores.end());
    Vector out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - peak) / temperature);
        total += out[i];
    }
    for (double& v : out) {
        v /= total;
    }
    return out;
}

Vector column_means(const Matrix& x) {
    if (x.rows() == 0) {
        throw ContractError("column_means: matrix has no rows");
    }
    Vector means(x.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            means[c] += x(r, c);
        }
    }
    for (double& m : means) {
        m /= static_cast<double>(x.rows());
    }
    return means;
}

Matrix center_columns(const Matrix& x) {
    const Vector means = column_means(x);
    Matrix out = x;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) -= means[c];
        }
    }
    return out;
}

SeededRng::SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

std::uint64_t SeededRng::next_u64() { return engine_(); }

double SeededRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeededRng::uniform_index(std::uint64_t bound) {
    if (bound == 0) {
        throw ContractError("uniform_index: bound must be positive");
    }
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) {
        x = next_u64();
    }
    return x % bound;
}

double SeededRng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    // Box-Muller; u1 is kept away from zero.
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * radius * std::cos(angle);
}

Matrix SeededRng::normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.values()) {
        v = normal(0.0, stddev);
    }
    return m;
}

Vector SeededRng::normal_vector(std::size_t n, double stddev) {
    Vector v(n);
    for (double& x : v) {
        x = normal(0.0, stddev);
    }
    return v;
}

std::uint64_t SeededRng::derive(std::uint64_t seed, std::string_view label) {
    // FNV-1a over the label, folded into the seed through splitmix64.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : label) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed) ^ h);
}

}  // namespace hide_forge
