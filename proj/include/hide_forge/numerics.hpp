// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, a portable seeded RNG, and the handful of
// statistical primitives the rest of the library is built on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace hide_forge {

using Vector = std::vector<double>;

class Matrix {
 public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    Matrix transposed() const;
    void fill(double value);
    bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double scale);

    friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double scale);
Matrix operator*(double scale, Matrix a);

// a · b
Matrix matmul(const Matrix& a, const Matrix& b);
// a · bᵀ
Matrix matmul_bt(const Matrix& a, const Matrix& b);
// aᵀ · b
Matrix matmul_at(const Matrix& a, const Matrix& b);
// out += scale · a · bᵀ
void add_matmul_bt(Matrix& out, const Matrix& a, const Matrix& b, double scale = 1.0);
// out += scale · aᵀ · b
void add_matmul_at(Matrix& out, const Matrix& a, const Matrix& b, double scale = 1.0);
// out += scale · a · b
void add_matmul(Matrix& out, const Matrix& a, const Matrix& b, double scale = 1.0);

Vector matvec(const Matrix& m, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double frobenius_norm(const Matrix& m);
double trace(const Matrix& m);
bool all_finite(std::span<const double> values);

// a·b / (‖a‖‖b‖). Throws DomainError("degenerate feature vector") on a
// zero-norm input and ContractError on a length mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Max-shifted softmax of scores / temperature.
Vector softmax_with_temperature(std::span<const double> scores, double temperature);

// Subtracts each column's mean.
Matrix center_columns(const Matrix& x);

// Column means of an n×p matrix.
Vector column_means(const Matrix& x);

/// Deterministic generator whose draw sequence depends only on the seed.
///
/// Built on std::mt19937_64, whose output is fixed by the standard. The
/// standard distributions are implementation-defined, so uniform and
/// Gaussian draws are derived here from raw 64-bit outputs.
class SeededRng {
 public:
    explicit SeededRng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    // Uniform integer in [0, bound).
    std::uint64_t uniform_index(std::uint64_t bound);
    double normal(double mean = 0.0, double stddev = 1.0);

    Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev);
    Vector normal_vector(std::size_t n, double stddev);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[uniform_index(i)]);
        }
    }

    // Independent child stream keyed by a label, for splitting one run seed
    // into per-purpose seeds that do not shift when unrelated draws change.
    static std::uint64_t derive(std::uint64_t seed, std::string_view label);

 private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hide_forge
