// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace gapprune {

/// Dense row-major matrix of doubles.
///
/// Every kernel in the project is built on this type. All operations are pure
/// and deterministic: the same inputs produce bit-identical outputs, and each
/// output element of a product is accumulated left-to-right over the inner
/// dimension.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    const std::vector<double>& values() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }

    Matrix transposed() const;
    void fill(double value);
    // Grows the matrix by one row; an empty matrix adopts the row's width.
    void append_row(std::span<const double> values);
    bool all_finite() const noexcept;

    friend bool operator==(const Matrix& a, const Matrix& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T without materialising the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

// Accumulates a^T * b into out (out += a^T b). Used for weight gradients.
void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out);

Matrix softmax_rows(const Matrix& m);
void softmax_inplace(std::span<double> row);

inline constexpr double kLayerNormEps = 1e-5;

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                  double eps = kLayerNormEps);

/// Index of the maximum; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

// Counts floating point operations (2 per multiply-add) performed by the
// product kernels on the current thread while an instance is alive.
class FlopCounter {
public:
    FlopCounter();
    ~FlopCounter();
    FlopCounter(const FlopCounter&) = delete;
    FlopCounter& operator=(const FlopCounter&) = delete;

    std::uint64_t count() const noexcept { return count_; }

    static void record(std::uint64_t flops) noexcept;

private:
    std::uint64_t count_ = 0;
    FlopCounter* previous_ = nullptr;
};

}  // namespace gapprune
