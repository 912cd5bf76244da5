// Copyright 2026 The gapprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "gapprune/matrix.hpp"

#include <algorithm>
#include <immintrin.h>
#include <cmath>
#include <limits>
#include <string>

#include "gapprune/errors.hpp"

namespace gapprune {

namespace {

thread_local FlopCounter* g_active_counter = nullptr;

// Every product element is a chain of fused multiply-adds over the inner
// dimension, starting from zero. Vector lanes and the scalar remainder path
// round identically, so a row's values never depend on how rows are blocked.
#if defined(__FMA__)
inline double madd(double a, double b, double c) noexcept { return std::fma(a, b, c); }
#else
inline double madd(double a, double b, double c) noexcept { return a * b + c; }
#endif

#if defined(__AVX512F__) && defined(__FMA__)
using Lane = __m512d;
constexpr std::size_t kLaneWidth = 8;
inline Lane lane_load(const double* p) noexcept { return _mm512_loadu_pd(p); }
inline void lane_store(double* p, Lane v) noexcept { _mm512_storeu_pd(p, v); }
inline Lane lane_splat(double v) noexcept { return _mm512_set1_pd(v); }
inline Lane lane_zero() noexcept { return _mm512_setzero_pd(); }
inline Lane lane_madd(Lane a, Lane b, Lane c) noexcept { return _mm512_fmadd_pd(a, b, c); }
#define GAPPRUNE_VECTOR_KERNEL 1
#elif defined(__AVX2__) && defined(__FMA__)
using Lane = __m256d;
constexpr std::size_t kLaneWidth = 4;
inline Lane lane_load(const double* p) noexcept { return _mm256_loadu_pd(p); }
inline void lane_store(double* p, Lane v) noexcept { _mm256_storeu_pd(p, v); }
inline Lane lane_splat(double v) noexcept { return _mm256_set1_pd(v); }
inline Lane lane_zero() noexcept { return _mm256_setzero_pd(); }
inline Lane lane_madd(Lane a, Lane b, Lane c) noexcept { return _mm256_fmadd_pd(a, b, c); }
#define GAPPRUNE_VECTOR_KERNEL 1
#endif

double product_element(const double* a, const double* b, std::size_t ldb, std::size_t inner) {
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) {
        acc = madd(a[k], b[k * ldb], acc);
    }
    return acc;
}

#if defined(GAPPRUNE_VECTOR_KERNEL)
constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 2 * kLaneWidth;

// C[0:4, 0:kColBlock] for a 4-row panel of A.
void product_block(const double* a, const double* b, double* c, std::size_t lda, std::size_t ldb,
                   std::size_t ldc, std::size_t inner) {
    Lane acc[kRowBlock][2];
    for (auto& row : acc) {
        row[0] = lane_zero();
        row[1] = lane_zero();
    }
    for (std::size_t k = 0; k < inner; ++k) {
        const Lane b0 = lane_load(b + k * ldb);
        const Lane b1 = lane_load(b + k * ldb + kLaneWidth);
        for (std::size_t r = 0; r < kRowBlock; ++r) {
            const Lane av = lane_splat(a[r * lda + k]);
            acc[r][0] = lane_madd(av, b0, acc[r][0]);
            acc[r][1] = lane_madd(av, b1, acc[r][1]);
        }
    }
    for (std::size_t r = 0; r < kRowBlock; ++r) {
        lane_store(c + r * ldc, acc[r][0]);
        lane_store(c + r * ldc + kLaneWidth, acc[r][1]);
    }
}

void product_row_lane(const double* a, const double* b, double* c, std::size_t ldb,
                      std::size_t inner) {
    Lane acc = lane_zero();
    for (std::size_t k = 0; k < inner; ++k) {
        acc = lane_madd(lane_splat(a[k]), lane_load(b + k * ldb), acc);
    }
    lane_store(c, acc);
}
#endif

void product_kernel(const double* a, const double* b, double* c, std::size_t m, std::size_t inner,
                    std::size_t n) {
    std::size_t done_cols = 0;
#if defined(GAPPRUNE_VECTOR_KERNEL)
    const std::size_t block_cols = n - n % kColBlock;
    const std::size_t block_rows = m - m % kRowBlock;
    for (std::size_t i = 0; i < block_rows; i += kRowBlock) {
        for (std::size_t j = 0; j < block_cols; j += kColBlock) {
            product_block(a + i * inner, b + j, c + i * n + j, inner, n, n, inner);
        }
    }
    const std::size_t lane_cols = n - n % kLaneWidth;
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t first = i < block_rows ? block_cols : 0;
        for (std::size_t j = first; j < lane_cols; j += kLaneWidth) {
            product_row_lane(a + i * inner, b + j, c + i * n + j, n, inner);
        }
    }
    done_cols = lane_cols;
#endif
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = done_cols; j < n; ++j) {
            c[i * n + j] = product_element(a + i * inner, b + j, n, inner);
        }
    }
}

std::string shape_string(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                         std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) {
            throw ShapeError("ragged matrix literal");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
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

void Matrix::append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) {
        cols_ = values.size();
    }
    if (values.size() != cols_) {
        throw ShapeError("append_row: expected " + std::to_string(cols_) + " values, got " +
                         std::to_string(values.size()));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_string(a) + " x " + shape_string(b));
    }
    const std::size_t m = a.rows();
    const std::size_t inner = a.cols();
    const std::size_t n = b.cols();
    Matrix c(m, n);
    FlopCounter::record(2ULL * m * inner * n);

    product_kernel(a.data(), b.data(), c.data(), m, inner, n);
    return c;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_transposed: " + shape_string(a) + " x " + shape_string(b) + "^T");
    }
    return matmul(a, b.transposed());
}

void accumulate_transposed_product(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw ShapeError("accumulate_transposed_product: " + shape_string(a) + "^T x " +
                         shape_string(b) + " into " + shape_string(out));
    }
    const Matrix product = matmul(a.transposed(), b);
    double* dst = out.data();
    const double* src = product.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        dst[i] += src[i];
    }
}

void softmax_inplace(std::span<double> row) {
    if (row.empty()) {
        return;
    }
    const double peak = *std::max_element(row.begin(), row.end());
    if (peak == -std::numeric_limits<double>::infinity()) {
        // Fully masked row: leave as zeros rather than NaN.
        std::fill(row.begin(), row.end(), 0.0);
        return;
    }
    double total = 0.0;
    for (double& v : row) {
        v = std::exp(v - peak);
        total += v;
    }
    for (double& v : row) {
        v /= total;
    }
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        softmax_inplace(out.row(r));
    }
    return out;
}

Matrix layer_norm(const Matrix& x, std::span<const double> gain, std::span<const double> bias,
                  double eps) {
    if (gain.size() != x.cols() || bias.size() != x.cols()) {
        throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        double mean = 0.0;
        for (double v : in) {
            mean += v;
        }
        mean /= n;
        double var = 0.0;
        for (double v : in) {
            var += (v - mean) * (v - mean);
        }
        var /= n;
        const double rstd = 1.0 / std::sqrt(var + eps);
        auto dst = out.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) {
            dst[c] = (in[c] - mean) * rstd * gain[c] + bias[c];
        }
    }
    return out;
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) {
        throw InputError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) {
            best = i;
        }
    }
    return best;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

FlopCounter::FlopCounter() : previous_(g_active_counter) { g_active_counter = this; }

FlopCounter::~FlopCounter() { g_active_counter = previous_; }

void FlopCounter::record(std::uint64_t flops) noexcept {
    if (g_active_counter != nullptr) {
        g_active_counter->count_ += flops;
    }
}

}  // namespace gapprune
