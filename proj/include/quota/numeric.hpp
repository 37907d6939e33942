#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace quota {

// Dense row-major matrix of doubles. All reductions over matrices in this
// project accumulate left to right so results are reproducible bit for bit.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
    Matrix(int r, int c, std::vector<double> d);

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    std::span<double> row(int r) { return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)}; }
    std::span<const double> row(int r) const {
        return {data.data() + static_cast<size_t>(r) * cols, static_cast<size_t>(cols)};
    }

    bool is_finite() const;

    // Returns the submatrix formed by the given row indices, in the given order.
    Matrix select_rows(std::span<const int> indices) const;
};

using Vector = std::vector<double>;

// out = a * b, (m x k) * (k x n). Throws on shape mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// || a - b ||_2 over flattened entries; shapes must match.
double l2_distance(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Linearly interpolated order statistic, inclusive endpoints:
// percentile(v, 0) == min, percentile(v, 100) == max. Input need not be sorted.
// Throws std::invalid_argument("empty sample") on empty input.
double percentile(std::span<const double> values, double p);

double median(std::span<const double> values);

// softmax(logits / tau); shift-invariant and sums to 1.
// Throws std::invalid_argument("invalid temperature") when tau <= 0.
Vector softmax_with_temperature(std::span<const double> logits, double tau);

// Median cosine similarity over all unordered row pairs.
// Throws std::invalid_argument("degenerate token") when a row has zero norm.
double median_pairwise_cosine(const Matrix& tokens);

}  // namespace quota
