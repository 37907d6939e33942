#include "quota/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace quota {

Matrix::Matrix(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != static_cast<size_t>(r) * c) {
        throw std::invalid_argument("matrix data length does not match shape");
    }
}

bool Matrix::is_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix Matrix::select_rows(std::span<const int> indices) const {
    Matrix out(static_cast<int>(indices.size()), cols);
    for (size_t i = 0; i < indices.size(); ++i) {
        int r = indices[i];
        if (r < 0 || r >= rows) throw std::out_of_range("row index out of range");
        std::copy_n(data.data() + static_cast<size_t>(r) * cols, cols,
                    out.data.data() + i * cols);
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul shape mismatch");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

double l2_distance(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw std::invalid_argument("l2_distance shape mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double frobenius_norm(const Matrix& m) {
    return l2_norm(m.data);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("degenerate token");
    return dot(a, b) / (na * nb);
}

double percentile(std::span<const double> values, double p) {
    if (values.empty()) throw std::invalid_argument("empty sample");
    if (p < 0.0 || p > 100.0) throw std::invalid_argument("percentile out of range");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() == 1) return sorted[0];
    // linear interpolation between closest ranks, inclusive endpoints
    double h = p / 100.0 * static_cast<double>(sorted.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(h));
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double median(std::span<const double> values) {
    return percentile(values, 50.0);
}

Vector softmax_with_temperature(std::span<const double> logits, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("invalid temperature");
    if (logits.empty()) throw std::invalid_argument("empty sample");
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    Vector out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - max_logit) / tau);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

double median_pairwise_cosine(const Matrix& tokens) {
    if (tokens.rows < 2) throw std::invalid_argument("need at least two token rows");
    std::vector<double> sims;
    sims.reserve(static_cast<size_t>(tokens.rows) * (tokens.rows - 1) / 2);
    for (int i = 0; i < tokens.rows; ++i) {
        for (int j = i + 1; j < tokens.rows; ++j) {
            sims.push_back(cosine_similarity(tokens.row(i), tokens.row(j)));
        }
    }
    return median(sims);
}

}  // namespace quota
