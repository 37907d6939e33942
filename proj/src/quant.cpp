#include "quota/quant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace quota {

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 8) throw std::invalid_argument("bits out of range [2,8]");
}

int group_count(const Matrix& x, GroupAxis axis) {
    switch (axis) {
        case GroupAxis::PerTensor: return 1;
        case GroupAxis::PerRow: return x.rows;
        case GroupAxis::PerColumn: return x.cols;
    }
    return 1;
}

int group_index(int r, int c, GroupAxis axis) {
    switch (axis) {
        case GroupAxis::PerTensor: return 0;
        case GroupAxis::PerRow: return r;
        case GroupAxis::PerColumn: return c;
    }
    return 0;
}

}  // namespace

double QuantizedTensor::scale_for(int r, int c) const {
    return params.scales[group_index(r, c, params.axis)];
}

double round_half_even(double x) {
    double fl = std::floor(x);
    double diff = x - fl;
    if (diff > 0.5) return fl + 1.0;
    if (diff < 0.5) return fl;
    return std::fmod(fl, 2.0) == 0.0 ? fl : fl + 1.0;
}

QuantParams fit_params(const Matrix& x, int bits, GroupAxis axis) {
    check_bits(bits);
    if (!x.is_finite()) throw std::invalid_argument("non-finite input");

    QuantParams params;
    params.bits = bits;
    params.axis = axis;
    int groups = group_count(x, axis);
    std::vector<double> max_abs(groups, 0.0);
    for (int r = 0; r < x.rows; ++r) {
        for (int c = 0; c < x.cols; ++c) {
            double a = std::fabs(x.at(r, c));
            double& m = max_abs[group_index(r, c, axis)];
            if (a > m) m = a;
        }
    }
    params.scales.resize(groups);
    const double qmax = static_cast<double>(params.qmax());
    for (int g = 0; g < groups; ++g) {
        params.scales[g] = max_abs[g] == 0.0 ? 1.0 : max_abs[g] / qmax;
    }
    return params;
}

QuantizedTensor quantize(const Matrix& x, const QuantParams& params) {
    check_bits(params.bits);
    if (static_cast<int>(params.scales.size()) != group_count(x, params.axis)) {
        throw std::invalid_argument("scale count does not match grouping");
    }
    QuantizedTensor t;
    t.rows = x.rows;
    t.cols = x.cols;
    t.params = params;
    t.codes.resize(x.data.size());
    const double qmax = static_cast<double>(params.qmax());
    for (int r = 0; r < x.rows; ++r) {
        for (int c = 0; c < x.cols; ++c) {
            double s = params.scales[group_index(r, c, params.axis)];
            double code = round_half_even(x.at(r, c) / s);
            code = std::clamp(code, -qmax, qmax);
            t.codes[static_cast<size_t>(r) * x.cols + c] = static_cast<int8_t>(code);
        }
    }
    return t;
}

Matrix dequantize(const QuantizedTensor& t) {
    Matrix out(t.rows, t.cols);
    for (int r = 0; r < t.rows; ++r) {
        for (int c = 0; c < t.cols; ++c) {
            size_t i = static_cast<size_t>(r) * t.cols + c;
            out.data[i] = static_cast<double>(t.codes[i]) * t.scale_for(r, c);
        }
    }
    return out;
}

Matrix fake_quant(const Matrix& x, const QuantParams& params) {
    return dequantize(quantize(x, params));
}

Matrix fake_quant_per_row(const Matrix& x, int bits) {
    return fake_quant(x, fit_params(x, bits, GroupAxis::PerRow));
}

Matrix quantized_linear(const Matrix& x, const QuantizedTensor& w, int act_bits) {
    if (x.cols != w.rows) throw std::invalid_argument("quantized_linear shape mismatch");
    return matmul(fake_quant_per_row(x, act_bits), dequantize(w));
}

QuantizedTensor kv_quantize(const Matrix& keys_or_values, int bits) {
    return quantize(keys_or_values, fit_params(keys_or_values, bits, GroupAxis::PerRow));
}

std::string QuantConfig::digest() const {
    return "w" + std::to_string(weight_bits) + "a" + std::to_string(act_bits) + "kv" +
           std::to_string(kv_bits) + "-sym-rne";
}

}  // namespace quota
