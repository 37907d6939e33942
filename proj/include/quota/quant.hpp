#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "quota/numeric.hpp"

namespace quota {

// Symmetric low-bit quantization.
//
// Scheme (symmetric, zero point 0, round half to even):
//   qmax   = 2^(bits-1) - 1           (e.g. 7 at 4 bits)
//   scale  = max|x| over group / qmax  (scale = 1 for an all-zero group)
//   code   = clamp(rne(x / scale), -qmax, qmax)
//   x'     = code * scale
//
// The range is restricted to +/-qmax rather than [-2^(bits-1), qmax] so that
// fake_quant(-x) == -fake_quant(x) exactly.

enum class GroupAxis { PerTensor, PerRow, PerColumn };

struct QuantParams {
    int bits = 4;
    GroupAxis axis = GroupAxis::PerTensor;
    std::vector<double> scales;  // one per group

    int qmax() const { return (1 << (bits - 1)) - 1; }
};

struct QuantizedTensor {
    int rows = 0;
    int cols = 0;
    std::vector<int8_t> codes;  // row-major, |code| <= qmax
    QuantParams params;

    double scale_for(int r, int c) const;
};

// round half to even, independent of the fenv rounding mode
double round_half_even(double x);

// Per-group scale = max|x| / qmax; an all-zero group gets scale 1.
// Throws when bits is outside [2, 8] or x has non-finite entries.
QuantParams fit_params(const Matrix& x, int bits, GroupAxis axis);

QuantizedTensor quantize(const Matrix& x, const QuantParams& params);
Matrix dequantize(const QuantizedTensor& t);

// dequantize(quantize(x)). Idempotent, sign symmetric, monotone per group.
Matrix fake_quant(const Matrix& x, const QuantParams& params);

// Convenience: fit per-row params on x itself, then fake-quantize.
// This is the per-token activation operator Q(.) used in token scoring.
Matrix fake_quant_per_row(const Matrix& x, int bits);

// Simulated low-bit linear: matmul(fake_quant(x), dequantize(w)).
// x is quantized per token (per row) at act_bits.
Matrix quantized_linear(const Matrix& x, const QuantizedTensor& w, int act_bits);

// Per-token (per-row) symmetric quantization of cached keys or values.
QuantizedTensor kv_quantize(const Matrix& keys_or_values, int bits);

// Bit widths of the simulated deployment regime.
struct QuantConfig {
    int weight_bits = 4;
    int act_bits = 4;
    int kv_bits = 4;

    // Short description embedded in recipes, e.g. "w4a4kv4-sym-rne".
    std::string digest() const;
};

}  // namespace quota
