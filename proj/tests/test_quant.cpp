#include <doctest.h>

#include <cmath>
#include <vector>

#include "quota/quant.hpp"
#include "quota/rng.hpp"

using namespace quota;

TEST_CASE("round_half_even") {
    CHECK(round_half_even(1.5) == 2.0);
    CHECK(round_half_even(2.5) == 2.0);
    CHECK(round_half_even(-1.5) == -2.0);
    CHECK(round_half_even(-2.5) == -2.0);
    CHECK(round_half_even(0.49) == 0.0);
    CHECK(round_half_even(-0.51) == -1.0);
}

TEST_CASE("fit_params per spec examples") {
    Matrix zero(1, 2, {0, 0});
    QuantParams pz = fit_params(zero, 4, GroupAxis::PerTensor);
    CHECK(pz.scales.size() == 1);
    CHECK(pz.scales[0] == doctest::Approx(1.0));  // degenerate all-zero group

    Matrix sym(1, 2, {7, -7});
    QuantParams ps = fit_params(sym, 4, GroupAxis::PerTensor);
    CHECK(ps.scales[0] == doctest::Approx(1.0));

    Matrix rows(2, 2, {1, 2, 3, 4});
    QuantParams pr = fit_params(rows, 4, GroupAxis::PerRow);
    REQUIRE(pr.scales.size() == 2);
    CHECK(pr.scales[0] == doctest::Approx(2.0 / 7.0));
    CHECK(pr.scales[1] == doctest::Approx(4.0 / 7.0));

    CHECK_THROWS(fit_params(rows, 1, GroupAxis::PerRow));
    CHECK_THROWS(fit_params(rows, 9, GroupAxis::PerRow));
}

TEST_CASE("fake_quant fixed points and round-to-even") {
    // values already on the code grid pass through untouched
    QuantParams p;
    p.bits = 4;
    p.axis = GroupAxis::PerTensor;
    p.scales = {0.5};
    Matrix grid(1, 4, {-3.5, -0.5, 0.0, 3.0});
    Matrix out = fake_quant(grid, p);
    for (size_t i = 0; i < grid.data.size(); ++i) CHECK(out.data[i] == grid.data[i]);

    // exact halfway codes round to even: 0.375/0.25 = 1.5 -> code 2 -> 0.5,
    // 0.625/0.25 = 2.5 -> code 2 -> 0.5 again, and symmetrically for negatives
    QuantParams p2;
    p2.bits = 4;
    p2.axis = GroupAxis::PerTensor;
    p2.scales = {0.25};
    Matrix halves(1, 4, {0.375, 0.625, -0.375, -0.625});
    Matrix rounded = fake_quant(halves, p2);
    CHECK(rounded.data[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rounded.data[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rounded.data[2] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(rounded.data[3] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("fake_quant properties over seeded tensors") {
    SplitMix64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        int bits = rng.next_int(2, 8);
        int rows = rng.next_int(1, 6);
        int cols = rng.next_int(1, 8);
        Matrix x(rows, cols);
        for (double& v : x.data) v = rng.next_uniform(-3, 3);
        GroupAxis axis = static_cast<GroupAxis>(rng.next_int(0, 2));
        QuantParams params = fit_params(x, bits, axis);

        Matrix fq = fake_quant(x, params);

        // round trip bound: |fq - x| <= scale/2 for in-range values
        QuantizedTensor t = quantize(x, params);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                double scale = t.scale_for(r, c);
                CHECK(std::fabs(fq.at(r, c) - x.at(r, c)) <= scale / 2 + 1e-12);
            }
        }

        // idempotence, bitwise
        Matrix fq2 = fake_quant(fq, params);
        for (size_t i = 0; i < fq.data.size(); ++i) CHECK(fq2.data[i] == fq.data[i]);

        // sign symmetry, bitwise
        Matrix neg = x;
        for (double& v : neg.data) v = -v;
        Matrix fqn = fake_quant(neg, params);
        for (size_t i = 0; i < fq.data.size(); ++i) CHECK(fqn.data[i] == -fq.data[i]);
    }
}

TEST_CASE("fake_quant monotone within a group") {
    SplitMix64 rng(11);
    QuantParams p;
    p.bits = 4;
    p.axis = GroupAxis::PerTensor;
    p.scales = {0.37};
    for (int trial = 0; trial < 100; ++trial) {
        double a = rng.next_uniform(-4, 4);
        double b = rng.next_uniform(-4, 4);
        if (a > b) std::swap(a, b);
        Matrix ma(1, 1, {a}), mb(1, 1, {b});
        CHECK(fake_quant(ma, p).data[0] <= fake_quant(mb, p).data[0]);
    }
}

TEST_CASE("quantized_linear matches explicit two-step oracle") {
    Matrix zero(2, 3);
    Matrix w(3, 2, {0.5, -0.25, 0.125, 1.0, -0.75, 0.3});
    QuantizedTensor wq = quantize(w, fit_params(w, 4, GroupAxis::PerRow));
    Matrix out0 = quantized_linear(zero, wq, 4);
    for (double v : out0.data) CHECK(v == 0.0);

    SplitMix64 rng(5);
    Matrix x(4, 4);
    for (double& v : x.data) v = rng.next_uniform(-2, 2);
    Matrix w2(4, 4);
    for (double& v : w2.data) v = rng.next_uniform(-1, 1);
    QuantizedTensor w2q = quantize(w2, fit_params(w2, 4, GroupAxis::PerRow));

    // oracle: quantize both operands explicitly, then multiply in fp
    Matrix x_deq = dequantize(quantize(x, fit_params(x, 4, GroupAxis::PerRow)));
    Matrix w_deq = dequantize(w2q);
    Matrix expected(4, 4);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            double acc = 0;
            for (int k = 0; k < 4; ++k) acc += x_deq.at(i, k) * w_deq.at(k, j);
            expected.at(i, j) = acc;
        }
    }
    Matrix got = quantized_linear(x, w2q, 4);
    for (size_t i = 0; i < got.data.size(); ++i) {
        CHECK(got.data[i] == doctest::Approx(expected.data[i]).epsilon(1e-6));
    }

    Matrix mismatched(4, 3);
    CHECK_THROWS(quantized_linear(mismatched, w2q, 4));
}

TEST_CASE("quantized_linear is exact on grid-aligned inputs") {
    // weights whose per-row max is 7 give scale 1: integer weights survive
    Matrix w(2, 2, {7, -3, 2, 7});
    QuantizedTensor wq = quantize(w, fit_params(w, 4, GroupAxis::PerRow));
    Matrix x(1, 2, {7, -7});  // per-row scale 1, integer codes
    Matrix out = quantized_linear(x, wq, 4);
    CHECK(out.at(0, 0) == doctest::Approx(7 * 7 + -7 * 2));
    CHECK(out.at(0, 1) == doctest::Approx(7 * -3 + -7 * 7));
}

TEST_CASE("kv_quantize per-token rows") {
    Matrix one_zero_row(1, 4);
    QuantizedTensor t = kv_quantize(one_zero_row, 4);
    for (int8_t c : t.codes) CHECK(c == 0);

    // row already on its own grid (integer multiples of max/7) round-trips exactly
    Matrix grid(1, 3, {7, -7, 3});
    QuantizedTensor tg = kv_quantize(grid, 4);
    Matrix back = dequantize(tg);
    CHECK(back.at(0, 0) == doctest::Approx(7.0));
    CHECK(back.at(0, 1) == doctest::Approx(-7.0));
    CHECK(back.at(0, 2) == doctest::Approx(3.0));

    // seeded rows: scales match brute-force per-row max|x|/7
    SplitMix64 rng(77);
    Matrix kv(3, 5);
    for (double& v : kv.data) v = rng.next_uniform(-4, 4);
    QuantizedTensor ts = kv_quantize(kv, 4);
    REQUIRE(ts.params.scales.size() == 3);
    for (int r = 0; r < 3; ++r) {
        double max_abs = 0;
        for (int c = 0; c < 5; ++c) max_abs = std::max(max_abs, std::fabs(kv.at(r, c)));
        CHECK(ts.params.scales[r] == doctest::Approx(max_abs / 7.0).epsilon(1e-12));
        for (int c = 0; c < 5; ++c) {
            CHECK(std::fabs(dequantize(ts).at(r, c) - kv.at(r, c)) <= ts.params.scales[r] / 2 + 1e-12);
        }
    }
}

TEST_CASE("codes stay inside the symmetric range") {
    SplitMix64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        int bits = rng.next_int(2, 8);
        Matrix x(3, 3);
        for (double& v : x.data) v = rng.next_uniform(-10, 10);
        QuantizedTensor t = quantize(x, fit_params(x, bits, GroupAxis::PerTensor));
        int qmax = (1 << (bits - 1)) - 1;
        for (int8_t c : t.codes) {
            CHECK(c <= qmax);
            CHECK(c >= -qmax);
        }
    }
}

TEST_CASE("quant config digest") {
    QuantConfig cfg;
    CHECK(cfg.digest() == "w4a4kv4-sym-rne");
    cfg.weight_bits = 8;
    CHECK(cfg.digest() == "w8a4kv4-sym-rne");
}
