#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "quota/numeric.hpp"
#include "quota/rng.hpp"

using namespace quota;

TEST_CASE("percentile matches hand-worked order statistics") {
    std::vector<double> odd = {1, 2, 3, 4, 5};
    CHECK(percentile(odd, 50) == doctest::Approx(3.0));

    // linear interpolation oracle: 0 + 0.1 * (10 - 0)
    std::vector<double> two = {0, 10};
    CHECK(percentile(two, 10) == doctest::Approx(1.0));

    std::vector<double> one = {7};
    CHECK(percentile(one, 90) == doctest::Approx(7.0));

    CHECK(percentile(odd, 0) == doctest::Approx(1.0));
    CHECK(percentile(odd, 100) == doctest::Approx(5.0));
}

TEST_CASE("percentile rejects empty input") {
    std::vector<double> none;
    CHECK_THROWS_WITH(percentile(none, 50), "empty sample");
}

TEST_CASE("percentile is monotone in p and permutation invariant") {
    SplitMix64 rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        int n = rng.next_int(1, 30);
        std::vector<double> values(n);
        for (double& v : values) v = rng.next_uniform(-5, 5);

        double prev = percentile(values, 0);
        for (double p = 5; p <= 100; p += 5) {
            double cur = percentile(values, p);
            CHECK(cur >= prev);
            prev = cur;
        }

        std::vector<double> shuffled = values;
        for (int i = n - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.next_int(0, i)]);
        CHECK(percentile(shuffled, 37.5) == percentile(values, 37.5));
    }
}

TEST_CASE("softmax_with_temperature basics") {
    std::vector<double> flat = {0, 0, 0};
    Vector p = softmax_with_temperature(flat, 1.0);
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0));

    // direct evaluation: e/(e+1), 1/(e+1)
    std::vector<double> pair = {1, 0};
    Vector q = softmax_with_temperature(pair, 1.0);
    double e = std::exp(1.0);
    CHECK(q[0] == doctest::Approx(e / (e + 1)).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-12));

    Vector cold = softmax_with_temperature(pair, 0.01);
    CHECK(cold[0] > 1.0 - 1e-9);
    CHECK(cold[1] < 1e-9);

    CHECK_THROWS_WITH(softmax_with_temperature(pair, 0.0), "invalid temperature");
    CHECK_THROWS_WITH(softmax_with_temperature(pair, -1.0), "invalid temperature");
}

TEST_CASE("softmax sums to one and is shift invariant") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        int n = rng.next_int(1, 20);
        double tau = rng.next_uniform(0.05, 3.0);
        std::vector<double> logits(n);
        for (double& v : logits) v = rng.next_uniform(-10, 10);

        Vector p = softmax_with_temperature(logits, tau);
        double sum = 0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-9);

        double shift = rng.next_uniform(-100, 100);
        std::vector<double> shifted = logits;
        for (double& v : shifted) v += shift;
        Vector ps = softmax_with_temperature(shifted, tau);
        for (int i = 0; i < n; ++i) CHECK(ps[i] == doctest::Approx(p[i]).epsilon(1e-9));
    }
}

TEST_CASE("median_pairwise_cosine on known geometries") {
    Matrix same(2, 3, {1, 2, 3, 1, 2, 3});
    CHECK(median_pairwise_cosine(same) == doctest::Approx(1.0));

    Matrix ortho(2, 2, {1, 0, 0, 1});
    CHECK(median_pairwise_cosine(ortho) == doctest::Approx(0.0));

    Matrix with_zero(2, 2, {1, 0, 0, 0});
    CHECK_THROWS_WITH(median_pairwise_cosine(with_zero), "degenerate token");
}

TEST_CASE("median_pairwise_cosine equals brute-force pair enumeration") {
    SplitMix64 rng(99);
    Matrix tokens(4, 6);
    for (double& v : tokens.data) v = rng.next_uniform(-1, 1);

    // independent oracle: enumerate every unordered pair by hand
    std::vector<double> sims;
    for (int i = 0; i < tokens.rows; ++i) {
        for (int j = i + 1; j < tokens.rows; ++j) {
            double num = 0, na = 0, nb = 0;
            for (int c = 0; c < tokens.cols; ++c) {
                num += tokens.at(i, c) * tokens.at(j, c);
                na += tokens.at(i, c) * tokens.at(i, c);
                nb += tokens.at(j, c) * tokens.at(j, c);
            }
            sims.push_back(num / (std::sqrt(na) * std::sqrt(nb)));
        }
    }
    std::sort(sims.begin(), sims.end());
    double expected = (sims[2] + sims[3]) / 2.0;  // 6 pairs, even count

    CHECK(median_pairwise_cosine(tokens) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("median_pairwise_cosine invariant to per-row positive rescaling") {
    SplitMix64 rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix tokens(5, 4);
        for (double& v : tokens.data) v = rng.next_uniform(-2, 2);
        double base = median_pairwise_cosine(tokens);

        Matrix scaled = tokens;
        for (int r = 0; r < scaled.rows; ++r) {
            double f = rng.next_uniform(0.1, 10.0);
            for (int c = 0; c < scaled.cols; ++c) scaled.at(r, c) *= f;
        }
        CHECK(median_pairwise_cosine(scaled) == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("matmul agrees with a hand-expanded product") {
    Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    Matrix c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(58));
    CHECK(c.at(0, 1) == doctest::Approx(64));
    CHECK(c.at(1, 0) == doctest::Approx(139));
    CHECK(c.at(1, 1) == doctest::Approx(154));

    Matrix bad(2, 2);
    CHECK_THROWS(matmul(a, bad));
}
