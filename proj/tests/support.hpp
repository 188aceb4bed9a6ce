#pragma once

// Shared helpers for the test executables: random tensors, plain dense
// matrices for reference implementations, and small synthetic datasets.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "htp/dataset.hpp"
#include "htp/tensor.hpp"

namespace testing {

using Dense = std::vector<std::vector<double>>;

inline std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

inline htp::ad::Tensor random_param(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
    return htp::ad::Tensor::parameter(r, c, normal_values(r * c, rng, sd));
}

inline htp::ad::Tensor random_const(std::size_t r, std::size_t c, std::mt19937_64& rng, double sd = 1.0) {
    return htp::ad::Tensor::constant(r, c, normal_values(r * c, rng, sd));
}

inline Dense to_dense(const htp::ad::Tensor& t) {
    Dense d(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) d[i][j] = t.at(i, j);
    return d;
}

inline Dense dense_matmul(const Dense& a, const Dense& b) {
    Dense c(a.size(), std::vector<double>(b.empty() ? 0 : b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline std::vector<double> row_times(const std::vector<double>& x, const Dense& w) {
    std::vector<double> y(w[0].size(), 0.0);
    for (std::size_t k = 0; k < x.size(); ++k)
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[k] * w[k][j];
    return y;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double den = std::sqrt(dot(a, a)) * std::sqrt(dot(b, b));
    return dot(a, b) / std::max(den, 1e-8);
}

inline std::vector<double> softmax_over(const std::vector<double>& v, const std::vector<std::uint8_t>& mask) {
    double hi = -INFINITY;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) hi = std::max(hi, v[i]);
    std::vector<double> out(v.size(), 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) z += out[i] = std::exp(v[i] - hi);
    for (double& x : out) x /= z;
    return out;
}

inline double max_abs_diff(const htp::ad::Tensor& t, const Dense& ref) {
    double worst = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) worst = std::max(worst, std::abs(t.at(i, j) - ref[i][j]));
    return worst;
}

// Trailing block of `valid` ones in a length-L mask.
inline std::vector<std::uint8_t> suffix_mask(std::size_t L, std::size_t valid) {
    std::vector<std::uint8_t> m(L, 0);
    for (std::size_t i = L - valid; i < L; ++i) m[i] = 1;
    return m;
}

inline htp::TimeFeature random_feature(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> month(0, htp::kMonthSlots - 1), week(0, htp::kWeekSlots - 1),
        day(0, htp::kDaySlots - 1);
    return {month(rng), week(rng), day(rng)};
}

// A CSV log where user u sees items in a fixed cycle, one day apart.
inline std::string cyclic_csv(std::size_t users, std::size_t items, std::size_t per_user, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::string s = "user,item,timestamp\n";
    for (std::size_t u = 0; u < users; ++u) {
        std::int64_t t = 1'400'000'000 + static_cast<std::int64_t>(rng() % 30'000'000);
        std::size_t item = rng() % items;
        for (std::size_t k = 0; k < per_user; ++k) {
            s += "u" + std::to_string(u) + ",i" + std::to_string(item) + "," + std::to_string(t) + "\n";
            item = (item + 1) % items;
            t += 86'400 * static_cast<std::int64_t>(1 + rng() % 4);
        }
    }
    return s;
}

}  // namespace testing
