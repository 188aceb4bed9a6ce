#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "htp/rtim.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace htp;
using htp::ad::Tape;
using htp::ad::Tensor;
using testing::Dense;

namespace {

struct Instance {
    std::size_t n, d;
    Tensor target, times, intervals, reps;
    RtimParams params;
    std::vector<std::uint8_t> mask;
};

Instance random_instance(std::mt19937_64& rng, std::size_t max_n = 8, std::size_t max_d = 6) {
    const std::size_t n = 1 + rng() % max_n, d = 1 + rng() % max_d;
    std::mt19937_64 prng(rng());
    return {n,
            d,
            testing::random_const(1, d, rng),
            testing::random_const(n, d, rng),
            testing::random_const(n, d, rng),
            testing::random_const(n, d, rng),
            RtimParams::create(d, prng),
            testing::suffix_mask(n, 1 + rng() % n)};
}

}  // namespace

TEST_CASE("recommendation intervals") {
    std::mt19937_64 rng(1);
    const auto target = testing::random_const(1, 3, rng);
    const auto times = testing::random_const(4, 3, rng);
    Tape tape;
    const auto r = rec_intervals(tape, target, times, testing::suffix_mask(4, 3));
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(r.at(0, c) == 0.0);
        for (std::size_t i = 1; i < 4; ++i) CHECK(r.at(i, c) == doctest::Approx(target.at(0, c) - times.at(i, c)));
    }
    CHECK_THROWS_AS(rec_intervals(tape, testing::random_const(2, 3, rng), times, testing::suffix_mask(4, 3)),
                    std::invalid_argument);
}

TEST_CASE("uniform weights in the degenerate cases") {
    std::mt19937_64 rng(2);
    const std::size_t n = 5, d = 3;
    const auto mask = testing::suffix_mask(n, 4);
    const auto target = testing::random_const(1, d, rng);
    // Every position shares the target's timestamp: zero intervals everywhere.
    std::vector<double> same;
    for (std::size_t i = 0; i < n; ++i) same.insert(same.end(), target.values().begin(), target.values().end());
    const auto times = Tensor::constant(n, d, same);
    std::mt19937_64 prng(3);
    const auto p = RtimParams::create(d, prng);
    Tape tape;
    const auto rec = rec_intervals(tape, target, times, mask);
    const auto decay = time_decay_weights(tape, rec, p.w, mask);
    const auto align = alignment_weights(tape, rec, testing::random_const(n, d, rng), p.wr, mask);
    CHECK(decay.at(0, 0) == 0.0);
    CHECK(align.at(0, 0) == 0.0);
    for (std::size_t i = 1; i < n; ++i) {
        CHECK(decay.at(i, 0) == doctest::Approx(0.25).epsilon(1e-14));
        CHECK(align.at(i, 0) == doctest::Approx(0.25).epsilon(1e-14));
    }

    // Zero projection also gives uniform decay whatever the intervals are.
    const auto rec2 = rec_intervals(tape, target, testing::random_const(n, d, rng), mask);
    const auto flat = time_decay_weights(tape, rec2, Tensor::constant(d, 1, std::vector<double>(d, 0.0)), mask);
    for (std::size_t i = 1; i < n; ++i) CHECK(flat.at(i, 0) == doctest::Approx(0.25).epsilon(1e-14));

    // One valid position takes all the weight.
    const auto one = testing::suffix_mask(n, 1);
    const auto single = time_decay_weights(tape, rec_intervals(tape, target, times, one), p.w, one);
    CHECK(single.at(n - 1, 0) == 1.0);
}

TEST_CASE("weights and cascade match the brute-force formulas") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto x = random_instance(rng);
        Tape tape;
        const auto rec = rec_intervals(tape, x.target, x.times, x.mask);
        const auto decay = time_decay_weights(tape, rec, x.params.w, x.mask);
        const auto align = alignment_weights(tape, rec, x.intervals, x.params.wr, x.mask);
        const auto out = cascade_aggregate(tape, decay, align, x.reps);

        const auto t = testing::to_dense(x.times), ri = testing::to_dense(x.intervals), v = testing::to_dense(x.reps);
        const auto wr = testing::to_dense(x.params.wr);
        const auto w = x.params.w.values();
        std::vector<double> c(x.n, 0.0), g(x.n, 0.0);
        for (std::size_t i = 0; i < x.n; ++i) {
            std::vector<double> r(x.d);
            for (std::size_t k = 0; k < x.d; ++k) r[k] = x.target.at(0, k) - t[i][k];
            for (std::size_t k = 0; k < x.d; ++k) c[i] += r[k] * w[k];
            g[i] = testing::bilinear(r, wr, ri[i]);
        }
        const auto dref = testing::softmax_over(c, x.mask), aref = testing::softmax_over(g, x.mask);
        double dsum = 0.0, asum = 0.0, total = 0.0;
        for (std::size_t i = 0; i < x.n; ++i) {
            CHECK(std::abs(decay.at(i, 0) - dref[i]) < 1e-12);
            CHECK(std::abs(align.at(i, 0) - aref[i]) < 1e-12);
            dsum += decay.at(i, 0);
            asum += align.at(i, 0);
            total += decay.at(i, 0) * align.at(i, 0);
            if (!x.mask[i]) CHECK(decay.at(i, 0) * align.at(i, 0) == 0.0);
        }
        CHECK(std::abs(dsum - 1.0) < 1e-12);
        CHECK(std::abs(asum - 1.0) < 1e-12);
        CHECK(total <= 1.0 + 1e-12);
        CHECK(total > 0.0);

        for (std::size_t k = 0; k < x.d; ++k) {
            double ref = 0.0, lo = INFINITY, hi = -INFINITY;
            for (std::size_t i = 0; i < x.n; ++i) {
                ref += aref[i] * dref[i] * v[i][k];
                if (x.mask[i]) {
                    lo = std::min(lo, v[i][k]);
                    hi = std::max(hi, v[i][k]);
                }
            }
            CHECK(std::abs(out.at(0, k) - ref) < 1e-12);
            // Unnormalized cascade weights shrink toward zero, so the bound is the hull with 0.
            CHECK(out.at(0, k) >= std::min(lo, 0.0) - 1e-12);
            CHECK(out.at(0, k) <= std::max(hi, 0.0) + 1e-12);
        }
    }
}

TEST_CASE("cascade mass is below one when the two distributions disagree") {
    Tape tape;
    const auto decay = Tensor::constant(3, 1, {0.8, 0.1, 0.1});
    const auto align = Tensor::constant(3, 1, {0.1, 0.1, 0.8});
    const auto ones = Tensor::constant(3, 1, {1.0, 1.0, 1.0});
    const auto mass = cascade_aggregate(tape, decay, align, ones);
    CHECK(mass.at(0, 0) == doctest::Approx(0.17));
    CHECK(mass.at(0, 0) < 1.0);
    CHECK_THROWS_AS(cascade_aggregate(tape, decay, Tensor::constant(2, 1, {0.5, 0.5}), ones), std::invalid_argument);
}

TEST_CASE("the cascade is invariant to permuting positions") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_instance(rng);
        std::vector<std::size_t> perm(x.n);
        for (std::size_t i = 0; i < x.n; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        auto permute = [&](const Tensor& t) {
            std::vector<double> v(t.size());
            for (std::size_t i = 0; i < x.n; ++i)
                for (std::size_t c = 0; c < t.cols(); ++c) v[i * t.cols() + c] = t.at(perm[i], c);
            return Tensor::constant(t.rows(), t.cols(), std::move(v));
        };
        std::vector<std::uint8_t> pmask(x.n);
        for (std::size_t i = 0; i < x.n; ++i) pmask[i] = x.mask[perm[i]];

        auto run = [&](const Tensor& times, const Tensor& intervals, const Tensor& reps, const std::vector<std::uint8_t>& m) {
            Tape tape;
            const auto rec = rec_intervals(tape, x.target, times, m);
            return cascade_aggregate(tape, time_decay_weights(tape, rec, x.params.w, m),
                                     alignment_weights(tape, rec, intervals, x.params.wr, m), reps);
        };
        const auto a = run(x.times, x.intervals, x.reps, x.mask);
        const auto b = run(permute(x.times), permute(x.intervals), permute(x.reps), pmask);
        for (std::size_t c = 0; c < x.d; ++c) CHECK(std::abs(a.at(0, c) - b.at(0, c)) < 1e-12);
    }
}

TEST_CASE("RTIM gradients match central differences") {
    std::mt19937_64 rng(6);
    for (int point = 0; point < 10; ++point) {
        const std::size_t n = 5, d = 4;
        std::mt19937_64 prng(rng());
        const auto p = RtimParams::create(d, prng);
        const auto target = testing::random_param(1, d, rng);
        const auto times = testing::random_param(n, d, rng);
        const auto intervals = testing::random_param(n, d, rng);
        const auto reps = testing::random_param(n, d, rng);
        const auto mask = testing::suffix_mask(n, 4);
        const double err = ad::grad_check(
            [&](Tape& tape) {
                const auto rec = rec_intervals(tape, target, times, mask);
                const auto out = cascade_aggregate(tape, time_decay_weights(tape, rec, p.w, mask),
                                                   alignment_weights(tape, rec, intervals, p.wr, mask), reps);
                return tape.sum(tape.sigmoid(out));
            },
            std::vector<Tensor>{p.w, p.wr, target, times, intervals, reps}, 1e-5);
        CHECK(err < 1e-4);
    }
}
