#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "htp/atm.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace htp;
using htp::ad::Tape;
using htp::ad::Tensor;
using testing::Dense;

namespace {

EmbeddingTables make_tables(std::size_t items, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return EmbeddingTables::create(items, 8, d, rng, 0.7);
}

std::vector<double> timestamp_row(const EmbeddingTables& t, const TimeFeature& f) {
    std::vector<double> v(t.dim());
    for (std::size_t c = 0; c < v.size(); ++c)
        v[c] = t.month.at(static_cast<std::size_t>(f.month), c) + t.week.at(static_cast<std::size_t>(f.week), c) +
               t.day.at(static_cast<std::size_t>(f.day), c);
    return v;
}

ItemHistogram random_histogram(std::mt19937_64& rng) {
    const std::size_t n = 1 + rng() % 6;
    ItemHistogram h;
    double total = 0.0;
    Timestamp day = 86400 * static_cast<Timestamp>(10000 + rng() % 5000);
    for (std::size_t k = 0; k < n; ++k) {
        const double count = 1.0 + static_cast<double>(rng() % 9);
        h.push_back({day, count});
        total += count;
        day += 86400 * static_cast<Timestamp>(1 + rng() % 90);
    }
    for (auto& b : h) b.weight /= total;
    return h;
}

}  // namespace

TEST_CASE("profiles of single- and two-bucket items") {
    const auto t = make_tables(3, 5, 1);
    const Timestamp d1 = 1404475200 - 43200, d2 = 1420070400;  // 2014-07-04, 2015-01-01
    std::vector<ItemHistogram> hist(4);
    hist[1] = {{d1, 1.0}};
    hist[2] = {{d1, 0.5}, {d2, 0.5}};
    const TimeProfiles profiles(hist, 0);
    Tape tape;
    const std::vector<ItemId> items{1, 2, 3};
    const auto p = profiles.profiles(tape, t, items);
    const auto e1 = timestamp_row(t, calendar_features(d1));
    const auto e2 = timestamp_row(t, calendar_features(d2));
    for (std::size_t c = 0; c < 5; ++c) {
        CHECK(p.at(0, c) == doctest::Approx(e1[c]).epsilon(1e-14));
        CHECK(p.at(1, c) == doctest::Approx(0.5 * (e1[c] + e2[c])).epsilon(1e-14));
        CHECK(p.at(2, c) == 0.0);
    }
    CHECK(profiles.has_profile(1));
    CHECK_FALSE(profiles.has_profile(3));

    const std::vector<ItemId> cold{7};
    const auto z = profiles.profiles(tape, t, cold);
    for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("profiles match the explicit weighted sum and follow the tables") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto t = make_tables(5, 4, rng());
        std::vector<ItemHistogram> hist(6);
        for (std::size_t i = 1; i < hist.size(); ++i) hist[i] = random_histogram(rng);
        const std::int64_t tz = trial % 2 ? 0 : 5 * 3600;
        const TimeProfiles profiles(hist, tz);
        const std::vector<ItemId> items{1, 2, 3, 4, 5};

        for (int round = 0; round < 2; ++round) {
            Tape tape;
            const auto p = profiles.profiles(tape, t, items);
            for (std::size_t k = 0; k < items.size(); ++k) {
                std::vector<double> ref(4, 0.0);
                for (const auto& b : hist[items[k]]) {
                    const auto e = timestamp_row(t, calendar_features(b.day_start, tz));
                    for (std::size_t c = 0; c < 4; ++c) ref[c] += b.weight * e[c];
                }
                for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(p.at(k, c) - ref[c]) < 1e-12);
            }
            // The profile is a function of the live tables.
            for (double& v : t.week.mutable_values()) v *= -2.0;
            t.clear_pad_rows();
        }
    }
}

TEST_CASE("attention special cases") {
    Tape tape;
    std::mt19937_64 rng(3);
    const auto q = testing::random_const(1, 4, rng);
    const auto v = testing::random_const(5, 4, rng);
    const auto mask = testing::suffix_mask(5, 3);

    const auto same_keys = Tensor::constant(5, 4, std::vector<double>(20, 0.3));
    const auto mean = atm_attention(tape, q, same_keys, v, mask);
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(mean.at(0, c) == doctest::Approx((v.at(2, c) + v.at(3, c) + v.at(4, c)) / 3.0).epsilon(1e-14));

    const auto one = atm_attention(tape, q, testing::random_const(5, 4, rng), v, testing::suffix_mask(5, 1));
    for (std::size_t c = 0; c < 4; ++c) CHECK(one.at(0, c) == doctest::Approx(v.at(4, c)).epsilon(1e-14));

    const auto none = atm_attention(tape, q, same_keys, v, testing::suffix_mask(5, 0));
    for (double x : none.values()) CHECK(x == 0.0);
}

TEST_CASE("attention matches a dense reference and stays in the convex hull") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t L = 1 + rng() % 8, d = 1 + rng() % 6, valid = 1 + rng() % L;
        const auto q = testing::random_const(1, d, rng);
        const auto k = testing::random_const(L, d, rng, 2.0);
        const auto v = testing::random_const(L, d, rng);
        const auto mask = testing::suffix_mask(L, valid);
        Tape tape;
        const auto out = atm_attention(tape, q, k, v, mask);
        const auto ref = testing::dense_attention(testing::to_dense(q), testing::to_dense(k), testing::to_dense(v), mask);
        for (std::size_t c = 0; c < d; ++c) {
            CHECK(std::abs(out.at(0, c) - ref[c]) < 1e-12);
            double lo = INFINITY, hi = -INFINITY;
            for (std::size_t i = L - valid; i < L; ++i) {
                lo = std::min(lo, v.at(i, c));
                hi = std::max(hi, v.at(i, c));
            }
            CHECK(out.at(0, c) >= lo - 1e-12);
            CHECK(out.at(0, c) <= hi + 1e-12);
        }
    }
}

TEST_CASE("profile attention gradients reach the time tables") {
    std::mt19937_64 rng(5);
    const auto t = make_tables(4, 3, 6);
    std::vector<ItemHistogram> hist(5);
    for (std::size_t i = 1; i < hist.size(); ++i) hist[i] = random_histogram(rng);
    const TimeProfiles profiles(hist, 0);
    const std::vector<ItemId> items{2, 4, 1, 3};
    const auto v = testing::random_const(4, 3, rng);
    const auto mask = testing::suffix_mask(4, 3);
    const std::vector<Tensor> params{t.month, t.week, t.day};
    const double err = ad::grad_check(
        [&](Tape& tape) {
            const auto q = embed_timestamp(tape, t, TimeFeature{3, 14, 2});
            return tape.sum(tape.sigmoid(atm_attention(tape, q, profiles.profiles(tape, t, items), v, mask)));
        },
        params, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("seasonal profile export") {
    const Timestamp july = 1404475200 - 43200;
    std::vector<ItemHistogram> hist(3);
    hist[1] = {{july, 0.25}, {july + 86400 * 3, 0.75}};
    auto shares = export_seasonal_profile(hist, 1);
    CHECK(shares[6] == 1.0);
    CHECK_THROWS_AS(export_seasonal_profile(hist, 2), DataError);
    CHECK_THROWS_AS(export_seasonal_profile(hist, 9), DataError);
    CHECK_THROWS_AS(export_seasonal_profile(hist, 0), DataError);

    // Uniform purchase days over many years give near-uniform month shares.
    std::mt19937_64 rng(7);
    std::map<Timestamp, double> days;
    const int n = 100000;
    for (int i = 0; i < n; ++i) days[86400 * static_cast<Timestamp>(rng() % 36500)] += 1.0 / n;
    hist[2].clear();
    for (const auto& [d, w] : days) hist[2].push_back({d, w});
    shares = export_seasonal_profile(hist, 2);
    double total = 0.0;
    for (double s : shares) {
        CHECK(std::abs(s - 1.0 / 12.0) < 0.02);
        total += s;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);

    std::ostringstream csv;
    write_profiles_csv(csv, hist);
    std::istringstream lines(csv.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "item_id,month_index,share");
    int rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 24);
}
