#pragma once

// Absolute time module: each item's global calendar profile, matched against
// the recommendation time with scaled dot-product attention.

#include <array>
#include <iosfwd>
#include <span>
#include <vector>

#include "htp/dataset.hpp"
#include "htp/embeddings.hpp"
#include "htp/tensor.hpp"

namespace htp {

// A profile is sum_k alpha_k * e_{t_k} over an item's day buckets. Because a
// timestamp embedding is a sum of table rows, the profile equals
// a_m . M^m + a_w . M^w + a_d . M^d where a_* are the bucket weights summed
// per calendar slot. Those slot weights are what this class stores, so the
// profile stays a function of the current tables.
class TimeProfiles {
public:
    TimeProfiles() = default;
    TimeProfiles(const std::vector<ItemHistogram>& histograms, std::int64_t tz_offset_seconds);

    // n x d profile rows; items without a histogram give zero rows.
    ad::Tensor profiles(ad::Tape& tape, const EmbeddingTables& tables, std::span<const ItemId> items,
                        Granularities g = {}) const;

    bool has_profile(ItemId item) const;
    std::size_t item_count() const { return item_count_; }

private:
    static constexpr std::size_t kMonthCols = kMonthSlots + 1;
    static constexpr std::size_t kWeekCols = kWeekSlots + 1;
    static constexpr std::size_t kDayCols = kDaySlots + 1;

    std::size_t item_count_ = 0;
    std::vector<double> month_;  // (N+1) x 13
    std::vector<double> week_;   // (N+1) x 54
    std::vector<double> day_;    // (N+1) x 8
    std::vector<std::uint8_t> present_;
};

// softmax(q K^T / sqrt(d)) V over mask; zero 1 x d when nothing is valid.
ad::Tensor atm_attention(ad::Tape& tape, const ad::Tensor& query, const ad::Tensor& keys, const ad::Tensor& values,
                         std::span<const std::uint8_t> mask);

// Share of an item's training interactions falling in each calendar month.
std::array<double, kMonthSlots> export_seasonal_profile(const std::vector<ItemHistogram>& histograms, ItemId item,
                                                        std::int64_t tz_offset_seconds = 0);

// item_id,month_index,share for every item with a histogram.
void write_profiles_csv(std::ostream& out, const std::vector<ItemHistogram>& histograms,
                        std::int64_t tz_offset_seconds = 0);

}  // namespace htp
