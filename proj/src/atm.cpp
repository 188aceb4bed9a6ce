#include "htp/atm.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace htp {

TimeProfiles::TimeProfiles(const std::vector<ItemHistogram>& histograms, std::int64_t tz_offset_seconds)
    : item_count_(histograms.empty() ? 0 : histograms.size() - 1),
      month_(histograms.size() * kMonthCols, 0.0),
      week_(histograms.size() * kWeekCols, 0.0),
      day_(histograms.size() * kDayCols, 0.0),
      present_(histograms.size(), 0) {
    for (std::size_t i = 1; i < histograms.size(); ++i) {
        for (const auto& b : histograms[i]) {
            const TimeFeature f = calendar_features(b.day_start, tz_offset_seconds);
            month_[i * kMonthCols + static_cast<std::size_t>(f.month)] += b.weight;
            week_[i * kWeekCols + static_cast<std::size_t>(f.week)] += b.weight;
            day_[i * kDayCols + static_cast<std::size_t>(f.day)] += b.weight;
        }
        present_[i] = histograms[i].empty() ? 0 : 1;
    }
}

bool TimeProfiles::has_profile(ItemId item) const { return item < present_.size() && present_[item] != 0; }

ad::Tensor TimeProfiles::profiles(ad::Tape& tape, const EmbeddingTables& tables, std::span<const ItemId> items,
                                  Granularities g) const {
    const std::size_t n = items.size();
    if (!g.any()) return ad::Tensor::zeros(n, tables.dim());
    auto slot_weights = [&](const std::vector<double>& src, std::size_t cols) {
        std::vector<double> w(n * cols, 0.0);
        for (std::size_t k = 0; k < n; ++k) {
            // items past the histogram range (cold items) keep a zero profile
            if (items[k] > item_count_) continue;
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(items[k] * cols), cols,
                        w.begin() + static_cast<std::ptrdiff_t>(k * cols));
        }
        return ad::Tensor::constant(n, cols, std::move(w));
    };
    ad::Tensor out;
    auto accumulate = [&](const ad::Tensor& part) { out = out.defined() ? tape.add(out, part) : part; };
    if (g.month) accumulate(tape.matmul(slot_weights(month_, kMonthCols), tables.month));
    if (g.week) accumulate(tape.matmul(slot_weights(week_, kWeekCols), tables.week));
    if (g.day) accumulate(tape.matmul(slot_weights(day_, kDayCols), tables.day));
    return out;
}

ad::Tensor atm_attention(ad::Tape& tape, const ad::Tensor& query, const ad::Tensor& keys, const ad::Tensor& values,
                         std::span<const std::uint8_t> mask) {
    const std::size_t d = query.cols();
    if (query.rows() != 1 || keys.cols() != d || keys.rows() != values.rows() || mask.size() != keys.rows())
        throw std::invalid_argument("atm_attention: inconsistent shapes");
    bool any = false;
    for (auto m : mask) any = any || m != 0;
    if (!any) return ad::Tensor::zeros(1, values.cols());
    const auto scores = tape.scale(tape.matmul(query, tape.transpose(keys)), 1.0 / std::sqrt(static_cast<double>(d)));
    const auto weights = tape.masked_softmax(scores, mask);
    return tape.matmul(weights, values);
}

std::array<double, kMonthSlots> export_seasonal_profile(const std::vector<ItemHistogram>& histograms, ItemId item,
                                                        std::int64_t tz_offset_seconds) {
    if (item == kPadItem || item >= histograms.size())
        throw DataError("seasonal profile: unknown item " + std::to_string(item));
    if (histograms[item].empty())
        throw DataError("seasonal profile: item " + std::to_string(item) + " has no training interactions");
    std::array<double, kMonthSlots> shares{};
    for (const auto& b : histograms[item])
        shares[static_cast<std::size_t>(calendar_features(b.day_start, tz_offset_seconds).month)] += b.weight;
    return shares;
}

void write_profiles_csv(std::ostream& out, const std::vector<ItemHistogram>& histograms,
                        std::int64_t tz_offset_seconds) {
    out << "item_id,month_index,share\n";
    const auto old_precision = out.precision(17);
    for (ItemId i = 1; i < histograms.size(); ++i) {
        if (histograms[i].empty()) continue;
        const auto shares = export_seasonal_profile(histograms, i, tz_offset_seconds);
        for (int m = 0; m < kMonthSlots; ++m) out << i << ',' << m << ',' << shares[static_cast<std::size_t>(m)] << '\n';
    }
    out.precision(old_precision);
}

}  // namespace htp
