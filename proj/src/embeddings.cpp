#include "htp/embeddings.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace htp {

namespace {

ad::Tensor normal_table(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(rows * cols);
    for (double& x : v) x = dist(rng);
    return ad::Tensor::parameter(rows, cols, std::move(v));
}

void zero_row(std::span<double> data, std::size_t row, std::size_t cols) {
    if (data.empty()) return;
    std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(row * cols), cols, 0.0);
}

}  // namespace

EmbeddingTables EmbeddingTables::create(std::size_t item_count, std::size_t max_len, std::size_t dim,
                                        std::mt19937_64& rng, double stddev) {
    if (dim == 0 || max_len == 0) throw std::invalid_argument("EmbeddingTables: dim and max_len must be positive");
    EmbeddingTables t;
    t.item = normal_table(item_count + 1, dim, rng, stddev);
    t.position = normal_table(max_len, dim, rng, stddev);
    t.month = normal_table(kMonthSlots + 1, dim, rng, stddev);
    t.week = normal_table(kWeekSlots + 1, dim, rng, stddev);
    t.day = normal_table(kDaySlots + 1, dim, rng, stddev);
    t.clear_pad_rows();
    return t;
}

void EmbeddingTables::clear_pad_rows() {
    const std::size_t d = dim();
    zero_row(item.mutable_values(), kPadItem, d);
    zero_row(month.mutable_values(), kMonthSlots, d);
    zero_row(week.mutable_values(), kWeekSlots, d);
    zero_row(day.mutable_values(), kDaySlots, d);
}

void EmbeddingTables::clear_pad_grads() {
    const std::size_t d = dim();
    zero_row(item.mutable_grad(), kPadItem, d);
    zero_row(month.mutable_grad(), kMonthSlots, d);
    zero_row(week.mutable_grad(), kWeekSlots, d);
    zero_row(day.mutable_grad(), kDaySlots, d);
}

ad::Tensor embed_sequence_items(ad::Tape& tape, const EmbeddingTables& tables, const UserSequence& seq) {
    if (seq.length() != tables.max_len())
        throw std::invalid_argument("embed_sequence_items: sequence length differs from position table");
    std::vector<std::size_t> ids(seq.item_ids.begin(), seq.item_ids.end());
    for (std::size_t id : ids)
        if (id > tables.item_count()) throw std::out_of_range("embed_sequence_items: item id " + std::to_string(id));
    std::vector<double> mask(seq.valid_mask.begin(), seq.valid_mask.end());
    const auto items = tape.gather_rows(tables.item, ids);
    const auto pos = tape.mul(tables.position, ad::Tensor::constant(seq.length(), 1, std::move(mask)));
    return tape.add(items, pos);
}

ad::Tensor embed_items_at(ad::Tape& tape, const EmbeddingTables& tables, std::span<const ItemId> items,
                          std::span<const std::size_t> positions) {
    if (items.size() != positions.size()) throw std::invalid_argument("embed_items_at: length mismatch");
    std::vector<std::size_t> ids(items.begin(), items.end());
    for (std::size_t id : ids)
        if (id == kPadItem || id > tables.item_count())
            throw std::out_of_range("embed_items_at: item id " + std::to_string(id));
    return tape.add(tape.gather_rows(tables.item, ids), tape.gather_rows(tables.position, positions));
}

ad::Tensor embed_timestamps(ad::Tape& tape, const EmbeddingTables& tables, std::span<const TimeFeature> features,
                            Granularities g) {
    const std::size_t n = features.size();
    if (!g.any()) return ad::Tensor::zeros(n, tables.dim());
    std::vector<std::size_t> m(n), w(n), d(n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto& f = features[k];
        if (f.month < 0 || f.month > kMonthSlots || f.week < 0 || f.week > kWeekSlots || f.day < 0 || f.day > kDaySlots)
            throw std::out_of_range("embed_timestamps: time feature outside table range");
        m[k] = static_cast<std::size_t>(f.month);
        w[k] = static_cast<std::size_t>(f.week);
        d[k] = static_cast<std::size_t>(f.day);
    }
    ad::Tensor out;
    auto accumulate = [&](const ad::Tensor& part) { out = out.defined() ? tape.add(out, part) : part; };
    if (g.month) accumulate(tape.gather_rows(tables.month, m));
    if (g.week) accumulate(tape.gather_rows(tables.week, w));
    if (g.day) accumulate(tape.gather_rows(tables.day, d));
    return out;
}

ad::Tensor embed_timestamp(ad::Tape& tape, const EmbeddingTables& tables, const TimeFeature& tf, Granularities g) {
    return embed_timestamps(tape, tables, std::span<const TimeFeature>(&tf, 1), g);
}

ad::Tensor interval_embed(ad::Tape& tape, const EmbeddingTables& tables, const TimeFeature& tf_i,
                          const TimeFeature& tf_j, Granularities g) {
    return tape.sub(embed_timestamp(tape, tables, tf_i, g), embed_timestamp(tape, tables, tf_j, g));
}

}  // namespace htp
