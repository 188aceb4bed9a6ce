#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "htp/dataset.hpp"
#include "htp/tensor.hpp"

namespace htp {

// Which calendar granularities contribute to a timestamp embedding.
struct Granularities {
    bool month = true;
    bool week = true;
    bool day = true;

    static constexpr Granularities none() { return {false, false, false}; }
    bool any() const { return month || week || day; }
};

// item: (N+1) x d, row 0 is the pad item.
// position: L x d.
// month/week/day: (slots+1) x d, the last row is the pad.
struct EmbeddingTables {
    ad::Tensor item;
    ad::Tensor position;
    ad::Tensor month;
    ad::Tensor week;
    ad::Tensor day;

    static EmbeddingTables create(std::size_t item_count, std::size_t max_len, std::size_t dim, std::mt19937_64& rng,
                                  double stddev = 0.01);

    std::size_t dim() const { return item.cols(); }
    std::size_t item_count() const { return item.rows() - 1; }
    std::size_t max_len() const { return position.rows(); }

    void clear_pad_rows();
    void clear_pad_grads();
    std::vector<ad::Tensor> all() const { return {item, position, month, week, day}; }
};

// L x d: e_i + e^p_i on valid positions, zero rows at pads.
ad::Tensor embed_sequence_items(ad::Tape& tape, const EmbeddingTables& tables, const UserSequence& seq);

// n x d rows e_i + e^p_pos for explicit (item, position) pairs.
ad::Tensor embed_items_at(ad::Tape& tape, const EmbeddingTables& tables, std::span<const ItemId> items,
                          std::span<const std::size_t> positions);

// n x d, row k = month + week + day embedding of features[k].
ad::Tensor embed_timestamps(ad::Tape& tape, const EmbeddingTables& tables, std::span<const TimeFeature> features,
                            Granularities g = {});
ad::Tensor embed_timestamp(ad::Tape& tape, const EmbeddingTables& tables, const TimeFeature& tf, Granularities g = {});

// 1 x d, e_{t_i} - e_{t_j}.
ad::Tensor interval_embed(ad::Tape& tape, const EmbeddingTables& tables, const TimeFeature& tf_i,
                          const TimeFeature& tf_j, Granularities g = {});

}  // namespace htp
