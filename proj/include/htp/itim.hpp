#pragma once

// Item time interval module: H rounds of time-interval-aware aggregation over
// each item's top-K most similar in-sequence items.
//
// Shapes use the row-vector convention: item reps are L x d and e * W is a
// matmul with a d x d matrix. The interval term W_t r is applied as r W_t^T.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "htp/tensor.hpp"

namespace htp {

// Score assigned to pairs that touch a padded position.
inline constexpr double kPadPairScore = -1e9;

struct ItimLayerParams {
    ad::Tensor w1;  // aggregation transform
    ad::Tensor w2;  // query side of the cosine
    ad::Tensor w3;  // key side of the cosine
    ad::Tensor wt;  // interval transform

    static ItimLayerParams create(std::size_t dim, std::mt19937_64& rng);
    std::vector<ad::Tensor> all() const { return {w1, w2, w3, wt}; }
};

struct ItimParams {
    std::vector<ItimLayerParams> layers;

    static ItimParams create(std::size_t layers, std::size_t dim, std::mt19937_64& rng);
    std::vector<ad::Tensor> all() const;
};

struct ItimState {
    ad::Tensor items;      // L x d, e_i^{s^h}
    ad::Tensor intervals;  // L x d, r_i^h
};

// Top-K index sets, one per row, ascending index order.
using TopkSets = std::vector<std::vector<std::size_t>>;

// Per-layer top-K choices made during a forward pass. When `replay` is set
// the stored sets are used instead of being recomputed, which keeps the
// selection fixed while probing the function with finite differences.
struct ItimTrace {
    std::vector<TopkSets> layers;
    bool replay = false;
};

// L x L; a_ij = cos(e_i W2, e_j W3 + W_t r_ji) with r_ji = e_{t_i} - e_{t_j}.
// Pairs touching a pad get kPadPairScore.
ad::Tensor pair_scores(ad::Tape& tape, const ad::Tensor& items, const ad::Tensor& time_embs,
                       const ItimLayerParams& layer, std::span<const std::uint8_t> mask);

// The K valid positions with the highest score, all of them when fewer than K
// are valid. Ties go to the lower index.
std::vector<std::size_t> topk_select(std::span<const double> scores, std::size_t k, std::span<const std::uint8_t> mask);

TopkSets topk_sets(const ad::Tensor& scores, std::size_t k, std::span<const std::uint8_t> mask);

// e_i <- e_i + sum_{j in topK(i)} a_ij e_j W1 and r_i <- sum_{j in topK(i)} a_ij r_ji.
ItimState aggregate_layer(ad::Tape& tape, const ItimState& state, const ad::Tensor& scores, const TopkSets& topk,
                          const ItimLayerParams& layer, const ad::Tensor& time_embs);

struct ItimOptions {
    std::size_t top_k = 3;
    double dropout = 0.0;            // applied to each layer's item output
    std::uint64_t dropout_seed = 0;  // ignored when dropout == 0
};

// Returns the final layer's (e^c, r).
ItimState itim_forward(ad::Tape& tape, const ad::Tensor& items, const ad::Tensor& time_embs, const ItimParams& params,
                       std::span<const std::uint8_t> mask, const ItimOptions& options, ItimTrace* trace = nullptr);

}  // namespace htp
