#pragma once

// Recommendation time interval module.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "htp/tensor.hpp"

namespace htp {

struct RtimParams {
    ad::Tensor w;   // d x 1, time-decay projection
    ad::Tensor wr;  // d x d, interval alignment

    static RtimParams create(std::size_t dim, std::mt19937_64& rng);
    std::vector<ad::Tensor> all() const { return {w, wr}; }
};

// L x d: row i = e_{t_{L+1}} - e_{t_i}, zero at pads. target is 1 x d.
ad::Tensor rec_intervals(ad::Tape& tape, const ad::Tensor& target, const ad::Tensor& time_embs,
                         std::span<const std::uint8_t> mask);

// L x 1 softmax of c_i = <r_{iL+1}, w> over valid positions.
ad::Tensor time_decay_weights(ad::Tape& tape, const ad::Tensor& rec, const ad::Tensor& w,
                              std::span<const std::uint8_t> mask);

// L x 1 softmax of g_i = r_{iL+1}^T W_r r_i over valid positions.
ad::Tensor alignment_weights(ad::Tape& tape, const ad::Tensor& rec, const ad::Tensor& item_intervals,
                             const ad::Tensor& wr, std::span<const std::uint8_t> mask);

// 1 x d: sum_i align(i) * decay(i) * e^c_i. The products are not renormalized.
ad::Tensor cascade_aggregate(ad::Tape& tape, const ad::Tensor& decay, const ad::Tensor& align,
                             const ad::Tensor& item_reps);

}  // namespace htp
