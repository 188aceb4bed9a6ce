#include "htp/rtim.hpp"

#include <cmath>
#include <stdexcept>

namespace htp {

RtimParams RtimParams::create(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::vector<double> w(dim), wr(dim * dim);
    for (double& x : w) x = dist(rng);
    for (double& x : wr) x = dist(rng);
    return {ad::Tensor::parameter(dim, 1, std::move(w)), ad::Tensor::parameter(dim, dim, std::move(wr))};
}

ad::Tensor rec_intervals(ad::Tape& tape, const ad::Tensor& target, const ad::Tensor& time_embs,
                         std::span<const std::uint8_t> mask) {
    if (target.rows() != 1 || target.cols() != time_embs.cols() || mask.size() != time_embs.rows())
        throw std::invalid_argument("rec_intervals: inconsistent shapes");
    std::vector<double> keep(mask.begin(), mask.end());
    // -(e_{t_i} - e_{t_{L+1}})
    const auto diff = tape.scale(tape.sub(time_embs, target), -1.0);
    return tape.mul(diff, ad::Tensor::constant(mask.size(), 1, std::move(keep)));
}

ad::Tensor time_decay_weights(ad::Tape& tape, const ad::Tensor& rec, const ad::Tensor& w,
                              std::span<const std::uint8_t> mask) {
    return tape.masked_softmax(tape.matmul(rec, w), mask);
}

ad::Tensor alignment_weights(ad::Tape& tape, const ad::Tensor& rec, const ad::Tensor& item_intervals,
                             const ad::Tensor& wr, std::span<const std::uint8_t> mask) {
    const auto g = tape.sum_rows(tape.mul(tape.matmul(rec, wr), item_intervals));
    return tape.masked_softmax(g, mask);
}

ad::Tensor cascade_aggregate(ad::Tape& tape, const ad::Tensor& decay, const ad::Tensor& align,
                             const ad::Tensor& item_reps) {
    if (decay.rows() != item_reps.rows() || align.rows() != item_reps.rows())
        throw std::invalid_argument("cascade_aggregate: inconsistent shapes");
    return tape.matmul(tape.transpose(tape.mul(align, decay)), item_reps);
}

}  // namespace htp
