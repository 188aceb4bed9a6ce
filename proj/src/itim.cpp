#include "htp/itim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "htp/random.hpp"

namespace htp {

namespace {

ad::Tensor square_matrix(std::size_t dim, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
    std::vector<double> v(dim * dim);
    for (double& x : v) x = dist(rng);
    return ad::Tensor::parameter(dim, dim, std::move(v));
}

}  // namespace

ItimLayerParams ItimLayerParams::create(std::size_t dim, std::mt19937_64& rng) {
    ItimLayerParams p;
    p.w1 = square_matrix(dim, rng);
    p.w2 = square_matrix(dim, rng);
    p.w3 = square_matrix(dim, rng);
    p.wt = square_matrix(dim, rng);
    return p;
}

ItimParams ItimParams::create(std::size_t layers, std::size_t dim, std::mt19937_64& rng) {
    if (layers == 0) throw std::invalid_argument("ITIM needs at least one layer");
    ItimParams p;
    for (std::size_t h = 0; h < layers; ++h) p.layers.push_back(ItimLayerParams::create(dim, rng));
    return p;
}

std::vector<ad::Tensor> ItimParams::all() const {
    std::vector<ad::Tensor> out;
    for (const auto& l : layers)
        for (const auto& t : l.all()) out.push_back(t);
    return out;
}

ad::Tensor pair_scores(ad::Tape& tape, const ad::Tensor& items, const ad::Tensor& time_embs,
                       const ItimLayerParams& layer, std::span<const std::uint8_t> mask) {
    const std::size_t n = items.rows();
    if (time_embs.rows() != n || mask.size() != n) throw std::invalid_argument("pair_scores: inconsistent lengths");
    std::vector<std::size_t> row_of(n * n), col_of(n * n);
    std::vector<double> keep(n * n), sentinel(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = i * n + j;
            row_of[p] = i;
            col_of[p] = j;
            const bool valid = mask[i] && mask[j];
            keep[p] = valid ? 1.0 : 0.0;
            sentinel[p] = valid ? 0.0 : kPadPairScore;
        }
    const auto query = tape.matmul(items, layer.w2);
    const auto key = tape.matmul(items, layer.w3);
    // W_t r_ji = W_t e_{t_i} - W_t e_{t_j}
    const auto shift = tape.matmul(time_embs, tape.transpose(layer.wt));
    const auto q_pairs = tape.gather_rows(query, row_of);
    const auto k_pairs = tape.sub(tape.add(tape.gather_rows(key, col_of), tape.gather_rows(shift, row_of)),
                                  tape.gather_rows(shift, col_of));
    const auto cos = tape.reshape(tape.cosine_rows(q_pairs, k_pairs), n, n);
    return tape.add(tape.mul(cos, ad::Tensor::constant(n, n, std::move(keep))),
                    ad::Tensor::constant(n, n, std::move(sentinel)));
}

std::vector<std::size_t> topk_select(std::span<const double> scores, std::size_t k,
                                     std::span<const std::uint8_t> mask) {
    if (k == 0) throw std::invalid_argument("topk_select: K must be at least 1");
    if (mask.size() != scores.size()) throw std::invalid_argument("topk_select: mask length mismatch");
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (mask[j]) idx.push_back(j);
    if (idx.size() > k) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

TopkSets topk_sets(const ad::Tensor& scores, std::size_t k, std::span<const std::uint8_t> mask) {
    const std::size_t n = scores.rows();
    TopkSets sets(n);
    for (std::size_t i = 0; i < n; ++i)
        if (mask[i]) sets[i] = topk_select(scores.values().subspan(i * n, n), k, mask);
    return sets;
}

ItimState aggregate_layer(ad::Tape& tape, const ItimState& state, const ad::Tensor& scores, const TopkSets& topk,
                          const ItimLayerParams& layer, const ad::Tensor& time_embs) {
    const std::size_t n = state.items.rows();
    if (scores.rows() != n || scores.cols() != n || topk.size() != n)
        throw std::invalid_argument("aggregate_layer: inconsistent shapes");
    std::vector<double> selected(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : topk[i]) selected[i * n + j] = 1.0;
    const auto weights = tape.mul(scores, ad::Tensor::constant(n, n, std::move(selected)));
    ItimState next;
    next.items = tape.add(state.items, tape.matmul(weights, tape.matmul(state.items, layer.w1)));
    // sum_j a_ij (e_{t_i} - e_{t_j}) = (sum_j a_ij) e_{t_i} - sum_j a_ij e_{t_j}
    next.intervals = tape.sub(tape.mul(time_embs, tape.sum_rows(weights)), tape.matmul(weights, time_embs));
    return next;
}

ItimState itim_forward(ad::Tape& tape, const ad::Tensor& items, const ad::Tensor& time_embs, const ItimParams& params,
                       std::span<const std::uint8_t> mask, const ItimOptions& options, ItimTrace* trace) {
    if (params.layers.empty()) throw std::invalid_argument("itim_forward: H must be at least 1");
    if (trace && trace->replay && trace->layers.size() != params.layers.size())
        throw std::invalid_argument("itim_forward: replay trace has the wrong number of layers");
    if (trace && !trace->replay) trace->layers.clear();
    ItimState state{items, ad::Tensor::zeros(items.rows(), items.cols())};
    for (std::size_t h = 0; h < params.layers.size(); ++h) {
        const auto& layer = params.layers[h];
        const auto scores = pair_scores(tape, state.items, time_embs, layer, mask);
        TopkSets sets;
        if (trace && trace->replay) {
            sets = trace->layers[h];
        } else {
            sets = topk_sets(scores, options.top_k, mask);
            if (trace) trace->layers.push_back(sets);
        }
        state = aggregate_layer(tape, state, scores, sets, layer, time_embs);
        if (options.dropout > 0.0)
            state.items = tape.dropout(state.items, options.dropout, derive_seed({options.dropout_seed, h}));
    }
    return state;
}

}  // namespace htp
