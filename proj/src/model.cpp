#include "htp/model.hpp"

#include <stdexcept>

#include "htp/random.hpp"

namespace htp {

AblationConfig AblationConfig::from_name(std::string_view name) {
    AblationConfig a;
    if (name == "full" || name.empty()) return a;
    if (name == "no-atm") a.use_atm = false;
    else if (name == "no-itim-rtim") a.use_itim_rtim = false;
    else if (name == "no-month") a.use_month = false;
    else if (name == "no-week") a.use_week = false;
    else if (name == "no-day") a.use_day = false;
    else if (name == "no-time") a.time_as_position_only = true;
    else throw DataError("unknown ablation '" + std::string(name) + "'");
    return a;
}

const std::vector<std::string>& AblationConfig::variant_names() {
    static const std::vector<std::string> names{"full",    "no-atm",  "no-itim-rtim", "no-month",
                                                "no-week", "no-day",  "no-time"};
    return names;
}

std::string AblationConfig::name() const {
    for (const auto& n : variant_names())
        if (from_name(n) == *this) return n;
    std::string s = "custom:";
    s += use_atm ? "A" : "-";
    s += use_itim_rtim ? "I" : "-";
    s += use_month ? "m" : "-";
    s += use_week ? "w" : "-";
    s += use_day ? "d" : "-";
    s += time_as_position_only ? "P" : "T";
    return s;
}

Granularities AblationConfig::granularities() const {
    if (time_as_position_only) return Granularities::none();
    return {use_month, use_week, use_day};
}

void AblationConfig::validate() const {
    if (!use_atm && !use_itim_rtim && !time_as_position_only)
        throw DataError("ablation disables both ATM and ITIM+RTIM");
}

// ---------------------------------------------------------------------------

HtpModel::HtpModel(ModelConfig config, TimeProfiles profiles, std::uint64_t seed)
    : config_(config), profiles_(std::move(profiles)) {
    if (config_.item_count == 0) throw std::invalid_argument("HtpModel: empty catalog");
    if (config_.top_k == 0) throw std::invalid_argument("HtpModel: K must be at least 1");
    config_.ablation.validate();
    std::mt19937_64 rng(seed);
    tables_ = EmbeddingTables::create(config_.item_count, config_.max_len, config_.dim, rng, config_.init_stddev);
    itim_ = ItimParams::create(config_.layers, config_.dim, rng);
    rtim_ = RtimParams::create(config_.dim, rng);
}

ad::Tensor HtpModel::forward(ad::Tape& tape, const UserSequence& seq, Mode mode, std::uint64_t dropout_seed,
                             ItimTrace* trace, Parts* parts) const {
    if (seq.length() != config_.max_len) throw std::invalid_argument("forward: sequence length differs from L");
    const std::size_t d = config_.dim;
    std::vector<ItemId> items;
    std::vector<std::size_t> positions;
    std::vector<TimeFeature> features;
    for (std::size_t i = 0; i < seq.length(); ++i) {
        if (!seq.valid_mask[i]) continue;
        items.push_back(seq.item_ids[i]);
        positions.push_back(i);
        features.push_back(seq.time_features[i]);
    }
    const std::size_t n = items.size();
    if (n == 0) {
        if (parts) *parts = {ad::Tensor::zeros(1, d), ad::Tensor::zeros(1, d), ad::Tensor::zeros(1, d)};
        return ad::Tensor::zeros(1, d);
    }
    const std::vector<std::uint8_t> mask(n, 1);
    const double drop = mode == Mode::kTrain ? config_.dropout : 0.0;
    const Granularities g = config_.ablation.granularities();

    ad::Tensor seq_items = embed_items_at(tape, tables_, items, positions);
    if (drop > 0.0) seq_items = tape.dropout(seq_items, drop, derive_seed({dropout_seed, 0}));
    const ad::Tensor time_embs = embed_timestamps(tape, tables_, features, g);
    const ad::Tensor target = embed_timestamp(tape, tables_, seq.target_time, g);

    ad::Tensor atm_out = ad::Tensor::zeros(1, d);
    if (config_.ablation.use_atm) {
        const auto keys = profiles_.profiles(tape, tables_, items, g);
        atm_out = atm_attention(tape, target, keys, seq_items, mask);
    }

    ad::Tensor rtim_out = ad::Tensor::zeros(1, d);
    ad::Tensor item_reps = seq_items;
    if (config_.ablation.use_itim_rtim) {
        const ItimOptions opts{config_.top_k, drop, derive_seed({dropout_seed, 1})};
        const ItimState state = itim_forward(tape, seq_items, time_embs, itim_, mask, opts, trace);
        item_reps = state.items;
        const auto rec = rec_intervals(tape, target, time_embs, mask);
        const auto decay = time_decay_weights(tape, rec, rtim_.w, mask);
        const auto align = alignment_weights(tape, rec, state.intervals, rtim_.wr, mask);
        rtim_out = cascade_aggregate(tape, decay, align, item_reps);
    }
    const std::size_t last_row = n - 1;
    const ad::Tensor last = tape.gather_rows(item_reps, std::span<const std::size_t>(&last_row, 1));
    if (parts) *parts = {atm_out, rtim_out, last};
    return tape.add(tape.add(atm_out, rtim_out), last);
}

ad::Tensor HtpModel::score_candidates(ad::Tape& tape, const ad::Tensor& profile,
                                      std::span<const ItemId> candidates) const {
    std::vector<std::size_t> rows;
    rows.reserve(candidates.size());
    for (ItemId c : candidates) {
        if (c == kPadItem) throw std::invalid_argument("score_candidates: pad item is not a candidate");
        if (c > config_.item_count) throw std::out_of_range("score_candidates: item id " + std::to_string(c));
        rows.push_back(c);
    }
    return tape.matmul(profile, tape.transpose(tape.gather_rows(tables_.item, rows)));
}

std::vector<ad::Tensor> HtpModel::parameters() const {
    std::vector<ad::Tensor> out = tables_.all();
    for (const auto& t : itim_.all()) out.push_back(t);
    for (const auto& t : rtim_.all()) out.push_back(t);
    return out;
}

std::vector<std::string> HtpModel::parameter_names() const {
    std::vector<std::string> names{"item", "position", "month", "week", "day"};
    for (std::size_t h = 0; h < itim_.layers.size(); ++h)
        for (const char* m : {"w1", "w2", "w3", "wt"}) names.push_back("itim." + std::to_string(h) + "." + m);
    names.push_back("rtim.w");
    names.push_back("rtim.wr");
    return names;
}

std::vector<ad::Tensor> HtpModel::regularized() const { return tables_.all(); }

// ---------------------------------------------------------------------------

ad::Tensor bce_term(ad::Tape& tape, const ad::Tensor& pos_score, const ad::Tensor& neg_score) {
    // 1 - sigma(x) == sigma(-x), which keeps precision for large x
    const auto pos = tape.log(tape.sigmoid(pos_score));
    const auto neg = tape.log(tape.sigmoid(tape.scale(neg_score, -1.0)));
    return tape.scale(tape.add(pos, neg), -1.0);
}

ad::Tensor frobenius_penalty(ad::Tape& tape, std::span<const ad::Tensor> tensors, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("regularization weight must be non-negative");
    ad::Tensor total = ad::Tensor::scalar(0.0);
    for (const auto& t : tensors) total = tape.add(total, tape.sum(tape.mul(t, t)));
    return tape.scale(total, lambda);
}

ad::Tensor bce_loss(ad::Tape& tape, const ad::Tensor& pos_score, const ad::Tensor& neg_score,
                    std::span<const ad::Tensor> regularized, double lambda) {
    return tape.add(bce_term(tape, pos_score, neg_score), frobenius_penalty(tape, regularized, lambda));
}

}  // namespace htp
