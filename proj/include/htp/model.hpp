#pragma once

// The full model: e_u = e_p^a (ATM) + e_p^r (RTIM) + e_L^c (last ITIM row),
// scored against raw item embeddings, trained with pairwise BCE.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "htp/atm.hpp"
#include "htp/dataset.hpp"
#include "htp/embeddings.hpp"
#include "htp/itim.hpp"
#include "htp/rtim.hpp"
#include "htp/tensor.hpp"

namespace htp {

enum class Mode { kTrain, kEval };

struct AblationConfig {
    bool use_atm = true;
    bool use_itim_rtim = true;
    bool use_month = true;
    bool use_week = true;
    bool use_day = true;
    bool time_as_position_only = false;  // every timestamp embedding replaced by zero

    // full, no-atm, no-itim-rtim, no-month, no-week, no-day, no-time
    static AblationConfig from_name(std::string_view name);
    static const std::vector<std::string>& variant_names();
    std::string name() const;
    Granularities granularities() const;
    void validate() const;
    bool operator==(const AblationConfig&) const = default;
};

struct ModelConfig {
    std::size_t item_count = 0;
    std::size_t max_len = 50;
    std::size_t dim = 50;
    std::size_t layers = 2;
    std::size_t top_k = 3;
    double dropout = 0.5;
    double init_stddev = 0.01;
    AblationConfig ablation;
};

class HtpModel {
public:
    // Per-module outputs of one forward pass, all 1 x d.
    struct Parts {
        ad::Tensor atm;
        ad::Tensor rtim;
        ad::Tensor last;
    };

    HtpModel(ModelConfig config, TimeProfiles profiles, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const TimeProfiles& profiles() const { return profiles_; }
    EmbeddingTables& tables() { return tables_; }
    const EmbeddingTables& tables() const { return tables_; }
    ItimParams& itim() { return itim_; }
    const ItimParams& itim() const { return itim_; }
    RtimParams& rtim() { return rtim_; }
    const RtimParams& rtim() const { return rtim_; }

    // 1 x d user profile. Only the valid suffix of seq is processed; pads never
    // reach any attention or aggregation. Users with no history get zeros.
    ad::Tensor forward(ad::Tape& tape, const UserSequence& seq, Mode mode, std::uint64_t dropout_seed = 0,
                       ItimTrace* trace = nullptr, Parts* parts = nullptr) const;

    // 1 x n inner products with the raw item embeddings.
    ad::Tensor score_candidates(ad::Tape& tape, const ad::Tensor& profile, std::span<const ItemId> candidates) const;

    // Stable order; names line up with parameters().
    std::vector<ad::Tensor> parameters() const;
    std::vector<std::string> parameter_names() const;
    // The penalized subset: item, position and the three time tables.
    std::vector<ad::Tensor> regularized() const;

private:
    ModelConfig config_;
    TimeProfiles profiles_;
    EmbeddingTables tables_;
    ItimParams itim_;
    RtimParams rtim_;
};

// -[log sigma(pos) + log(1 - sigma(neg))], log arguments floored at 1e-12.
ad::Tensor bce_term(ad::Tape& tape, const ad::Tensor& pos_score, const ad::Tensor& neg_score);

// lambda * sum ||T||_F^2
ad::Tensor frobenius_penalty(ad::Tape& tape, std::span<const ad::Tensor> tensors, double lambda);

ad::Tensor bce_loss(ad::Tape& tape, const ad::Tensor& pos_score, const ad::Tensor& neg_score,
                    std::span<const ad::Tensor> regularized, double lambda);

}  // namespace htp
