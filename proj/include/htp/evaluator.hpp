#pragma once

// Leave-one-out ranking evaluation: the held-out item against sampled
// negatives, scored with HR@M, NDCG@M and sampled AUC.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "htp/dataset.hpp"
#include "htp/model.hpp"

namespace htp {

struct EvalConfig {
    std::size_t cutoff = 10;      // M
    std::size_t negatives = 100;  // per user
    std::size_t runs = 5;
    std::uint64_t seed = 2023;

    void validate() const;
};

enum class Split { kValidation, kTest };
Split parse_split(const std::string& name);
std::string split_name(Split s);

double hit_at(std::size_t rank, std::size_t cutoff);
double ndcg_at(std::size_t rank, std::size_t cutoff);
// Fraction of negatives scored strictly below the positive; ties count 1/2.
double auc_sampled(double positive, std::span<const double> negatives);

struct RankingResult {
    std::vector<ItemId> ranked;  // descending score, ties by smaller id
    std::size_t truth_rank = 0;  // 1-based
};

// candidates must contain truth exactly once; negatives may repeat.
RankingResult rank_candidates(std::span<const ItemId> candidates, std::span<const double> scores, ItemId truth);

class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::vector<double> score(const UserSequence& seq, std::span<const ItemId> candidates) const = 0;
};

class ModelScorer final : public Scorer {
public:
    explicit ModelScorer(const HtpModel& model) : model_(model) {}
    std::vector<double> score(const UserSequence& seq, std::span<const ItemId> candidates) const override;

private:
    const HtpModel& model_;
};

// Knows the answer: 1 for the ground truth, 0 elsewhere. Used to check the
// harness end to end.
class OracleScorer final : public Scorer {
public:
    std::vector<double> score(const UserSequence& seq, std::span<const ItemId> candidates) const override;
};

struct MetricSummary {
    double hr = 0.0;
    double ndcg = 0.0;
    double auc = 0.0;
    std::size_t users = 0;
    std::size_t skipped = 0;
};

// Validation histories stop before the validation item; test histories run
// through the validation item.
UserSequence evaluation_sequence(const Dataset& data, UserId user, Split split, std::size_t max_len);

class Evaluator {
public:
    Evaluator(const Dataset& data, EvalConfig config, std::size_t max_len);

    // Negatives for (run_seed, user) are independent of every other user.
    MetricSummary evaluate(const Scorer& scorer, Split split, std::uint64_t run_seed) const;

    // The candidate list (truth first) evaluate() would use for one user, or
    // empty when the user has no eligible negatives.
    std::vector<ItemId> candidates(UserId user, Split split, std::uint64_t run_seed) const;

    const EvalConfig& config() const { return config_; }

private:
    const Dataset& data_;
    EvalConfig config_;
    std::size_t max_len_;
    NegativeSampler sampler_;
};

struct RunMetrics {
    std::uint64_t seed = 0;
    MetricSummary metrics;
};

struct Report {
    std::string dataset;
    std::string config_hash;
    std::string split;
    std::vector<RunMetrics> runs;
    MetricSummary mean;
    MetricSummary stddev;  // population standard deviation across runs

    nlohmann::ordered_json to_json() const;
};

// Runs run_once for seeds base_seed, base_seed + 1, ... and aggregates.
Report multi_run_report(const std::string& dataset, const std::string& config_hash, Split split, std::size_t runs,
                        std::uint64_t base_seed, const std::function<MetricSummary(std::uint64_t)>& run_once);

// Structural check of a report document; on failure *why names the problem.
bool validate_report_json(const nlohmann::json& doc, std::string* why = nullptr);

}  // namespace htp
