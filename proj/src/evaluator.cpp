#include "htp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "htp/random.hpp"

namespace htp {

void EvalConfig::validate() const {
    if (cutoff == 0) throw DataError("eval cutoff M must be positive");
    if (negatives < cutoff) throw DataError("negatives per user must be at least M");
    if (runs == 0) throw DataError("runs must be at least 1");
}

Split parse_split(const std::string& name) {
    if (name == "validation" || name == "val") return Split::kValidation;
    if (name == "test") return Split::kTest;
    throw DataError("unknown split '" + name + "' (expected validation or test)");
}

std::string split_name(Split s) { return s == Split::kTest ? "test" : "validation"; }

double hit_at(std::size_t rank, std::size_t cutoff) {
    if (rank == 0) throw std::invalid_argument("rank is 1-based");
    return rank <= cutoff ? 1.0 : 0.0;
}

double ndcg_at(std::size_t rank, std::size_t cutoff) {
    if (rank == 0) throw std::invalid_argument("rank is 1-based");
    return rank <= cutoff ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double auc_sampled(double positive, std::span<const double> negatives) {
    if (negatives.empty()) throw std::invalid_argument("auc_sampled: no negatives");
    double wins = 0.0;
    for (double s : negatives) {
        if (s < positive) wins += 1.0;
        else if (s == positive) wins += 0.5;
    }
    return wins / static_cast<double>(negatives.size());
}

RankingResult rank_candidates(std::span<const ItemId> candidates, std::span<const double> scores, ItemId truth) {
    if (candidates.size() != scores.size()) throw std::invalid_argument("rank_candidates: length mismatch");
    if (std::count(candidates.begin(), candidates.end(), truth) != 1)
        throw std::invalid_argument("rank_candidates: ground truth must appear exactly once");
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return candidates[a] < candidates[b];
    });
    RankingResult r;
    r.ranked.reserve(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
        r.ranked.push_back(candidates[order[k]]);
        if (candidates[order[k]] == truth) r.truth_rank = k + 1;
    }
    return r;
}

std::vector<double> ModelScorer::score(const UserSequence& seq, std::span<const ItemId> candidates) const {
    ad::Tape tape(false);
    const auto profile = model_.forward(tape, seq, Mode::kEval);
    const auto s = model_.score_candidates(tape, profile, candidates);
    return {s.values().begin(), s.values().end()};
}

std::vector<double> OracleScorer::score(const UserSequence& seq, std::span<const ItemId> candidates) const {
    std::vector<double> out(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (candidates[i] == seq.target_item) out[i] = 1.0;
    return out;
}

UserSequence evaluation_sequence(const Dataset& data, UserId user, Split split, std::size_t max_len) {
    const auto& u = data.split.users.at(user);
    if (split == Split::kValidation) return build_sequence(u.train, max_len, u.validation, data.tz_offset_seconds);
    std::vector<Event> history = u.train;
    history.push_back(u.validation);
    return build_sequence(history, max_len, u.test, data.tz_offset_seconds);
}

Evaluator::Evaluator(const Dataset& data, EvalConfig config, std::size_t max_len)
    : data_(data), config_(config), max_len_(max_len), sampler_(data.item_count(), data.log.histories()) {
    config_.validate();
}

std::vector<ItemId> Evaluator::candidates(UserId user, Split split, std::uint64_t run_seed) const {
    const auto& u = data_.split.users.at(user);
    const Event target = split == Split::kTest ? u.test : u.validation;
    std::mt19937_64 rng(derive_seed({run_seed, user}));
    std::vector<ItemId> out{target.item};
    try {
        for (std::size_t k = 0; k < config_.negatives; ++k)
            out.push_back(sampler_.sample(user, target.time, target.item, rng));
    } catch (const DataError&) {
        return {};
    }
    return out;
}

MetricSummary Evaluator::evaluate(const Scorer& scorer, Split split, std::uint64_t run_seed) const {
    MetricSummary sum;
    for (UserId user = 0; user < data_.user_count(); ++user) {
        const auto cands = candidates(user, split, run_seed);
        if (cands.empty()) {
            ++sum.skipped;
            continue;
        }
        const auto seq = evaluation_sequence(data_, user, split, max_len_);
        const auto scores = scorer.score(seq, cands);
        const auto ranking = rank_candidates(cands, scores, cands.front());
        sum.hr += hit_at(ranking.truth_rank, config_.cutoff);
        sum.ndcg += ndcg_at(ranking.truth_rank, config_.cutoff);
        sum.auc += auc_sampled(scores.front(), std::span<const double>(scores).subspan(1));
        ++sum.users;
    }
    if (sum.users > 0) {
        const double n = static_cast<double>(sum.users);
        sum.hr /= n;
        sum.ndcg /= n;
        sum.auc /= n;
    }
    return sum;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json metrics_json(const MetricSummary& m) {
    nlohmann::ordered_json j;
    j["HR@10"] = m.hr;
    j["NDCG@10"] = m.ndcg;
    j["AUC"] = m.auc;
    return j;
}

}  // namespace

nlohmann::ordered_json Report::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["config_hash"] = config_hash;
    j["split"] = split;
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : runs) {
        auto entry = metrics_json(r.metrics);
        entry["seed"] = r.seed;
        entry["users"] = r.metrics.users;
        entry["skipped"] = r.metrics.skipped;
        j["runs"].push_back(entry);
    }
    j["mean"] = metrics_json(mean);
    j["std"] = metrics_json(stddev);
    return j;
}

Report multi_run_report(const std::string& dataset, const std::string& config_hash, Split split, std::size_t runs,
                        std::uint64_t base_seed, const std::function<MetricSummary(std::uint64_t)>& run_once) {
    if (runs == 0) throw DataError("runs must be at least 1");
    Report rep;
    rep.dataset = dataset;
    rep.config_hash = config_hash;
    rep.split = split_name(split);
    for (std::size_t r = 0; r < runs; ++r) {
        const std::uint64_t seed = base_seed + r;
        rep.runs.push_back({seed, run_once(seed)});
    }
    const double n = static_cast<double>(runs);
    for (const auto& r : rep.runs) {
        rep.mean.hr += r.metrics.hr / n;
        rep.mean.ndcg += r.metrics.ndcg / n;
        rep.mean.auc += r.metrics.auc / n;
        rep.mean.users += r.metrics.users;
        rep.mean.skipped += r.metrics.skipped;
    }
    rep.mean.users /= runs;
    rep.mean.skipped /= runs;
    for (const auto& r : rep.runs) {
        rep.stddev.hr += (r.metrics.hr - rep.mean.hr) * (r.metrics.hr - rep.mean.hr) / n;
        rep.stddev.ndcg += (r.metrics.ndcg - rep.mean.ndcg) * (r.metrics.ndcg - rep.mean.ndcg) / n;
        rep.stddev.auc += (r.metrics.auc - rep.mean.auc) * (r.metrics.auc - rep.mean.auc) / n;
    }
    rep.stddev.hr = std::sqrt(rep.stddev.hr);
    rep.stddev.ndcg = std::sqrt(rep.stddev.ndcg);
    rep.stddev.auc = std::sqrt(rep.stddev.auc);
    return rep;
}

bool validate_report_json(const nlohmann::json& doc, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    auto metric_block = [&](const nlohmann::json& m, const std::string& where) {
        for (const char* key : {"HR@10", "NDCG@10", "AUC"}) {
            if (!m.contains(key) || !m[key].is_number()) return fail(where + "." + key + " missing or not a number");
            const double v = m[key].get<double>();
            if (!(v >= 0.0 && v <= 1.0)) return fail(where + "." + key + " outside [0, 1]");
        }
        return true;
    };
    if (!doc.is_object()) return fail("report is not an object");
    for (const char* key : {"dataset", "config_hash", "split"})
        if (!doc.contains(key) || !doc[key].is_string()) return fail(std::string(key) + " missing or not a string");
    if (!doc.contains("runs") || !doc["runs"].is_array() || doc["runs"].empty()) return fail("runs missing or empty");
    for (std::size_t i = 0; i < doc["runs"].size(); ++i) {
        const auto& r = doc["runs"][i];
        const std::string where = "runs[" + std::to_string(i) + "]";
        if (!r.is_object() || !r.contains("seed") || !r["seed"].is_number_unsigned())
            return fail(where + ".seed missing");
        if (!metric_block(r, where)) return false;
    }
    if (!doc.contains("mean") || !metric_block(doc["mean"], "mean")) return doc.contains("mean") ? false : fail("mean missing");
    if (!doc.contains("std") || !doc["std"].is_object()) return fail("std missing");
    for (const char* key : {"HR@10", "NDCG@10", "AUC"})
        if (!doc["std"].contains(key) || !doc["std"][key].is_number() || doc["std"][key].get<double>() < 0.0)
            return fail(std::string("std.") + key + " missing or negative");
    return true;
}

}  // namespace htp
