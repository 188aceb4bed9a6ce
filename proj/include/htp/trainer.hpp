#pragma once

// Mini-batch training: one sampled negative per positive, Adam, early stopping
// on validation NDCG@10 and resumable binary checkpoints.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "htp/dataset.hpp"
#include "htp/evaluator.hpp"
#include "htp/model.hpp"
#include "htp/tensor.hpp"

namespace htp {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t dim = 50;
    std::size_t max_len = 50;
    std::size_t layers = 2;
    std::size_t top_k = 3;
    double learning_rate = 1e-4;
    double dropout = 0.5;
    std::size_t batch_size = 256;
    double l2 = 5e-4;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::uint64_t seed = 42;
    double init_stddev = 0.01;

    // tafeng, cloth or sports; anything else throws.
    static TrainConfig preset(std::string_view dataset);
    void validate() const;
    ModelConfig model_config(std::size_t item_count, const AblationConfig& ablation) const;
};

// FNV-1a over every key that shapes the trained model or its evaluation.
// max_epochs and patience are left out so a resumed run may extend them.
std::uint64_t config_hash(const TrainConfig& train, const AblationConfig& ablation, const EvalConfig& eval);
std::string hash_hex(std::uint64_t h);

class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    Adam(std::vector<ad::Tensor> params, double learning_rate);

    void step();
    std::uint64_t steps() const { return step_; }

    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_steps(std::uint64_t s) { step_ = s; }

private:
    std::vector<ad::Tensor> params_;
    double lr_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t step_ = 0;
};

struct NamedMatrix {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    bool operator==(const NamedMatrix&) const = default;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string kind = "htp";  // "oracle" marks a scorer that needs no parameters
    std::uint64_t config_hash = 0;
    std::string ablation = "full";
    std::size_t epoch = 0;  // completed epochs
    std::vector<NamedMatrix> params;
    std::vector<std::vector<double>> adam_m, adam_v;
    std::uint64_t adam_step = 0;
    std::string rng_state;
    std::vector<NamedMatrix> best_params;
    double best_metric = -1.0;
    std::size_t best_epoch = 0;
    std::size_t stale_epochs = 0;

    bool operator==(const Checkpoint&) const = default;
};

// Parameter values in parameters() order, tagged with parameter_names().
std::vector<NamedMatrix> snapshot_parameters(const HtpModel& model);
// Throws TrainingError when names or shapes do not line up.
void load_parameters(HtpModel& model, const std::vector<NamedMatrix>& params);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws TrainingError on a bad magic, version mismatch, truncation, or when
// expected_hash is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {});

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;
    MetricSummary validation;
    double seconds = 0.0;
    bool improved = false;
};

struct FitResult {
    Checkpoint best;  // params hold the best-validation weights
    std::vector<EpochRecord> history;
};

// One training example: predict train[index] of user from what precedes it.
struct TrainExample {
    UserId user = 0;
    std::uint32_t index = 0;
};

class Trainer {
public:
    Trainer(const Dataset& data, TrainConfig config, AblationConfig ablation, EvalConfig eval);

    // Shuffle, one negative per positive, one Adam step per batch. Returns
    // the mean batch loss.
    double train_epoch();
    // train_epoch, then validation and early-stopping bookkeeping.
    EpochRecord run_epoch();
    bool finished() const;
    FitResult fit(const std::function<void(const EpochRecord&)>& on_epoch = {});

    Checkpoint checkpoint() const;
    void restore(const Checkpoint& ckpt);
    // Copies the best-validation weights (or the current ones if none) into the model.
    void load_best();

    HtpModel& model() { return model_; }
    const HtpModel& model() const { return model_; }
    const TrainConfig& config() const { return config_; }
    const AblationConfig& ablation() const { return ablation_; }
    const Evaluator& evaluator() const { return evaluator_; }
    std::uint64_t hash() const { return hash_; }
    std::size_t epoch() const { return epoch_; }
    const std::vector<TrainExample>& examples() const { return examples_; }
    // Negatives for training come from this sampler; it sees training events only.
    const NegativeSampler& sampler() const { return sampler_; }

    // Builds the input sequence for one example (exposed for tests).
    UserSequence example_sequence(const TrainExample& ex) const;

private:
    const Dataset& data_;
    TrainConfig config_;
    AblationConfig ablation_;
    std::uint64_t hash_;
    HtpModel model_;
    Evaluator evaluator_;
    NegativeSampler sampler_;
    Adam adam_;
    std::mt19937_64 rng_;
    std::vector<TrainExample> examples_;
    std::size_t epoch_ = 0;
    std::vector<NamedMatrix> best_params_;
    double best_metric_ = -1.0;
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
};

}  // namespace htp
