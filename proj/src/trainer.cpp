#include "htp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "htp/random.hpp"

namespace htp {

TrainConfig TrainConfig::preset(std::string_view dataset) {
    TrainConfig c;
    if (dataset == "tafeng") {
        c.max_len = 50;
        c.top_k = 3;
        c.batch_size = 256;
        c.l2 = 5e-4;
    } else if (dataset == "cloth") {
        c.max_len = 15;
        c.top_k = 3;
        c.batch_size = 1024;
        c.l2 = 1e-4;
    } else if (dataset == "sports") {
        c.max_len = 15;
        c.top_k = 2;
        c.batch_size = 1024;
        c.l2 = 1e-4;
    } else {
        throw DataError("no preset for dataset '" + std::string(dataset) + "' (expected tafeng, cloth or sports)");
    }
    return c;
}

void TrainConfig::validate() const {
    if (dim == 0 || max_len == 0 || layers == 0 || top_k == 0 || batch_size == 0 || max_epochs == 0)
        throw DataError("d, L, H, K, batch_size and max_epochs must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw DataError("learning_rate must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DataError("dropout must be in [0, 1)");
    if (!(l2 >= 0.0) || !std::isfinite(l2)) throw DataError("l2 must be >= 0");
    if (!(init_stddev > 0.0)) throw DataError("init_stddev must be positive");
}

ModelConfig TrainConfig::model_config(std::size_t item_count, const AblationConfig& ablation) const {
    ModelConfig m;
    m.item_count = item_count;
    m.max_len = max_len;
    m.dim = dim;
    m.layers = layers;
    m.top_k = top_k;
    m.dropout = dropout;
    m.init_stddev = init_stddev;
    m.ablation = ablation;
    return m;
}

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::uint64_t config_hash(const TrainConfig& t, const AblationConfig& a, const EvalConfig& e) {
    std::ostringstream s;
    s << "d=" << t.dim << ";L=" << t.max_len << ";H=" << t.layers << ";K=" << t.top_k
      << ";lr=" << fmt_double(t.learning_rate) << ";dropout=" << fmt_double(t.dropout) << ";batch=" << t.batch_size
      << ";l2=" << fmt_double(t.l2) << ";init=" << fmt_double(t.init_stddev) << ";ablation=" << a.name()
      << ";M=" << e.cutoff << ";negatives=" << e.negatives;
    return fnv1a(s.str());
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<ad::Tensor> params, double learning_rate) : params_(std::move(params)), lr_(learning_rate) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void Adam::step() {
    ++step_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto values = params_[k].mutable_values();
        const auto grad = params_[k].grad();
        if (grad.empty()) continue;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grad[i];
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g;
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
            values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEpsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, fields, FNV-1a of everything before it.

namespace {

constexpr char kMagic[8] = {'H', 'T', 'P', 'C', 'K', 'P', 'T', '\0'};

class Writer {
public:
    void u64(std::uint64_t x) { raw(&x, sizeof x); }
    void u32(std::uint32_t x) { raw(&x, sizeof x); }
    void f64(double x) { raw(&x, sizeof x); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void vec(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void matrices(const std::vector<NamedMatrix>& ms) {
        u64(ms.size());
        for (const auto& m : ms) {
            str(m.name);
            u64(m.rows);
            u64(m.cols);
            vec(m.values);
        }
    }
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    double f64() { return pod<double>(); }
    std::string str() {
        const auto n = count(1);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::vector<double> vec() {
        const auto n = count(sizeof(double));
        std::vector<double> v(n);
        std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return v;
    }
    std::vector<NamedMatrix> matrices() {
        std::vector<NamedMatrix> ms(count(1));
        for (auto& m : ms) {
            m.name = str();
            m.rows = u64();
            m.cols = u64();
            m.values = vec();
            if (m.values.size() != m.rows * m.cols) throw TrainingError("corrupt checkpoint: matrix '" + m.name + "'");
        }
        return ms;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw TrainingError("corrupt checkpoint: truncated");
    }
    // Length prefix, sanity-checked against the bytes that remain.
    std::size_t count(std::size_t elem) {
        const auto n = u64();
        if (n > (data_.size() - pos_) / elem) throw TrainingError("corrupt checkpoint: bad length");
        return static_cast<std::size_t>(n);
    }
    template <class T>
    T pod() {
        need(sizeof(T));
        T x;
        std::memcpy(&x, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return x;
    }
    std::string_view data_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(Checkpoint::kVersion);
    w.str(c.kind);
    w.u64(c.config_hash);
    w.str(c.ablation);
    w.u64(c.epoch);
    w.matrices(c.params);
    w.u64(c.adam_m.size());
    for (const auto& m : c.adam_m) w.vec(m);
    w.u64(c.adam_v.size());
    for (const auto& v : c.adam_v) w.vec(v);
    w.u64(c.adam_step);
    w.str(c.rng_state);
    w.matrices(c.best_params);
    w.f64(c.best_metric);
    w.u64(c.best_epoch);
    w.u64(c.stale_epochs);
    w.u64(fnv1a(w.bytes()));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw TrainingError("cannot write checkpoint " + tmp.string());
        out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
        if (!out) throw TrainingError("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainingError("cannot open checkpoint " + path.string());
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t) ||
        std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
        throw TrainingError(path.string() + " is not a checkpoint");

    Reader r(data);
    r.skip(sizeof kMagic);
    const auto version = r.u32();
    if (version != Checkpoint::kVersion)
        throw TrainingError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                            std::to_string(Checkpoint::kVersion) + ")");
    const std::size_t body = data.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + body, sizeof stored);
    if (stored != fnv1a(std::string_view(data).substr(0, body)))
        throw TrainingError("corrupt checkpoint " + path.string() + ": checksum mismatch");

    Checkpoint c;
    c.kind = r.str();
    c.config_hash = r.u64();
    c.ablation = r.str();
    c.epoch = r.u64();
    c.params = r.matrices();
    c.adam_m.resize(r.u64());
    for (auto& m : c.adam_m) m = r.vec();
    c.adam_v.resize(r.u64());
    for (auto& v : c.adam_v) v = r.vec();
    c.adam_step = r.u64();
    c.rng_state = r.str();
    c.best_params = r.matrices();
    c.best_metric = r.f64();
    c.best_epoch = r.u64();
    c.stale_epochs = r.u64();
    if (r.pos() != body) throw TrainingError("corrupt checkpoint " + path.string() + ": trailing bytes");
    if (c.kind != "htp" && c.kind != "oracle") throw TrainingError("unknown checkpoint kind '" + c.kind + "'");
    if (expected_hash && *expected_hash != c.config_hash)
        throw TrainingError("config hash mismatch: checkpoint " + hash_hex(c.config_hash) + ", config " +
                            hash_hex(*expected_hash));
    return c;
}

std::vector<NamedMatrix> snapshot_parameters(const HtpModel& model) {
    std::vector<NamedMatrix> out;
    const auto params = model.parameters();
    const auto names = model.parameter_names();
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto v = params[k].values();
        out.push_back({names[k], params[k].rows(), params[k].cols(), {v.begin(), v.end()}});
    }
    return out;
}

void load_parameters(HtpModel& model, const std::vector<NamedMatrix>& ms) {
    const auto params = model.parameters();
    const auto names = model.parameter_names();
    if (ms.size() != params.size())
        throw TrainingError("checkpoint has " + std::to_string(ms.size()) + " parameters, model has " +
                            std::to_string(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (ms[k].name != names[k] || ms[k].rows != params[k].rows() || ms[k].cols != params[k].cols())
            throw TrainingError("checkpoint parameter '" + ms[k].name + "' does not fit '" + names[k] + "' " +
                                ad::shape_string(params[k]));
        std::copy(ms[k].values.begin(), ms[k].values.end(), params[k].mutable_values().begin());
    }
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<Event>> train_histories(const SplitSpec& split) {
    std::vector<std::vector<Event>> out;
    out.reserve(split.users.size());
    for (const auto& u : split.users) out.push_back(u.train);
    return out;
}

}  // namespace

Trainer::Trainer(const Dataset& data, TrainConfig config, AblationConfig ablation, EvalConfig eval)
    : data_(data),
      config_((config.validate(), config)),
      ablation_(ablation),
      hash_(config_hash(config, ablation, eval)),
      model_(config.model_config(data.item_count(), ablation), TimeProfiles(data.histograms, data.tz_offset_seconds),
             derive_seed({config.seed, 0x6d6f64656cULL})),
      evaluator_(data, eval, config.max_len),
      // Training sees only the training split, so held-out events cannot
      // shape the negative pool.
      sampler_(data.item_count(), train_histories(data.split)),
      adam_(model_.parameters(), config.learning_rate),
      rng_(derive_seed({config.seed, 0x747261696eULL})) {
    for (UserId u = 0; u < data.user_count(); ++u) {
        const auto n = data.split.users[u].train.size();
        for (std::uint32_t k = 1; k < n; ++k) examples_.push_back({u, k});
    }
    if (examples_.empty()) throw DataError("no training examples: every user has a single training interaction");
}

UserSequence Trainer::example_sequence(const TrainExample& ex) const {
    const auto& train = data_.split.users.at(ex.user).train;
    return build_sequence(std::span<const Event>(train).first(ex.index), config_.max_len, train.at(ex.index),
                          data_.tz_offset_seconds);
}

double Trainer::train_epoch() {
    const std::uint64_t epoch_seed = rng_();
    std::vector<TrainExample> order = examples_;
    std::mt19937_64 shuffler(derive_seed({epoch_seed, 0}));
    std::shuffle(order.begin(), order.end(), shuffler);

    const auto params = model_.parameters();
    const auto reg = model_.regularized();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        const std::size_t end = std::min(order.size(), start + config_.batch_size);
        const double inv = 1.0 / static_cast<double>(end - start);
        for (const auto& p : params) p.zero_grad();

        double batch_loss = 0.0;
        for (std::size_t b = start; b < end; ++b) {
            const auto& ex = order[b];
            const auto seq = example_sequence(ex);
            std::mt19937_64 neg_rng(derive_seed({epoch_seed, 1, ex.user, ex.index}));
            const ItemId neg = sampler_.sample(ex.user, seq.target_timestamp, seq.target_item, neg_rng);

            ad::Tape tape;
            const auto profile =
                model_.forward(tape, seq, Mode::kTrain, derive_seed({epoch_seed, 2, ex.user, ex.index}));
            const ItemId pos_id = seq.target_item;
            const auto pos = model_.score_candidates(tape, profile, std::span<const ItemId>(&pos_id, 1));
            const auto negs = model_.score_candidates(tape, profile, std::span<const ItemId>(&neg, 1));
            const auto loss = bce_term(tape, pos, negs);
            batch_loss += loss.item() * inv;
            tape.backward(loss, inv);
        }
        ad::Tape reg_tape;
        const auto penalty = frobenius_penalty(reg_tape, reg, config_.l2);
        batch_loss += penalty.item();
        reg_tape.backward(penalty);

        if (!std::isfinite(batch_loss)) {
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + ", batch " +
                                std::to_string(batches + 1) + " (examples " + std::to_string(start) + ".." +
                                std::to_string(end - 1) + "); try a lower learning rate");
        }
        model_.tables().clear_pad_grads();
        adam_.step();
        loss_sum += batch_loss;
        ++batches;
    }
    ++epoch_;
    return loss_sum / static_cast<double>(batches);
}

EpochRecord Trainer::run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.loss = train_epoch();
    rec.epoch = epoch_;
    rec.validation = evaluator_.evaluate(ModelScorer(model_), Split::kValidation, evaluator_.config().seed);
    if (rec.validation.ndcg > best_metric_) {
        best_metric_ = rec.validation.ndcg;
        best_epoch_ = epoch_;
        best_params_ = snapshot_parameters(model_);
        stale_ = 0;
        rec.improved = true;
    } else {
        ++stale_;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

bool Trainer::finished() const { return epoch_ >= config_.max_epochs || stale_ > config_.patience; }

FitResult Trainer::fit(const std::function<void(const EpochRecord&)>& on_epoch) {
    FitResult result;
    while (!finished()) {
        result.history.push_back(run_epoch());
        if (on_epoch) on_epoch(result.history.back());
    }
    result.best = checkpoint();
    if (!best_params_.empty()) result.best.params = best_params_;
    return result;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.kind = "htp";
    c.config_hash = hash_;
    c.ablation = ablation_.name();
    c.epoch = epoch_;
    c.params = snapshot_parameters(model_);
    c.adam_m = adam_.first_moments();
    c.adam_v = adam_.second_moments();
    c.adam_step = adam_.steps();
    std::ostringstream rng;
    rng << rng_;
    c.rng_state = rng.str();
    c.best_params = best_params_;
    c.best_metric = best_metric_;
    c.best_epoch = best_epoch_;
    c.stale_epochs = stale_;
    return c;
}

void Trainer::restore(const Checkpoint& c) {
    if (c.kind != "htp") throw TrainingError("cannot resume training from a '" + c.kind + "' checkpoint");
    if (c.config_hash != hash_)
        throw TrainingError("config hash mismatch: checkpoint " + hash_hex(c.config_hash) + ", config " +
                            hash_hex(hash_));
    load_parameters(model_, c.params);
    if (!c.adam_m.empty() || !c.adam_v.empty()) {
        if (c.adam_m.size() != adam_.first_moments().size() || c.adam_v.size() != adam_.second_moments().size())
            throw TrainingError("checkpoint optimizer state does not match the model");
        for (std::size_t k = 0; k < c.adam_m.size(); ++k)
            if (c.adam_m[k].size() != adam_.first_moments()[k].size() ||
                c.adam_v[k].size() != adam_.second_moments()[k].size())
                throw TrainingError("checkpoint optimizer state does not match the model");
        adam_.first_moments() = c.adam_m;
        adam_.second_moments() = c.adam_v;
    }
    adam_.set_steps(c.adam_step);
    if (!c.rng_state.empty()) {
        std::istringstream rng(c.rng_state);
        rng >> rng_;
        if (!rng) throw TrainingError("corrupt checkpoint: rng state");
    }
    epoch_ = c.epoch;
    best_params_ = c.best_params;
    best_metric_ = c.best_metric;
    best_epoch_ = c.best_epoch;
    stale_ = c.stale_epochs;
}

void Trainer::load_best() {
    if (!best_params_.empty()) load_parameters(model_, best_params_);
}

}  // namespace htp
