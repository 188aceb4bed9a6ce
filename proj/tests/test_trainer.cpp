#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "htp/trainer.hpp"
#include "support.hpp"

using namespace htp;
namespace fs = std::filesystem;

namespace {

Dataset toy_dataset(std::uint64_t seed = 1) {
    std::istringstream in(testing::cyclic_csv(40, 30, 10, seed));
    return Dataset::from_log(parse_interactions(in, LogFormat::kCsv));
}

TrainConfig toy_config() {
    TrainConfig c;
    c.dim = 8;
    c.max_len = 6;
    c.layers = 1;
    c.top_k = 2;
    c.learning_rate = 1e-2;
    c.dropout = 0.2;
    c.batch_size = 32;
    c.l2 = 1e-4;
    c.max_epochs = 6;
    c.patience = 3;
    c.seed = 5;
    c.init_stddev = 0.1;
    return c;
}

EvalConfig toy_eval() { return {10, 20, 1, 3}; }

std::vector<double> flat_params(const HtpModel& m) {
    std::vector<double> out;
    for (const auto& p : m.parameters()) out.insert(out.end(), p.values().begin(), p.values().end());
    return out;
}

fs::path temp_path(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "htp_trainer_test";
    fs::create_directories(dir);
    return dir / name;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

bool pad_rows_zero(const HtpModel& m) {
    const auto& t = m.tables();
    auto zero_row = [](const ad::Tensor& x, std::size_t r) {
        for (std::size_t c = 0; c < x.cols(); ++c)
            if (x.at(r, c) != 0.0) return false;
        return true;
    };
    return zero_row(t.item, 0) && zero_row(t.month, kMonthSlots) && zero_row(t.week, kWeekSlots) &&
           zero_row(t.day, kDaySlots);
}

}  // namespace

TEST_CASE("Adam follows the bias-corrected update") {
    const auto p = ad::Tensor::parameter(1, 2, {1.0, -2.0});
    Adam adam({p}, 0.1);
    const double g1[] = {0.5, -3.0}, g2[] = {-1.0, 2.0};
    double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
    for (int t = 1; t <= 2; ++t) {
        const double* g = t == 1 ? g1 : g2;
        p.zero_grad();
        for (int k = 0; k < 2; ++k) p.mutable_grad()[k] = g[k];
        adam.step();
        for (int k = 0; k < 2; ++k) {
            m[k] = 0.9 * m[k] + 0.1 * g[k];
            v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
            const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.999, t));
            x[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(p.at(0, k) == doctest::Approx(x[k]).epsilon(1e-14));
        }
    }
    CHECK(adam.steps() == 2);
}

TEST_CASE("training examples cover every training prefix") {
    const auto data = toy_dataset();
    const Trainer tr(data, toy_config(), {}, toy_eval());
    std::size_t expected = 0;
    for (const auto& u : data.split.users) expected += u.train.size() - 1;
    CHECK(tr.examples().size() == expected);
    for (const auto& ex : tr.examples()) {
        CHECK(ex.index >= 1);
        const auto seq = tr.example_sequence(ex);
        const auto& train = data.split.users[ex.user].train;
        CHECK(seq.target_item == train[ex.index].item);
        CHECK(seq.valid_count() == std::min<std::size_t>(ex.index, 6));
        CHECK(seq.item_ids.back() == train[ex.index - 1].item);
    }
}

TEST_CASE("configuration hash") {
    const auto base = config_hash(toy_config(), {}, toy_eval());
    auto c = toy_config();
    c.seed = 99;
    c.max_epochs = 1000;
    c.patience = 0;
    CHECK(config_hash(c, {}, toy_eval()) == base);
    c.learning_rate = 2e-2;
    CHECK(config_hash(c, {}, toy_eval()) != base);
    CHECK(config_hash(toy_config(), AblationConfig::from_name("no-day"), toy_eval()) != base);
    CHECK(config_hash(toy_config(), {}, EvalConfig{10, 50, 1, 3}) != base);
    CHECK(hash_hex(0xabcULL) == "0000000000000abc");
    CHECK_THROWS_AS(TrainConfig::preset("movielens"), DataError);
    CHECK(TrainConfig::preset("sports").top_k == 2);
}

TEST_CASE("a zero learning rate leaves parameters unchanged") {
    const auto data = toy_dataset();
    auto c = toy_config();
    c.learning_rate = 0.0;
    Trainer tr(data, c, {}, toy_eval());
    const auto before = flat_params(tr.model());
    tr.train_epoch();
    CHECK(flat_params(tr.model()) == before);
}

TEST_CASE("training is deterministic under a seed") {
    const auto data = toy_dataset();
    Trainer a(data, toy_config(), {}, toy_eval()), b(data, toy_config(), {}, toy_eval());
    for (int e = 0; e < 2; ++e) CHECK(a.train_epoch() == b.train_epoch());
    CHECK(flat_params(a.model()) == flat_params(b.model()));

    auto c = toy_config();
    c.seed = 6;
    Trainer other(data, c, {}, toy_eval());
    other.train_epoch();
    CHECK(flat_params(other.model()) != flat_params(a.model()));
}

TEST_CASE("the loss goes down and pad rows stay zero") {
    const auto data = toy_dataset();
    auto c = toy_config();
    c.dropout = 0.0;
    Trainer tr(data, c, {}, toy_eval());
    std::vector<double> losses;
    for (int e = 0; e < 10; ++e) losses.push_back(tr.train_epoch());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        mx += static_cast<double>(i) / losses.size();
        my += losses[i] / losses.size();
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        sxy += (static_cast<double>(i) - mx) * (losses[i] - my);
        sxx += (static_cast<double>(i) - mx) * (static_cast<double>(i) - mx);
    }
    CHECK(sxy / sxx < 0.0);
    CHECK(losses.back() < losses.front());
    CHECK(pad_rows_zero(tr.model()));
}

TEST_CASE("held-out items do not influence a training epoch") {
    const auto data = toy_dataset();
    auto altered = data;
    for (auto& u : altered.split.users) u.test.item = 1 + (u.test.item % data.item_count());
    Trainer a(data, toy_config(), {}, toy_eval()), b(altered, toy_config(), {}, toy_eval());
    CHECK(a.train_epoch() == b.train_epoch());
    CHECK(flat_params(a.model()) == flat_params(b.model()));
}

TEST_CASE("early stopping") {
    const auto data = toy_dataset();
    SUBCASE("patience 0 stops at the first stale epoch") {
        auto c = toy_config();
        c.patience = 0;
        c.max_epochs = 50;
        Trainer tr(data, c, {}, toy_eval());
        const auto fit = tr.fit();
        REQUIRE_FALSE(fit.history.empty());
        for (std::size_t i = 0; i + 1 < fit.history.size(); ++i) CHECK(fit.history[i].improved);
        CHECK((!fit.history.back().improved || fit.history.size() == 50));
    }
    SUBCASE("the best checkpoint dominates every logged epoch") {
        Trainer tr(data, toy_config(), {}, toy_eval());
        std::size_t calls = 0;
        const auto fit = tr.fit([&](const EpochRecord&) { ++calls; });
        CHECK(calls == fit.history.size());
        CHECK(fit.history.size() <= 6);
        double best = -1.0;
        std::size_t best_epoch = 0;
        for (const auto& r : fit.history) {
            CHECK(fit.best.best_metric >= r.validation.ndcg);
            if (r.validation.ndcg > best) {
                best = r.validation.ndcg;
                best_epoch = r.epoch;
            }
        }
        CHECK(fit.best.best_metric == best);
        CHECK(fit.best.best_epoch == best_epoch);
        tr.load_best();
        const auto again = tr.evaluator().evaluate(ModelScorer(tr.model()), Split::kValidation, toy_eval().seed);
        CHECK(again.ndcg == best);
        CHECK(snapshot_parameters(tr.model()) == fit.best.params);
    }
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
    const auto data = toy_dataset();
    Trainer full(data, toy_config(), {}, toy_eval());
    std::vector<EpochRecord> straight;
    for (int e = 0; e < 4; ++e) straight.push_back(full.run_epoch());

    const auto path = temp_path("resume.ckpt");
    {
        Trainer first(data, toy_config(), {}, toy_eval());
        first.run_epoch();
        first.run_epoch();
        save_checkpoint(path, first.checkpoint());
    }
    Trainer resumed(data, toy_config(), {}, toy_eval());
    resumed.restore(load_checkpoint(path, resumed.hash()));
    CHECK(resumed.epoch() == 2);
    for (int e = 2; e < 4; ++e) {
        const auto r = resumed.run_epoch();
        CHECK(r.loss == straight[e].loss);
        CHECK(r.validation.ndcg == straight[e].validation.ndcg);
        CHECK(r.improved == straight[e].improved);
    }
    CHECK(flat_params(resumed.model()) == flat_params(full.model()));
    CHECK(resumed.checkpoint() == full.checkpoint());
}

TEST_CASE("checkpoint files") {
    const auto data = toy_dataset();
    Trainer tr(data, toy_config(), {}, toy_eval());
    tr.run_epoch();
    const auto ckpt = tr.checkpoint();
    const auto path = temp_path("roundtrip.ckpt");
    save_checkpoint(path, ckpt);
    const auto back = load_checkpoint(path, tr.hash());
    CHECK(back == ckpt);

    // The generator state survives the round trip.
    std::mt19937_64 a, b;
    std::istringstream(ckpt.rng_state) >> a;
    std::istringstream(back.rng_state) >> b;
    for (int i = 0; i < 100; ++i) CHECK(a() == b());

    CHECK_THROWS_WITH_AS(load_checkpoint(path, tr.hash() ^ 1), doctest::Contains("config hash mismatch"),
                         TrainingError);
    auto other = toy_config();
    other.dim = 4;
    Trainer wrong(data, other, {}, toy_eval());
    CHECK_THROWS_AS(wrong.restore(ckpt), TrainingError);
    CHECK_THROWS_AS(load_parameters(wrong.model(), ckpt.params), TrainingError);

    const std::string bytes = read_bytes(path);
    const auto bad = temp_path("bad.ckpt");
    auto expect_error = [&](std::string mutated, const char* what) {
        write_bytes(bad, mutated);
        CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains(what), TrainingError);
    };
    std::string s = bytes;
    s[0] = 'X';
    expect_error(s, "not a checkpoint");
    s = bytes;
    s[8] = static_cast<char>(Checkpoint::kVersion + 1);
    expect_error(s, "version");
    s = bytes;
    s[bytes.size() / 2] ^= 0x10;
    expect_error(s, "checksum");
    expect_error(bytes.substr(0, bytes.size() - 3), "corrupt");
    expect_error(bytes.substr(0, 6), "not a checkpoint");
    CHECK_THROWS_WITH_AS(load_checkpoint(temp_path("missing.ckpt")), doctest::Contains("cannot open"), TrainingError);

    Checkpoint oracle;
    oracle.kind = "oracle";
    save_checkpoint(bad, oracle);
    CHECK(load_checkpoint(bad).kind == "oracle");
    CHECK_THROWS_AS(tr.restore(oracle), TrainingError);
    fs::remove_all(path.parent_path());
}
