#include "htp/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "htp/atm.hpp"
#include "htp/dataset.hpp"

namespace htp {

namespace {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config values

struct Value {
    std::string text;
    bool quoted = false;
    std::string where;  // "file:line" for messages
};

[[noreturn]] void bad_value(const std::string& key, const Value& v, const std::string& expected) {
    throw ConfigError(v.where + ": " + key + " expects " + expected + ", got '" + v.text + "'");
}

std::string as_string(const std::string& key, const Value& v) {
    if (!v.quoted) bad_value(key, v, "a quoted string");
    return v.text;
}

double as_double(const std::string& key, const Value& v) {
    if (v.quoted) bad_value(key, v, "a number");
    try {
        std::size_t used = 0;
        const double x = std::stod(v.text, &used);
        if (used != v.text.size() || !std::isfinite(x)) bad_value(key, v, "a number");
        return x;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a number");
    }
}

std::int64_t as_int(const std::string& key, const Value& v) {
    if (v.quoted) bad_value(key, v, "an integer");
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v.text, &used);
        if (used != v.text.size()) bad_value(key, v, "an integer");
        return x;
    } catch (const std::logic_error&) {
        bad_value(key, v, "an integer");
    }
}

std::size_t as_count(const std::string& key, const Value& v) {
    const auto x = as_int(key, v);
    if (x < 0) bad_value(key, v, "a non-negative integer");
    return static_cast<std::size_t>(x);
}

std::uint64_t as_seed(const std::string& key, const Value& v) {
    if (v.quoted || v.text.empty() || v.text[0] == '-') bad_value(key, v, "a non-negative integer");
    try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(v.text, &used);
        if (used != v.text.size()) bad_value(key, v, "a non-negative integer");
        return x;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a non-negative integer");
    }
}

using Setter = std::function<void(RunConfig&, const std::string&, const Value&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"raw", [](RunConfig& c, const std::string& k, const Value& v) { c.raw = as_string(k, v); }},
        {"format", [](RunConfig& c, const std::string& k, const Value& v) { c.format = as_string(k, v); }},
        {"cache", [](RunConfig& c, const std::string& k, const Value& v) { c.cache = as_string(k, v); }},
        {"out", [](RunConfig& c, const std::string& k, const Value& v) { c.out = as_string(k, v); }},
        {"tz_offset_seconds",
         [](RunConfig& c, const std::string& k, const Value& v) { c.tz_offset_seconds = as_int(k, v); }},
        {"kcore", [](RunConfig& c, const std::string& k, const Value& v) { c.kcore = as_count(k, v); }},
        {"kcore_mode", [](RunConfig& c, const std::string& k, const Value& v) { c.kcore_mode = as_string(k, v); }},
        {"d", [](RunConfig& c, const std::string& k, const Value& v) { c.train.dim = as_count(k, v); }},
        {"L", [](RunConfig& c, const std::string& k, const Value& v) { c.train.max_len = as_count(k, v); }},
        {"H", [](RunConfig& c, const std::string& k, const Value& v) { c.train.layers = as_count(k, v); }},
        {"K", [](RunConfig& c, const std::string& k, const Value& v) { c.train.top_k = as_count(k, v); }},
        {"learning_rate",
         [](RunConfig& c, const std::string& k, const Value& v) { c.train.learning_rate = as_double(k, v); }},
        {"dropout", [](RunConfig& c, const std::string& k, const Value& v) { c.train.dropout = as_double(k, v); }},
        {"batch_size",
         [](RunConfig& c, const std::string& k, const Value& v) { c.train.batch_size = as_count(k, v); }},
        {"lambda", [](RunConfig& c, const std::string& k, const Value& v) { c.train.l2 = as_double(k, v); }},
        {"max_epochs",
         [](RunConfig& c, const std::string& k, const Value& v) { c.train.max_epochs = as_count(k, v); }},
        {"patience", [](RunConfig& c, const std::string& k, const Value& v) { c.train.patience = as_count(k, v); }},
        {"seed", [](RunConfig& c, const std::string& k, const Value& v) { c.train.seed = as_seed(k, v); }},
        {"init_stddev",
         [](RunConfig& c, const std::string& k, const Value& v) { c.train.init_stddev = as_double(k, v); }},
        {"M", [](RunConfig& c, const std::string& k, const Value& v) { c.eval.cutoff = as_count(k, v); }},
        {"negatives", [](RunConfig& c, const std::string& k, const Value& v) { c.eval.negatives = as_count(k, v); }},
        {"runs", [](RunConfig& c, const std::string& k, const Value& v) { c.eval.runs = as_count(k, v); }},
        {"eval_seed", [](RunConfig& c, const std::string& k, const Value& v) { c.eval.seed = as_seed(k, v); }},
        {"ablation",
         [](RunConfig& c, const std::string& k, const Value& v) {
             try {
                 c.ablation = AblationConfig::from_name(as_string(k, v));
             } catch (const DataError& e) {
                 throw ConfigError(v.where + ": " + e.what());
             }
         }},
    };
    return table;
}

struct Entry {
    std::string section;  // empty at top level
    std::string key;
    Value value;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && in_string) {
            ++i;
        } else if (line[i] == '"') {
            in_string = !in_string;
        } else if (line[i] == '#' && !in_string) {
            return line.substr(0, i);
        }
    }
    return line;
}

Value parse_value(const std::string& raw, const std::string& where) {
    Value v;
    v.where = where;
    if (raw.empty()) throw ConfigError(where + ": missing value");
    if (raw.front() != '"') {
        v.text = raw;
        return v;
    }
    v.quoted = true;
    std::size_t i = 1;
    for (; i < raw.size() && raw[i] != '"'; ++i) {
        if (raw[i] == '\\') {
            if (++i == raw.size()) break;
            if (raw[i] != '"' && raw[i] != '\\') throw ConfigError(where + ": unsupported escape \\" + raw[i]);
        }
        v.text += raw[i];
    }
    if (i >= raw.size()) throw ConfigError(where + ": unterminated string");
    if (i + 1 != raw.size()) throw ConfigError(where + ": unexpected text after string");
    return v;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + '"';
}

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig RunConfig::defaults(const std::string& dataset) {
    RunConfig c;
    c.dataset = dataset;
    c.format = dataset == "tafeng" ? "tafeng" : (dataset == "cloth" || dataset == "sports") ? "amazon" : "csv";
    try {
        c.train = TrainConfig::preset(dataset);
    } catch (const DataError&) {
        c.train = TrainConfig{};
    }
    return c;
}

std::filesystem::path RunConfig::cache_dir() const {
    return cache.empty() ? std::filesystem::path("cache") / dataset : cache;
}

std::filesystem::path RunConfig::out_dir() const {
    return out.empty() ? std::filesystem::path("runs") / dataset : out;
}

void RunConfig::validate() const {
    if (dataset.empty()) throw ConfigError("dataset must not be empty");
    parse_log_format(format);
    if (kcore_mode != "single" && kcore_mode != "fixpoint")
        throw ConfigError("kcore_mode must be \"single\" or \"fixpoint\"");
    train.validate();
    eval.validate();
    ablation.validate();
}

std::string RunConfig::to_text() const {
    std::ostringstream s;
    s << "# resolved configuration\n";
    s << "dataset = " << quote(dataset) << '\n';
    s << "raw = " << quote(raw.string()) << '\n';
    s << "format = " << quote(format) << '\n';
    s << "cache = " << quote(cache_dir().string()) << '\n';
    s << "out = " << quote(out_dir().string()) << '\n';
    s << "tz_offset_seconds = " << tz_offset_seconds << '\n';
    s << "kcore = " << kcore << '\n';
    s << "kcore_mode = " << quote(kcore_mode) << '\n';
    s << '\n';
    s << "d = " << train.dim << '\n';
    s << "L = " << train.max_len << '\n';
    s << "H = " << train.layers << '\n';
    s << "K = " << train.top_k << '\n';
    s << "learning_rate = " << num(train.learning_rate) << '\n';
    s << "dropout = " << num(train.dropout) << '\n';
    s << "batch_size = " << train.batch_size << '\n';
    s << "lambda = " << num(train.l2) << '\n';
    s << "max_epochs = " << train.max_epochs << '\n';
    s << "patience = " << train.patience << '\n';
    s << "seed = " << train.seed << '\n';
    s << "init_stddev = " << num(train.init_stddev) << '\n';
    s << '\n';
    s << "M = " << eval.cutoff << '\n';
    s << "negatives = " << eval.negatives << '\n';
    s << "runs = " << eval.runs << '\n';
    s << "eval_seed = " << eval.seed << '\n';
    s << "ablation = " << quote(ablation.name()) << '\n';
    s << "# config_hash = " << hash_hex(hash()) << '\n';
    return s.str();
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    std::vector<Entry> entries;
    std::optional<Value> dataset;
    std::string section;
    std::istringstream in(text);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        const std::string where = source + ":" + std::to_string(lineno);
        const std::string body = trim(strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']' || body.size() < 3) throw ConfigError(where + ": malformed section header");
            section = trim(std::string_view(body).substr(1, body.size() - 2));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        Value v = parse_value(trim(std::string_view(body).substr(eq + 1)), where);
        if (key == "dataset") {
            if (!section.empty()) throw ConfigError(where + ": dataset must be set before any section");
            as_string(key, v);
            dataset = v;
            continue;
        }
        if (!setters().contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
        entries.push_back({section, key, std::move(v)});
    }

    RunConfig cfg = RunConfig::defaults(dataset ? dataset->text : "tafeng");
    for (const auto& e : entries)
        if (e.section.empty()) setters().at(e.key)(cfg, e.key, e.value);
    for (const auto& e : entries) {
        if (e.section.empty()) continue;
        if (e.section == cfg.dataset) {
            setters().at(e.key)(cfg, e.key, e.value);
        } else {
            RunConfig scratch;  // still type-check sections for other datasets
            setters().at(e.key)(scratch, e.key, e.value);
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_run_config(text.str(), path.string());
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "K" || name == "k") return SweepAxis::kTopK;
    if (name == "H" || name == "h") return SweepAxis::kLayers;
    throw ConfigError("unknown sweep axis '" + name + "' (expected K or H)");
}

std::vector<std::pair<std::string, std::size_t>> sweep_values(SweepAxis axis, std::size_t max_len) {
    if (axis == SweepAxis::kLayers) return {{"1", 1}, {"2", 2}, {"3", 3}};
    return {{"1", 1}, {"2", 2}, {"3", 3}, {"4", 4}, {"5", 5}, {"L", max_len}};
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string ablate;
    std::string out;
    std::string raw;
    std::string format;
    std::optional<std::size_t> epochs;
    std::string checkpoint;
    std::string split = "test";
    std::string axis;
    bool resume = false;
};

RunConfig resolve(const Options& o) {
    RunConfig cfg = load_run_config(o.config);
    if (o.seed) cfg.train.seed = *o.seed;
    if (!o.ablate.empty()) cfg.ablation = AblationConfig::from_name(o.ablate);
    if (!o.out.empty()) cfg.out = o.out;
    if (o.epochs) cfg.train.max_epochs = *o.epochs;
    cfg.validate();
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("failed writing " + path.string());
}

json metric_json(const MetricSummary& m) {
    json j;
    j["HR@10"] = m.hr;
    j["NDCG@10"] = m.ndcg;
    j["AUC"] = m.auc;
    return j;
}

json ablation_json(const AblationConfig& a) {
    json j;
    j["name"] = a.name();
    j["use_atm"] = a.use_atm;
    j["use_itim_rtim"] = a.use_itim_rtim;
    j["use_month"] = a.use_month;
    j["use_week"] = a.use_week;
    j["use_day"] = a.use_day;
    j["time_as_position_only"] = a.time_as_position_only;
    return j;
}

std::string fixed(double x, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << x;
    return s.str();
}

// Train with cfg, keep the best-validation weights and evaluate the test split.
MetricSummary train_and_test(const Dataset& data, const RunConfig& cfg) {
    Trainer trainer(data, cfg.train, cfg.ablation, cfg.eval);
    trainer.fit();
    trainer.load_best();
    return trainer.evaluator().evaluate(ModelScorer(trainer.model()), Split::kTest, cfg.eval.seed);
}

int cmd_prepare(const Options& o, std::ostream& out) {
    RunConfig cfg = load_run_config(o.config);
    if (!o.raw.empty()) cfg.raw = o.raw;
    if (!o.format.empty()) cfg.format = o.format;
    if (!o.out.empty()) cfg.cache = o.out;
    cfg.validate();
    if (cfg.raw.empty()) throw ConfigError("no raw input: set raw in the config or pass --raw");
    if (!std::filesystem::exists(cfg.raw)) throw DataError("input not found: " + cfg.raw.string());

    const auto raw = parse_interactions(cfg.raw, parse_log_format(cfg.format));
    const auto mode = cfg.kcore_mode == "fixpoint" ? KcoreMode::kFixpoint : KcoreMode::kSinglePass;
    const auto data = Dataset::from_log(kcore_filter(raw, cfg.kcore, mode), cfg.tz_offset_seconds);
    const auto dir = cfg.cache_dir();
    write_cache(dir, data);
    {
        std::ostringstream profiles;
        write_profiles_csv(profiles, data.histograms, data.tz_offset_seconds);
        write_text(dir / "profiles.csv", profiles.str());
    }
    write_text(dir / "config.toml", cfg.to_text());

    const auto before = summarize(raw);
    const auto after = summarize(data.log);
    out << std::left << std::setw(10) << "dataset" << std::right << std::setw(10) << "#users" << std::setw(10)
        << "#items" << std::setw(14) << "#interactions" << std::setw(12) << "avg/user" << '\n';
    auto row = [&](const std::string& name, const DatasetSummary& s) {
        out << std::left << std::setw(10) << name << std::right << std::setw(10) << s.users << std::setw(10)
            << s.items << std::setw(14) << s.interactions << std::setw(12) << fixed(s.avg_items_per_user, 2)
            << '\n';
    };
    row("raw", before);
    row(cfg.dataset, after);
    out << "cache written to " << dir.string() << '\n';
    return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
    const RunConfig cfg = resolve(o);
    const Dataset data = read_cache(cfg.cache_dir());
    const auto dir = cfg.out_dir();
    std::filesystem::create_directories(dir);
    write_text(dir / "config.toml", cfg.to_text());

    Trainer trainer(data, cfg.train, cfg.ablation, cfg.eval);
    const auto last_path = dir / "last.ckpt";
    bool resumed = false;
    if (o.resume && std::filesystem::exists(last_path)) {
        trainer.restore(load_checkpoint(last_path, trainer.hash()));
        resumed = true;
        out << "resumed from " << last_path.string() << " at epoch " << trainer.epoch() << '\n';
    }
    std::ofstream log(dir / "train_log.jsonl", resumed ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot write " + (dir / "train_log.jsonl").string());

    const std::string hash = hash_hex(trainer.hash());
    const auto result = trainer.fit([&](const EpochRecord& r) {
        json j;
        j["epoch"] = r.epoch;
        j["loss"] = r.loss;
        j["val"] = metric_json(r.validation);
        j["seconds"] = r.seconds;
        j["improved"] = r.improved;
        j["config_hash"] = hash;
        j["ablation"] = ablation_json(cfg.ablation);
        log << j.dump() << '\n' << std::flush;
        save_checkpoint(last_path, trainer.checkpoint());
        out << "epoch " << r.epoch << "  loss " << fixed(r.loss, 6) << "  val HR@10 " << fixed(r.validation.hr)
            << "  NDCG@10 " << fixed(r.validation.ndcg) << "  AUC " << fixed(r.validation.auc)
            << (r.improved ? "  *" : "") << '\n';
    });
    save_checkpoint(dir / "best.ckpt", result.best);
    out << "best epoch " << result.best.best_epoch << "  val NDCG@10 " << fixed(result.best.best_metric)
        << "  checkpoint " << (dir / "best.ckpt").string() << '\n';
    return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
    RunConfig cfg = resolve(o);
    const Split split = parse_split(o.split);
    const auto dir = cfg.out_dir();
    const std::filesystem::path path = o.checkpoint.empty() ? dir / "best.ckpt" : std::filesystem::path(o.checkpoint);
    if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
    const Checkpoint ckpt = load_checkpoint(path);
    const Dataset data = read_cache(cfg.cache_dir());
    const Evaluator evaluator(data, cfg.eval, cfg.train.max_len);

    std::unique_ptr<HtpModel> model;
    std::unique_ptr<Scorer> scorer;
    if (ckpt.kind == "oracle") {
        scorer = std::make_unique<OracleScorer>();
    } else {
        cfg.ablation = AblationConfig::from_name(ckpt.ablation);
        if (ckpt.config_hash != cfg.hash())
            throw TrainingError("config hash mismatch: checkpoint " + hash_hex(ckpt.config_hash) + ", config " +
                                hash_hex(cfg.hash()));
        model = std::make_unique<HtpModel>(cfg.train.model_config(data.item_count(), cfg.ablation),
                                           TimeProfiles(data.histograms, data.tz_offset_seconds), 0);
        load_parameters(*model, ckpt.params);
        scorer = std::make_unique<ModelScorer>(*model);
    }
    const auto report = multi_run_report(cfg.dataset, hash_hex(cfg.hash()), split, 1, cfg.eval.seed,
                                         [&](std::uint64_t seed) { return evaluator.evaluate(*scorer, split, seed); });
    const auto doc = report.to_json();
    std::string why;
    if (!validate_report_json(nlohmann::json::parse(doc.dump()), &why))
        throw std::logic_error("report failed validation: " + why);
    std::filesystem::create_directories(dir);
    write_text(dir / ("report_" + split_name(split) + ".json"), doc.dump(2) + "\n");
    write_text(dir / "config.toml", cfg.to_text());
    out << split_name(split) << "  HR@10 " << fixed(report.mean.hr) << "  NDCG@10 " << fixed(report.mean.ndcg)
        << "  AUC " << fixed(report.mean.auc) << "  users " << report.runs.front().metrics.users;
    if (report.runs.front().metrics.skipped > 0) out << "  skipped " << report.runs.front().metrics.skipped;
    out << '\n';
    return 0;
}

int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig base = resolve(o);
    const Dataset data = read_cache(base.cache_dir());
    const auto dir = base.out_dir();
    std::filesystem::create_directories(dir);
    write_text(dir / "config.toml", base.to_text());

    std::vector<std::string> variants{"full"};
    if (o.ablate.empty()) {
        for (const auto& v : AblationConfig::variant_names())
            if (v != "full") variants.push_back(v);
    } else if (o.ablate != "full") {
        variants.push_back(o.ablate);
    }

    json doc;
    doc["variants"] = json::array();
    std::ostringstream csv;
    csv << "variant,HR10,NDCG10,AUC,HR10_std,NDCG10_std,AUC_std\n";
    for (const auto& name : variants) {
        RunConfig cfg = base;
        cfg.ablation = AblationConfig::from_name(name);
        const auto report = multi_run_report(cfg.dataset, hash_hex(cfg.hash()), Split::kTest, cfg.eval.runs,
                                             base.train.seed, [&](std::uint64_t seed) {
                                                 RunConfig run = cfg;
                                                 run.train.seed = seed;
                                                 const auto m = train_and_test(data, run);
                                                 err << name << " seed " << seed << "  HR@10 " << fixed(m.hr)
                                                     << '\n';
                                                 return m;
                                             });
        auto entry = report.to_json();
        entry["ablation"] = ablation_json(cfg.ablation);
        doc["variants"].push_back(entry);
        csv << name << ',' << report.mean.hr << ',' << report.mean.ndcg << ',' << report.mean.auc << ','
            << report.stddev.hr << ',' << report.stddev.ndcg << ',' << report.stddev.auc << '\n';
        out << std::left << std::setw(14) << name << std::right << "  HR@10 " << fixed(report.mean.hr) << " +- "
            << fixed(report.stddev.hr) << "  NDCG@10 " << fixed(report.mean.ndcg) << " +- "
            << fixed(report.stddev.ndcg) << "  AUC " << fixed(report.mean.auc) << '\n';
    }
    write_text(dir / "ablation.json", doc.dump(2) + "\n");
    write_text(dir / "ablation.csv", csv.str());
    return 0;
}

int cmd_sweep(const Options& o, std::ostream& out) {
    const RunConfig base = resolve(o);
    const SweepAxis axis = parse_sweep_axis(o.axis);
    const Dataset data = read_cache(base.cache_dir());
    const auto dir = base.out_dir();
    std::filesystem::create_directories(dir);
    write_text(dir / "config.toml", base.to_text());

    std::ostringstream csv;
    csv << "value,HR10,NDCG10,AUC\n";
    for (const auto& [label, value] : sweep_values(axis, base.train.max_len)) {
        RunConfig cfg = base;
        (axis == SweepAxis::kTopK ? cfg.train.top_k : cfg.train.layers) = value;
        const auto m = train_and_test(data, cfg);
        csv << value << ',' << m.hr << ',' << m.ndcg << ',' << m.auc << '\n';
        out << (axis == SweepAxis::kTopK ? "K=" : "H=") << label << "  HR@10 " << fixed(m.hr) << "  NDCG@10 "
            << fixed(m.ndcg) << "  AUC " << fixed(m.auc) << '\n';
    }
    write_text(dir / (std::string("sweep_") + (axis == SweepAxis::kTopK ? "K" : "H") + ".csv"), csv.str());
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"HTP sequential recommender: prepare data, train, evaluate, ablate and sweep"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Output directory");
    };
    auto add_training = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "Training seed");
        sub->add_option("--ablate", o.ablate, "Ablation variant")
            ->check(CLI::IsMember({"full", "no-atm", "no-itim-rtim", "no-month", "no-week", "no-day", "no-time"}));
        sub->add_option("--epochs", o.epochs, "Override max_epochs");
    };

    auto* prepare = app.add_subcommand("prepare", "Parse, filter and split a raw log into a cache directory");
    add_common(prepare);
    prepare->add_option("--raw", o.raw, "Raw interaction file (overrides the config)");
    prepare->add_option("--format", o.format, "tafeng, amazon or csv (overrides the config)");

    auto* train = app.add_subcommand("train", "Train with early stopping; writes checkpoints and a JSON-lines log");
    add_common(train);
    add_training(train);
    train->add_flag("--resume", o.resume, "Continue from <out>/last.ckpt when present");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the validation or test split");
    add_common(eval);
    add_training(eval);
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file (default <out>/best.ckpt)");
    eval->add_option("--split", o.split, "validation or test")->check(CLI::IsMember({"validation", "test"}));

    auto* ablate = app.add_subcommand("ablate", "Train and test the full model against ablations over several seeds");
    add_common(ablate);
    add_training(ablate);

    auto* sweep = app.add_subcommand("sweep", "Train and test once per value of K or H");
    add_common(sweep);
    add_training(sweep);
    sweep->add_option("--axis", o.axis, "K or H")->required()->check(CLI::IsMember({"K", "H"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*prepare) return cmd_prepare(o, out);
        if (*train) return cmd_train(o, out);
        if (*eval) return cmd_eval(o, out);
        if (*ablate) return cmd_ablate(o, out, err);
        if (*sweep) return cmd_sweep(o, out);
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const TrainingError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}

}  // namespace htp
