#include "htp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace htp {

namespace {

constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

bool parse_int(std::string_view s, std::int64_t& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

// M/D/YYYY -> midnight UTC
bool parse_us_date(std::string_view s, std::int64_t& out) {
    const auto parts = split_fields(s, '/');
    std::int64_t m = 0, d = 0, y = 0;
    if (parts.size() != 3 || !parse_int(parts[0], m) || !parse_int(parts[1], d) || !parse_int(parts[2], y))
        return false;
    using namespace std::chrono;
    const year_month_day ymd{year{static_cast<int>(y)}, month{static_cast<unsigned>(m)},
                             day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return false;
    out = sys_days{ymd}.time_since_epoch().count() * kSecondsPerDay;
    return true;
}

struct RawRow {
    std::string user;
    std::string item;
    Timestamp time;
};

[[noreturn]] void fail_row(const std::string& source, std::size_t line_no, const std::string& why) {
    throw DataError(source + ":" + std::to_string(line_no) + ": " + why);
}

// Builds a log from rows in file order; ids follow first appearance.
InteractionLog assemble(const std::vector<RawRow>& rows) {
    InteractionLog log;
    std::unordered_map<std::string, UserId> users;
    std::unordered_map<std::string, ItemId> items;
    log.item_keys.push_back("<pad>");
    struct Keyed {
        UserId user;
        ItemId item;
        Timestamp time;
        std::size_t order;
    };
    std::vector<Keyed> keyed;
    keyed.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        auto [uit, unew] = users.try_emplace(r.user, static_cast<UserId>(log.user_keys.size()));
        if (unew) log.user_keys.push_back(r.user);
        auto [iit, inew] = items.try_emplace(r.item, static_cast<ItemId>(log.item_keys.size()));
        if (inew) log.item_keys.push_back(r.item);
        keyed.push_back({uit->second, iit->second, r.time, i});
    }
    std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
        if (a.user != b.user) return a.user < b.user;
        if (a.time != b.time) return a.time < b.time;
        return a.order < b.order;
    });
    log.interactions.reserve(keyed.size());
    for (const auto& k : keyed) log.interactions.push_back({k.user, k.item, k.time});
    log.user_count = log.user_keys.size();
    log.item_count = log.item_keys.size() - 1;
    return log;
}

}  // namespace

std::vector<std::vector<Event>> InteractionLog::histories() const {
    std::vector<std::vector<Event>> out(user_count);
    for (const auto& x : interactions) out[x.user].push_back({x.item, x.time});
    return out;
}

// ---------------------------------------------------------------------------

TimeFeature calendar_features(Timestamp ts, std::int64_t tz_offset_seconds) {
    using namespace std::chrono;
    const std::int64_t days = floor_div(ts + tz_offset_seconds, kSecondsPerDay);
    const sys_days date{std::chrono::days{days}};
    const year_month_day ymd{date};
    const int dow = static_cast<int>(weekday{date}.iso_encoding()) - 1;  // Monday = 0
    // The ISO year is the year holding this week's Thursday.
    const sys_days thursday = date - std::chrono::days{dow} + std::chrono::days{3};
    const year iso_year = year_month_day{thursday}.year();
    const auto week0 = (thursday - sys_days{iso_year / January / 1}).count() / 7;
    return TimeFeature{static_cast<int>(static_cast<unsigned>(ymd.month())) - 1, static_cast<int>(week0), dow};
}

Timestamp day_start(Timestamp ts, std::int64_t tz_offset_seconds) {
    return floor_div(ts + tz_offset_seconds, kSecondsPerDay) * kSecondsPerDay - tz_offset_seconds;
}

// ---------------------------------------------------------------------------

LogFormat parse_log_format(const std::string& name) {
    if (name == "csv") return LogFormat::kCsv;
    if (name == "tafeng") return LogFormat::kTafeng;
    if (name == "amazon") return LogFormat::kAmazon;
    throw DataError("unknown log format '" + name + "' (expected csv, tafeng or amazon)");
}

InteractionLog parse_interactions(const std::filesystem::path& path, LogFormat format) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open interaction file " + path.string());
    return parse_interactions(in, format, path.string());
}

InteractionLog parse_interactions(std::istream& in, LogFormat format, const std::string& source) {
    std::vector<RawRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split_fields(line, ',');
        RawRow row;
        switch (format) {
            case LogFormat::kCsv: {
                if (line_no == 1 && f.size() == 3 && f[0] == "user" && f[1] == "item" && f[2] == "timestamp")
                    continue;
                if (f.size() != 3) fail_row(source, line_no, "expected 3 columns, got " + std::to_string(f.size()));
                if (!parse_int(f[2], row.time)) fail_row(source, line_no, "unparseable timestamp '" + std::string(f[2]) + "'");
                row.user = f[0];
                row.item = f[1];
                break;
            }
            case LogFormat::kTafeng: {
                if (line_no == 1 && !f.empty() && f[0] == "TRANSACTION_DT") continue;
                if (f.size() != 9) fail_row(source, line_no, "expected 9 columns, got " + std::to_string(f.size()));
                if (!parse_us_date(f[0], row.time)) fail_row(source, line_no, "unparseable date '" + std::string(f[0]) + "'");
                row.user = f[1];
                row.item = f[5];
                break;
            }
            case LogFormat::kAmazon: {
                if (f.size() != 4) fail_row(source, line_no, "expected 4 columns, got " + std::to_string(f.size()));
                if (!parse_int(f[3], row.time)) fail_row(source, line_no, "unparseable timestamp '" + std::string(f[3]) + "'");
                row.user = f[0];
                row.item = f[1];
                break;
            }
        }
        if (row.user.empty() || row.item.empty()) fail_row(source, line_no, "empty user or item id");
        if (row.time < 0) fail_row(source, line_no, "negative timestamp");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(source + ": no interactions");
    return assemble(rows);
}

// ---------------------------------------------------------------------------

namespace {

InteractionLog kcore_once(const InteractionLog& log, std::size_t k) {
    std::vector<std::size_t> user_n(log.user_count, 0);
    for (const auto& x : log.interactions) ++user_n[x.user];
    std::vector<std::size_t> item_n(log.item_count + 1, 0);
    for (const auto& x : log.interactions)
        if (user_n[x.user] >= k) ++item_n[x.item];

    InteractionLog out;
    out.item_keys.push_back("<pad>");
    std::vector<UserId> user_map(log.user_count, UserId(-1));
    std::vector<ItemId> item_map(log.item_count + 1, kPadItem);
    for (ItemId i = 1; i <= log.item_count; ++i)
        if (item_n[i] >= k) {
            item_map[i] = static_cast<ItemId>(out.item_keys.size());
            out.item_keys.push_back(log.item_keys[i]);
        }
    for (const auto& x : log.interactions) {
        if (user_n[x.user] < k || item_map[x.item] == kPadItem) continue;
        if (user_map[x.user] == UserId(-1)) {
            user_map[x.user] = static_cast<UserId>(out.user_keys.size());
            out.user_keys.push_back(log.user_keys[x.user]);
        }
        out.interactions.push_back({user_map[x.user], item_map[x.item], x.time});
    }
    out.user_count = out.user_keys.size();
    out.item_count = out.item_keys.size() - 1;
    return out;
}

}  // namespace

InteractionLog kcore_filter(const InteractionLog& log, std::size_t k, KcoreMode mode) {
    if (k < 1) throw DataError("kcore_filter: k must be at least 1");
    InteractionLog out = kcore_once(log, k);
    if (mode == KcoreMode::kFixpoint) {
        while (!out.interactions.empty()) {
            InteractionLog next = kcore_once(out, k);
            if (next.interactions.size() == out.interactions.size()) break;
            out = std::move(next);
        }
    }
    if (out.interactions.empty()) throw DataError("filter removed everything");
    return out;
}

// ---------------------------------------------------------------------------

SplitSpec split_leave_one_out(const InteractionLog& log) {
    SplitSpec spec;
    auto histories = log.histories();
    spec.users.reserve(histories.size());
    for (std::size_t u = 0; u < histories.size(); ++u) {
        auto& h = histories[u];
        if (h.size() < 3)
            throw DataError("user " + log.user_keys[u] + " has " + std::to_string(h.size()) +
                            " interactions; leave-one-out needs at least 3");
        UserSplit s;
        s.test = h.back();
        s.validation = h[h.size() - 2];
        h.resize(h.size() - 2);
        s.train = std::move(h);
        spec.users.push_back(std::move(s));
    }
    return spec;
}

std::size_t UserSequence::valid_count() const {
    return static_cast<std::size_t>(std::count(valid_mask.begin(), valid_mask.end(), std::uint8_t{1}));
}

UserSequence build_sequence(std::span<const Event> history, std::size_t max_len, Event target,
                            std::int64_t tz_offset_seconds) {
    if (max_len == 0) throw std::invalid_argument("build_sequence: max_len must be positive");
    if (!history.empty() && target.time < history.back().time)
        throw std::invalid_argument("build_sequence: target precedes history");
    const std::size_t keep = std::min(history.size(), max_len);
    const std::size_t pads = max_len - keep;
    UserSequence seq;
    seq.item_ids.assign(max_len, kPadItem);
    seq.timestamps.assign(max_len, 0);
    seq.time_features.assign(max_len, TimeFeature::pad());
    seq.valid_mask.assign(max_len, 0);
    const auto recent = history.subspan(history.size() - keep);
    for (std::size_t i = 0; i < keep; ++i) {
        seq.item_ids[pads + i] = recent[i].item;
        seq.timestamps[pads + i] = recent[i].time;
        seq.time_features[pads + i] = calendar_features(recent[i].time, tz_offset_seconds);
        seq.valid_mask[pads + i] = 1;
    }
    seq.target_item = target.item;
    seq.target_timestamp = target.time;
    seq.target_time = calendar_features(target.time, tz_offset_seconds);
    return seq;
}

// ---------------------------------------------------------------------------

NegativeSampler::NegativeSampler(std::size_t item_count, const std::vector<std::vector<Event>>& histories)
    : item_count_(item_count), first_seen_(histories.size()) {
    for (std::size_t u = 0; u < histories.size(); ++u) {
        std::map<ItemId, Timestamp> first;
        for (const auto& e : histories[u]) {
            auto [it, inserted] = first.try_emplace(e.item, e.time);
            if (!inserted) it->second = std::min(it->second, e.time);
        }
        auto& v = first_seen_[u];
        v.reserve(first.size());
        for (const auto& [item, t] : first) v.push_back({item, t});
    }
}

bool NegativeSampler::interacted_before(UserId user, ItemId item, Timestamp before) const {
    const auto& v = first_seen_.at(user);
    auto it = std::lower_bound(v.begin(), v.end(), item, [](const FirstSeen& f, ItemId i) { return f.item < i; });
    return it != v.end() && it->item == item && it->time < before;
}

std::vector<ItemId> NegativeSampler::eligible(UserId user, Timestamp before, ItemId exclude) const {
    std::vector<ItemId> pool;
    for (ItemId i = 1; i <= item_count_; ++i)
        if (i != exclude && !interacted_before(user, i, before)) pool.push_back(i);
    return pool;
}

ItemId NegativeSampler::sample(UserId user, Timestamp before, ItemId exclude, std::mt19937_64& rng) const {
    if (item_count_ == 0) throw DataError("negative sampling: empty catalog");
    std::uniform_int_distribution<ItemId> pick(1, static_cast<ItemId>(item_count_));
    for (int attempt = 0; attempt < 64; ++attempt) {
        const ItemId i = pick(rng);
        if (i != exclude && !interacted_before(user, i, before)) return i;
    }
    // dense histories: draw from the explicit pool instead
    const auto pool = eligible(user, before, exclude);
    if (pool.empty()) throw DataError("negative sampling: no eligible item for user " + std::to_string(user));
    std::uniform_int_distribution<std::size_t> at(0, pool.size() - 1);
    return pool[at(rng)];
}

// ---------------------------------------------------------------------------

namespace {

ItemHistogram normalize_counts(const std::map<Timestamp, std::size_t>& counts) {
    std::size_t total = 0;
    for (const auto& [day, n] : counts) total += n;
    ItemHistogram h;
    h.reserve(counts.size());
    for (const auto& [day, n] : counts) h.push_back({day, static_cast<double>(n) / static_cast<double>(total)});
    return h;
}

}  // namespace

std::vector<ItemHistogram> item_time_histograms(const SplitSpec& split, std::size_t item_count,
                                                std::int64_t tz_offset_seconds) {
    std::vector<std::map<Timestamp, std::size_t>> counts(item_count + 1);
    for (const auto& u : split.users)
        for (const auto& e : u.train) {
            if (e.item == kPadItem || e.item > item_count) throw DataError("histogram: item id out of range");
            ++counts[e.item][day_start(e.time, tz_offset_seconds)];
        }
    std::vector<ItemHistogram> out(item_count + 1);
    for (std::size_t i = 1; i <= item_count; ++i)
        if (!counts[i].empty()) out[i] = normalize_counts(counts[i]);
    return out;
}

ItemHistogram item_time_histogram(const SplitSpec& split, ItemId item, std::int64_t tz_offset_seconds) {
    std::map<Timestamp, std::size_t> counts;
    for (const auto& u : split.users)
        for (const auto& e : u.train)
            if (e.item == item) ++counts[day_start(e.time, tz_offset_seconds)];
    if (counts.empty()) return {};
    return normalize_counts(counts);
}

// ---------------------------------------------------------------------------

Dataset Dataset::from_log(InteractionLog log, std::int64_t tz_offset_seconds) {
    Dataset d;
    d.split = split_leave_one_out(log);
    d.histograms = item_time_histograms(d.split, log.item_count, tz_offset_seconds);
    d.log = std::move(log);
    d.tz_offset_seconds = tz_offset_seconds;
    return d;
}

DatasetSummary summarize(const InteractionLog& log) {
    DatasetSummary s{log.user_count, log.item_count, log.interactions.size(), 0.0};
    if (s.users > 0) s.avg_items_per_user = static_cast<double>(s.interactions) / static_cast<double>(s.users);
    return s;
}

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << std::setprecision(17);
    return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("missing cache file " + p.string());
    return in;
}

std::vector<std::string> read_keys(const std::filesystem::path& p, std::size_t first_id) {
    auto in = open_in(p);
    std::vector<std::string> keys;
    std::string line;
    std::size_t expect = first_id;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        std::int64_t id = 0;
        if (tab == std::string::npos || !parse_int(std::string_view(line).substr(0, tab), id) ||
            static_cast<std::size_t>(id) != expect)
            throw DataError(p.string() + ": malformed id map line '" + line + "'");
        keys.push_back(line.substr(tab + 1));
        ++expect;
    }
    return keys;
}

}  // namespace

void write_cache(const std::filesystem::path& dir, const Dataset& data) {
    std::filesystem::create_directories(dir);
    {
        auto out = open_out(dir / "interactions.csv");
        out << "user,item,timestamp\n";
        for (const auto& x : data.log.interactions) out << x.user << ',' << x.item << ',' << x.time << '\n';
    }
    {
        auto out = open_out(dir / "users.tsv");
        for (std::size_t u = 0; u < data.log.user_keys.size(); ++u) out << u << '\t' << data.log.user_keys[u] << '\n';
    }
    {
        auto out = open_out(dir / "items.tsv");
        for (std::size_t i = 1; i < data.log.item_keys.size(); ++i) out << i << '\t' << data.log.item_keys[i] << '\n';
    }
    {
        auto out = open_out(dir / "split.csv");
        out << "user,train_count,validation_item,validation_time,test_item,test_time\n";
        for (std::size_t u = 0; u < data.split.users.size(); ++u) {
            const auto& s = data.split.users[u];
            out << u << ',' << s.train.size() << ',' << s.validation.item << ',' << s.validation.time << ','
                << s.test.item << ',' << s.test.time << '\n';
        }
    }
    {
        auto out = open_out(dir / "histograms.csv");
        out << "item,day_start,weight\n";
        for (std::size_t i = 1; i < data.histograms.size(); ++i)
            for (const auto& b : data.histograms[i]) out << i << ',' << b.day_start << ',' << b.weight << '\n';
    }
    {
        const auto s = summarize(data.log);
        nlohmann::ordered_json j;
        j["users"] = s.users;
        j["items"] = s.items;
        j["interactions"] = s.interactions;
        j["avg_items_per_user"] = std::round(s.avg_items_per_user * 100.0) / 100.0;
        j["tz_offset_seconds"] = data.tz_offset_seconds;
        auto out = open_out(dir / "summary.json");
        out << j.dump(2) << '\n';
    }
}

Dataset read_cache(const std::filesystem::path& dir) {
    InteractionLog log;
    log.user_keys = read_keys(dir / "users.tsv", 0);
    log.item_keys = read_keys(dir / "items.tsv", 1);
    log.item_keys.insert(log.item_keys.begin(), "<pad>");
    log.user_count = log.user_keys.size();
    log.item_count = log.item_keys.size() - 1;

    std::int64_t tz = 0;
    {
        auto in = open_in(dir / "summary.json");
        const auto j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("tz_offset_seconds")) throw DataError("corrupt summary.json in " + dir.string());
        tz = j["tz_offset_seconds"].get<std::int64_t>();
    }

    auto in = open_in(dir / "interactions.csv");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;
        const auto f = split_fields(line, ',');
        std::int64_t u = 0, i = 0, t = 0;
        if (f.size() != 3 || !parse_int(f[0], u) || !parse_int(f[1], i) || !parse_int(f[2], t) || u < 0 ||
            static_cast<std::size_t>(u) >= log.user_count || i < 1 || static_cast<std::size_t>(i) > log.item_count)
            fail_row((dir / "interactions.csv").string(), line_no, "malformed cached interaction");
        log.interactions.push_back({static_cast<UserId>(u), static_cast<ItemId>(i), t});
    }
    return Dataset::from_log(std::move(log), tz);
}

}  // namespace htp
