#pragma once

// Interaction logs, preprocessing and per-user sequence construction.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace htp {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;
using Timestamp = std::int64_t;  // seconds since epoch

inline constexpr ItemId kPadItem = 0;

// Raised for bad input data or configuration; the CLI maps it to exit code 1.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Interaction {
    UserId user;
    ItemId item;
    Timestamp time;
};

struct Event {
    ItemId item;
    Timestamp time;
    bool operator==(const Event&) const = default;
};

// Users are 0-based, items 1-based (0 is the pad id). interactions are grouped
// by user in id order and sorted by time within a user, ties in file order.
struct InteractionLog {
    std::vector<Interaction> interactions;
    std::size_t user_count = 0;
    std::size_t item_count = 0;
    std::vector<std::string> user_keys;  // raw id of each internal user
    std::vector<std::string> item_keys;  // raw id of each internal item; [0] is the pad

    std::vector<std::vector<Event>> histories() const;
};

// ---------------------------------------------------------------------------
// Calendar

inline constexpr int kMonthSlots = 12;
inline constexpr int kWeekSlots = 53;
inline constexpr int kDaySlots = 7;

// Month of year, ISO week of year - 1, day of week with Monday = 0. The pad
// feature uses one extra index per granularity.
struct TimeFeature {
    int month = kMonthSlots;
    int week = kWeekSlots;
    int day = kDaySlots;

    static constexpr TimeFeature pad() { return {}; }
    bool is_pad() const { return month == kMonthSlots; }
    bool operator==(const TimeFeature&) const = default;
};

TimeFeature calendar_features(Timestamp ts, std::int64_t tz_offset_seconds = 0);

// Start of the calendar day containing ts, in the given fixed offset.
Timestamp day_start(Timestamp ts, std::int64_t tz_offset_seconds = 0);

// ---------------------------------------------------------------------------
// Ingest

enum class LogFormat {
    kCsv,     // user,item,timestamp (epoch seconds)
    kTafeng,  // Kaggle Ta-Feng export: TRANSACTION_DT (M/D/YYYY), CUSTOMER_ID, ..., PRODUCT_ID, ...
    kAmazon,  // ratings-only dump: user,item,rating,timestamp
};

LogFormat parse_log_format(const std::string& name);

InteractionLog parse_interactions(const std::filesystem::path& path, LogFormat format);
InteractionLog parse_interactions(std::istream& in, LogFormat format, const std::string& source = "<stream>");

enum class KcoreMode { kSinglePass, kFixpoint };

// Removes users with fewer than k interactions, then items with fewer than k,
// then remaps ids. kFixpoint repeats until nothing changes.
InteractionLog kcore_filter(const InteractionLog& log, std::size_t k = 5, KcoreMode mode = KcoreMode::kSinglePass);

// ---------------------------------------------------------------------------
// Splits and sequences

struct UserSplit {
    std::vector<Event> train;
    Event validation;
    Event test;
};

struct SplitSpec {
    std::vector<UserSplit> users;  // indexed by UserId
};

SplitSpec split_leave_one_out(const InteractionLog& log);

struct UserSequence {
    std::vector<ItemId> item_ids;            // length L, front-padded with kPadItem
    std::vector<Timestamp> timestamps;       // 0 at pads
    std::vector<TimeFeature> time_features;  // pad feature at pads
    std::vector<std::uint8_t> valid_mask;    // 1 for real entries (a trailing block)
    ItemId target_item = kPadItem;
    Timestamp target_timestamp = 0;
    TimeFeature target_time;

    std::size_t length() const { return item_ids.size(); }
    std::size_t valid_count() const;
};

// Keeps the max_len most recent history entries. target must not precede the
// last history entry.
UserSequence build_sequence(std::span<const Event> history, std::size_t max_len, Event target,
                            std::int64_t tz_offset_seconds = 0);

// ---------------------------------------------------------------------------
// Negative sampling

class NegativeSampler {
public:
    NegativeSampler(std::size_t item_count, const std::vector<std::vector<Event>>& histories);

    // Uniform over items the user did not interact with strictly before
    // `before`, excluding `exclude` (use kPadItem for none).
    ItemId sample(UserId user, Timestamp before, ItemId exclude, std::mt19937_64& rng) const;

    bool interacted_before(UserId user, ItemId item, Timestamp before) const;
    std::vector<ItemId> eligible(UserId user, Timestamp before, ItemId exclude) const;
    std::size_t item_count() const { return item_count_; }

private:
    struct FirstSeen {
        ItemId item;
        Timestamp time;
    };
    std::size_t item_count_;
    std::vector<std::vector<FirstSeen>> first_seen_;  // per user, sorted by item
};

// ---------------------------------------------------------------------------
// Item time histograms (training interactions only)

struct DayBucket {
    Timestamp day_start;
    double weight;
};
using ItemHistogram = std::vector<DayBucket>;  // sorted by day_start

// Indexed by ItemId; entry 0 (pad) and items without training data are empty.
std::vector<ItemHistogram> item_time_histograms(const SplitSpec& split, std::size_t item_count,
                                                std::int64_t tz_offset_seconds = 0);
ItemHistogram item_time_histogram(const SplitSpec& split, ItemId item, std::int64_t tz_offset_seconds = 0);

// ---------------------------------------------------------------------------

// Everything downstream needs: the cleaned log, its split and the training
// histograms.
struct Dataset {
    InteractionLog log;
    SplitSpec split;
    std::vector<ItemHistogram> histograms;
    std::int64_t tz_offset_seconds = 0;

    static Dataset from_log(InteractionLog log, std::int64_t tz_offset_seconds = 0);
    std::size_t item_count() const { return log.item_count; }
    std::size_t user_count() const { return log.user_count; }
};

struct DatasetSummary {
    std::size_t users;
    std::size_t items;
    std::size_t interactions;
    double avg_items_per_user;
};
DatasetSummary summarize(const InteractionLog& log);

// Writes interactions.csv, users.tsv, items.tsv, split.csv, histograms.csv and
// summary.json into dir. Output is byte-identical for identical input.
void write_cache(const std::filesystem::path& dir, const Dataset& data);
Dataset read_cache(const std::filesystem::path& dir);

}  // namespace htp
