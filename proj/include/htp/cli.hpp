#pragma once

// Run configuration and the htp command line (prepare, train, eval, ablate,
// sweep).
//
// Config files are flat `key = value` lines. Keys before any section apply to
// every dataset; a `[name]` section applies only when `dataset = "name"`.
// Values are numbers, booleans or double-quoted strings; `#` starts a comment.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "htp/evaluator.hpp"
#include "htp/model.hpp"
#include "htp/trainer.hpp"

namespace htp {

class ConfigError : public DataError {
public:
    using DataError::DataError;
};

struct RunConfig {
    std::string dataset = "tafeng";
    std::filesystem::path raw;
    std::string format = "tafeng";
    std::filesystem::path cache;  // defaults to cache/<dataset>
    std::filesystem::path out;    // defaults to runs/<dataset>
    std::int64_t tz_offset_seconds = 0;
    std::size_t kcore = 5;
    std::string kcore_mode = "single";  // single or fixpoint
    TrainConfig train = TrainConfig::preset("tafeng");
    EvalConfig eval;
    AblationConfig ablation;

    // Preset defaults for dataset (generic defaults for unknown names).
    static RunConfig defaults(const std::string& dataset);
    std::filesystem::path cache_dir() const;
    std::filesystem::path out_dir() const;
    std::uint64_t hash() const { return config_hash(train, ablation, eval); }
    void validate() const;

    // Every key, fully resolved; parse_run_config(to_text()) reproduces *this.
    std::string to_text() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

enum class SweepAxis { kTopK, kLayers };
SweepAxis parse_sweep_axis(const std::string& name);
// (label, value) pairs: K covers 1..5 and L, H covers 1..3.
std::vector<std::pair<std::string, std::size_t>> sweep_values(SweepAxis axis, std::size_t max_len);

// Exit codes: 0 success, 1 user error (bad flags, config or data), 2 internal.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace htp
