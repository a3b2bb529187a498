#pragma once

#include "bsdelab/problem_config.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bsdelab {

inline constexpr int kReportFormatVersion = 1;

/// One checked number. `pass` is recomputable from (value, comparator,
/// tolerance) alone:
///   "<="  value <= tolerance
///   ">="  value >= tolerance
///   "<"   value < tolerance
///   ">"   value > tolerance
///   "=="  value == tolerance
///   "info" always passes; tolerance is absent.
struct Record {
    std::string metric;
    double value = 0.0;
    std::optional<double> tolerance;
    std::string comparator = "info";
    bool pass = true;
};

Record make_record(std::string metric, double value, std::string comparator, std::optional<double> tolerance = {});
Record info_record(std::string metric, double value);
bool verdict(const Record& r);

struct ExperimentResult {
    std::string type;
    std::string name;
    std::vector<Record> records;
    std::vector<std::string> artifacts;
    std::vector<std::string> notes;
    /// Set when the experiment aborted (numerical failure).
    std::optional<std::string> error;

    bool pass() const;
};

struct Report {
    int format_version = kReportFormatVersion;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string started_at;
    std::string finished_at;
    unsigned threads = 1;
    std::vector<ExperimentResult> experiments;

    bool pass() const;
    Json to_json() const;
    static Report from_json(const Json& j);
};

struct RunOptions {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    /// Directory for report.json and CSV/binary artifacts; empty writes nothing.
    std::string out_dir;
    /// Run only experiments of this type (CLI subcommands).
    std::optional<std::string> only_type;
};

struct RunOutcome {
    Report report;
    /// 0 all PASS, 1 numeric failure or FAIL verdict, 2 schema violation.
    int exit_code = 0;
    std::string message;
};

/// FNV-1a 64-bit hash of the canonical (sorted-key) JSON dump, as 16 hex digits.
std::string config_hash(const Json& config);

/// Experiment types understood by `run`, in documentation order.
const std::vector<std::string>& experiment_types();

/// Parses and validates every experiment, then runs them in order.
RunOutcome run(const Json& config, const RunOptions& opts = {});

/// Reads a config file; parse failures become exit code 2.
RunOutcome run_file(const std::string& path, const RunOptions& opts = {});

/// Schema validation only. Throws ConfigError.
void validate_config(const Json& config);

Json load_json_file(const std::string& path);

/// Every record's `pass` equals its recomputed verdict.
bool verdicts_consistent(const Report& r);

}  // namespace bsdelab
