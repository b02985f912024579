#pragma once

// Failure-message extraction, generalization into wildcard patterns, and
// classification against an ordered pattern library.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flaky {

enum class FailureCategory {
    FlakyTest,
    NetworkIssue,
    DependencyResolution,
    ExternalEnvironmentInconsistency,
    ApiServiceUnavailable,
    ConcurrencyIssue,
    CompilationError,
    ExecutionCrash,
    FileSystemInteractionError,
    StaticAnalysisError,
    MemoryLimit,
    // Long-tail categories; provisional names.
    TimeoutExceeded,
    CacheIssue,
    ContainerIssue,
    RunnerCommunication,
};

inline constexpr std::size_t kCategoryCount = 15;

std::string_view to_string(FailureCategory c);
FailureCategory parse_category(std::string_view name);  // throws ContractError
const std::vector<FailureCategory>& all_categories();

// Informational annotations (root causes and mitigations); never consulted by
// matching.
struct CategoryInfo {
    FailureCategory category;
    std::string description;
    std::vector<std::string> root_causes;
    std::vector<std::string> mitigations;
    bool provisional = false;
};

const CategoryInfo& category_info(FailureCategory c);

class FailurePattern {
public:
    // Throws ContractError when the regex does not compile or carries a greedy
    // wildcard (".*" / ".+" without a trailing "?").
    FailurePattern(std::string id, std::string regex, FailureCategory category, std::string provenance = {});

    [[nodiscard]] const std::string& id() const noexcept { return id_; }
    [[nodiscard]] const std::string& regex() const noexcept { return regex_; }
    [[nodiscard]] FailureCategory category() const noexcept { return category_; }
    [[nodiscard]] const std::string& provenance() const noexcept { return provenance_; }

    // Whole-line match.
    [[nodiscard]] bool matches(std::string_view line) const;

private:
    struct Compiled;

    std::string id_;
    std::string regex_;
    FailureCategory category_;
    std::string provenance_;
    std::shared_ptr<const Compiled> compiled_;
};

// Ordered most-specific-first; the first matching entry wins.
//
// File schema:
//   {"schema_version": 1,
//    "patterns": [{"id": "...", "regex": "...", "category": "NetworkIssue",
//                  "provenance": "..."}, ...]}
class PatternLibrary {
public:
    PatternLibrary() = default;
    explicit PatternLibrary(std::vector<FailurePattern> patterns);

    static PatternLibrary from_json(const nlohmann::json& doc);
    static PatternLibrary load(const std::filesystem::path& file);
    // The library shipped in data/failure_patterns.json, compiled in.
    static const PatternLibrary& builtin();

    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] const std::vector<FailurePattern>& patterns() const noexcept { return patterns_; }
    [[nodiscard]] bool empty() const noexcept { return patterns_.empty(); }

private:
    std::vector<FailurePattern> patterns_;
};

inline constexpr std::size_t kTailWindowLines = 200;

// Removes the "2024-01-02T03:04:05.1234567Z " prefix GitHub writes on every
// log line.
std::string_view strip_runner_timestamp(std::string_view line);

bool is_failure_indicative(std::string_view line);

// Failure-indicative lines among the last kTailWindowLines lines, joined by
// '\n'. Empty when there are none.
std::string extract_failure_message(std::string_view raw_log);

// Replaces variable tokens (URLs, paths and owner/name slugs, versions,
// timestamps, hex and numeric IDs) with ".*?" and escapes the rest. The
// result is a whole-string regex that matches the input. Idempotent when its
// output is fed back in.
std::string generalize(std::string_view message);

struct MatchResult {
    struct Hit {
        std::string pattern_id;
        FailureCategory category;
    };
    std::optional<Hit> matched;
    std::string message;
    std::optional<std::string> unmatched_reason;
};

MatchResult match(std::string_view message, const PatternLibrary& library);

// extract_failure_message followed by match; unmatched_reason distinguishes a
// log without failure-indicative lines.
MatchResult classify_log(std::string_view raw_log, const PatternLibrary& library);

struct UnmatchedSample {
    std::size_t log_index;
    std::string message;
    std::string reason;
};

struct CoverageReport {
    std::size_t matched_count = 0;
    std::size_t unmatched_count = 0;
    std::vector<UnmatchedSample> unmatched_samples;  // at most sample_size, seeded
};

CoverageReport coverage_report(const std::vector<std::string>& raw_logs, const PatternLibrary& library,
                               std::uint64_t seed, std::size_t sample_size = 10);

}  // namespace flaky
