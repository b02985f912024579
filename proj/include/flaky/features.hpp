#pragma once

// Structured features of a failed job across the developer, code-change and
// project/context dimensions.
//
// change.json (per build, optional):
//   {"schema_version": 1,
//    "author": "alice", "committer": "alice",
//    "commits": [{"sha": "...", "author": "...", "committer": "...",
//                 "message": "fix: ...", "timestamp": "..."}],
//    "files": [{"path": "core/src/main/java/A.java",
//               "status": "added|deleted|modified|renamed",
//               "additions": 3, "deletions": 1,
//               "before": "<source or null>", "after": "<source or null>"}],
//    "repo": {"sloc": 12000, "test_lines": 4000, "dependencies_count": 31,
//             "committer_cross_project_commits": 12},
//    "pr_comments": 2}
//
// The head commit is the last entry of "commits". Missing fields fall back
// to neutral defaults: 0 for counts, 0.5 for trust, "unknown" categories.

#include "flaky/diagnostics.hpp"
#include "flaky/ingestion.hpp"
#include "flaky/java_decl.hpp"
#include "flaky/learners.hpp"
#include "flaky/taxonomy.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace flaky {

struct CommitInfo {
    std::string sha;
    std::string author;
    std::string committer;
    std::string message;
    std::optional<Timestamp> timestamp;
};

struct FileChange {
    std::string path;
    std::string status = "modified";
    int additions = 0;
    int deletions = 0;
    std::optional<std::string> before;
    std::optional<std::string> after;
};

struct ChangeContext {
    std::string author;
    std::string committer;
    std::vector<CommitInfo> commits;
    std::vector<FileChange> files;
    std::optional<double> sloc;
    std::optional<double> test_lines;
    std::optional<double> dependencies_count;
    std::optional<double> committer_cross_project_commits;
    std::optional<double> pr_comments;

    static ChangeContext from_json(const nlohmann::json& doc);  // throws StructuralInputError
    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] std::string head_committer() const;
};

// --- small pure helpers ------------------------------------------------------

// (successes + 1) / (total + 2). Throws ContractError unless
// 0 <= successes <= total.
double trust_score(int successes, int total);

// Base-2 entropy of churn proportions; 0 for one file or zero churn.
double change_entropy(const std::vector<double>& per_file_churn);

bool is_test_path(const std::string& path);
bool is_dependency_manifest(const std::string& path);
bool is_dockerfile(const std::string& path);
// First path component, or "" for files at the root.
std::string module_of(const std::string& path);

// Categorical vocabularies, each ending in "unknown".
const std::vector<std::string>& commit_types();  // fix feat chore refactor test docs other unknown
const std::vector<std::string>& error_step_types();
const std::vector<std::string>& runner_types();  // hosted self-hosted unknown
const std::vector<std::string>& os_types();  // linux windows macos unknown

// Conventional-commit prefix of a message ("fix(core): x" -> "fix").
std::string commit_type(const std::string& message);
// Keyword table over step names.
std::string error_step_type(const std::string& step_name);

struct TestCounts {
    double ran = 0;
    double passed = 0;
    double failed = 0;
};

// Sums Maven/Gradle/JUnit/pytest summaries found in the log.
TestCounts parse_test_counts(std::string_view log);

// --- repository history ------------------------------------------------------

struct HistoryBuild {
    std::int64_t build_id = 0;
    Timestamp start{};
    bool completed = false;
    bool failed = false;  // first attempt concluded failure
    bool succeeded = false;
    std::string committer;
    std::vector<std::string> commit_shas;
    std::vector<std::string> commit_authors;
    std::vector<std::string> files;
    struct Job {
        std::string name;
        Timestamp start{};
        Timestamp end{};
        std::vector<std::string> labels;
    };
    std::vector<Job> jobs;  // first-attempt jobs
};

// Read-only per-repository build archive ordered by start time.
class RepoHistory {
public:
    static RepoHistory from_corpus(const Corpus& corpus);
    void add(const std::string& repo, HistoryBuild build);

    // Builds of repo that started strictly before t.
    [[nodiscard]] std::vector<const HistoryBuild*> before(const std::string& repo, Timestamp t) const;

private:
    std::map<std::string, std::vector<HistoryBuild>> repos_;
};

HistoryBuild history_entry(const CorpusBuild& build);

// Failed completed builds / completed builds in [as_of - window, as_of).
double fail_rate(const std::vector<const HistoryBuild*>& history, Millis window, Timestamp as_of);

// --- feature vector ----------------------------------------------------------

// Column names in export order; categorical features expand to
// "<name>=<category>" one-hot columns.
const std::vector<std::string>& feature_names();

struct StructuredFeatureVector {
    std::vector<double> values;  // parallel to feature_names()
    Diagnostics diagnostics;
    bool structural_fallback = false;  // some file needed the line-based diff

    [[nodiscard]] double get(std::string_view name) const;
};

struct JobInput {
    const CorpusBuild* build = nullptr;
    const JobRecord* job = nullptr;  // attempt-1 failed job
    std::string log;
};

StructuredFeatureVector extract(const JobInput& input, const ChangeContext& ctx, const RepoHistory& history,
                                const PatternLibrary& library = PatternLibrary::builtin());

// Context from the build's change.json, or an empty one.
ChangeContext change_context(const CorpusBuild& build, Diagnostics* diags = nullptr);

// CSV: header "job_ref,label,<feature names...>", one row per job.
void write_feature_csv(std::ostream& out, const std::vector<std::string>& job_refs, const std::vector<int>& labels,
                       const std::vector<StructuredFeatureVector>& rows);

}  // namespace flaky
