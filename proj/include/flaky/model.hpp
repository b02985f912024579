#pragma once

// GitHub Actions domain types and the rerun / flaky identification rules.

#include "flaky/time.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace flaky {

enum class Status { queued, pending, waiting, in_progress, completed };

enum class Conclusion {
    success,
    failure,
    startup_failure,
    action_required,
    neutral,
    cancelled,
    skipped,
};

inline constexpr Conclusion kAllConclusions[] = {
    Conclusion::success,         Conclusion::failure, Conclusion::startup_failure,
    Conclusion::action_required, Conclusion::neutral, Conclusion::cancelled,
    Conclusion::skipped,
};

std::string_view to_string(Status s);
std::string_view to_string(Conclusion c);
Status parse_status(std::string_view text);
// Accepts both "cancelled" and the "canceled" spelling.
Conclusion parse_conclusion(std::string_view text);

// Execution progress plus final result. The conclusion is present exactly when
// the status is completed.
class Outcome {
public:
    Outcome() = default;

    static Outcome completed(Conclusion c) { return Outcome(Status::completed, c); }
    static Outcome pending(Status s);
    // Validating constructor used by parsers.
    static Outcome make(Status s, std::optional<Conclusion> c);

    [[nodiscard]] Status status() const noexcept { return status_; }
    [[nodiscard]] const std::optional<Conclusion>& conclusion() const noexcept { return conclusion_; }

    [[nodiscard]] bool is(Conclusion c) const noexcept {
        return status_ == Status::completed && conclusion_ == c;
    }
    // Completed with a conclusion that represents an actual execution (not
    // startup_failure, action_required, cancelled or skipped).
    [[nodiscard]] bool is_conclusive() const noexcept;

    friend bool operator==(const Outcome&, const Outcome&) = default;

private:
    Outcome(Status s, std::optional<Conclusion> c) : status_(s), conclusion_(c) {}

    Status status_ = Status::queued;
    std::optional<Conclusion> conclusion_;
};

struct StepRecord {
    std::string name;
    int number = 0;
    Outcome outcome;

    friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct JobRecord {
    std::int64_t job_id = 0;
    std::int64_t build_id = 0;
    int attempt = 1;
    std::string name;
    Timestamp started_at{};
    Timestamp completed_at{};
    Outcome outcome;
    std::string log_ref;  // path relative to the build directory
    std::vector<std::string> labels;  // runner labels, e.g. "ubuntu-latest", "self-hosted"
    std::string runner_name;
    std::vector<StepRecord> steps;

    [[nodiscard]] Millis duration() const { return completed_at - started_at; }

    friend bool operator==(const JobRecord&, const JobRecord&) = default;
};

struct BuildRecord {
    std::int64_t build_id = 0;
    std::string repo;  // owner/name
    int run_attempt = 1;
    std::string trigger_event;
    Timestamp started_at{};  // run_started_at
    Timestamp updated_at{};
    Outcome outcome;
    std::string head_sha;
    std::string workflow_name;
    std::vector<JobRecord> jobs;

    friend bool operator==(const BuildRecord&, const BuildRecord&) = default;
};

// All attempts of one build, ascending by run_attempt, consecutive from 1.
class RerunSequence {
public:
    RerunSequence() = default;
    // Sorts by run_attempt and validates: nonempty, same build_id everywhere,
    // attempts 1..n without gaps or duplicates, job attempts equal to their
    // build attempt. Job clock skew (completed_at < started_at) is kept so that
    // cost metrics can report it. Throws StructuralInputError.
    explicit RerunSequence(std::vector<BuildRecord> attempts);

    [[nodiscard]] std::int64_t build_id() const { return attempts_.front().build_id; }
    [[nodiscard]] const std::string& repo() const { return attempts_.front().repo; }
    [[nodiscard]] const std::vector<BuildRecord>& attempts() const noexcept { return attempts_; }
    [[nodiscard]] const BuildRecord& first() const { return attempts_.front(); }
    [[nodiscard]] const BuildRecord& last() const { return attempts_.back(); }
    [[nodiscard]] std::size_t size() const noexcept { return attempts_.size(); }

    friend bool operator==(const RerunSequence&, const RerunSequence&) = default;

private:
    std::vector<BuildRecord> attempts_;
};

// Cross-attempt identity of a job: its name plus a positional index among
// same-named jobs of one attempt. Rendered as "name" or "name#2".
struct JobKey {
    std::string name;
    int occurrence = 0;

    [[nodiscard]] std::string str() const;
    friend auto operator<=>(const JobKey&, const JobKey&) = default;
};

// Job keys of one attempt, parallel to attempt.jobs.
std::vector<JobKey> job_keys(const BuildRecord& attempt);

// Corpus-wide job identity: "<owner>/<name>/<build_id>/<job key>".
std::string job_ref(const RerunSequence& seq, const JobKey& key);

// One job paired across the attempts that contain it.
struct PairedJob {
    JobKey key;
    std::vector<const JobRecord*> runs;  // ascending by attempt
};

std::vector<PairedJob> pair_jobs(const RerunSequence& seq);

struct NotRerun {
    friend bool operator==(const NotRerun&, const NotRerun&) = default;
};
struct Rerun {
    int count = 0;
    friend bool operator==(const Rerun&, const Rerun&) = default;
};
using RerunClass = std::variant<NotRerun, Rerun>;

RerunClass classify_rerun(const RerunSequence& seq);

bool is_flaky_job(std::span<const Outcome> outcomes_across_attempts);

struct FlakyVerdict {
    bool build_is_rerun = false;
    bool build_is_flaky = false;
    std::set<std::string> flaky_job_ids;  // JobKey::str() of each flaky job
    bool approval_rerun = false;
};

FlakyVerdict judge_build(const RerunSequence& seq);

std::vector<RerunSequence> filter_approval_reruns(std::vector<RerunSequence> seqs);

}  // namespace flaky
