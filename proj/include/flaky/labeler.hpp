#pragma once

// Rerun-based ground truth for failed jobs: a job whose failure turns into a
// success under reruns of the same code version is flaky.

#include "flaky/diagnostics.hpp"
#include "flaky/ingestion.hpp"
#include "flaky/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace flaky {

enum class Label { flaky, non_flaky };

std::string_view to_string(Label l);

struct DeveloperRerunHistory {
    friend bool operator==(const DeveloperRerunHistory&, const DeveloperRerunHistory&) = default;
};
struct AutomatedRerun {
    int success_at = 0;  // 1-based index of the first successful rerun
    friend bool operator==(const AutomatedRerun&, const AutomatedRerun&) = default;
};
struct Exhausted {
    int max_reruns = 0;
    friend bool operator==(const Exhausted&, const Exhausted&) = default;
};
using Evidence = std::variant<DeveloperRerunHistory, AutomatedRerun, Exhausted>;

struct FlakyLabel {
    std::string job_ref;
    Label label = Label::non_flaky;
    Evidence evidence;
    int reruns_consumed = 0;
    int inconclusive = 0;  // oracle executions that observed nothing
    Diagnostics diagnostics;
};

class RerunOracle {
public:
    virtual ~RerunOracle() = default;
    // Called once before the reruns of one job.
    virtual void begin(const std::string& job_ref) { (void)job_ref; }
    // Reruns the job once. May throw TransportError.
    virtual Outcome execute(const std::string& job_ref) = 0;
};

// Replays predetermined outcomes per job. Script file:
//   {"schema_version": 1,
//    "scripts": {"<job_ref>": ["failure", "cancelled", "transport_error", "success"]}}
// Entries are conclusion names, non-completed status names (queued,
// in_progress, ...) or "transport_error". Each begin() rewinds that job's
// script; past its end a script keeps failing, and unknown jobs always fail.
class FixtureOracle final : public RerunOracle {
public:
    explicit FixtureOracle(std::map<std::string, std::vector<std::string>> scripts);
    static FixtureOracle load(const std::filesystem::path& file);
    static FixtureOracle from_json(const nlohmann::json& doc);

    void begin(const std::string& job_ref) override;
    Outcome execute(const std::string& job_ref) override;

    // Executions per job since construction, for auditing tests.
    [[nodiscard]] int calls(const std::string& job_ref) const;

private:
    std::map<std::string, std::vector<std::string>> scripts_;
    std::map<std::string, std::size_t> cursor_;
    std::map<std::string, int> calls_;
    mutable std::mutex mu_;
};

// Live reruns through the GitHub API: POST .../actions/jobs/{job_id}/rerun,
// then poll the run until the new attempt completes and read the job's
// conclusion from its jobs listing. A head_sha change between the original
// and the rerun attempt is reported through diagnostics().
class LiveRerunOracle final : public RerunOracle {
public:
    struct Target {
        std::string repo;
        std::int64_t run_id = 0;
        std::int64_t job_id = 0;
        std::string job_name;
        std::string head_sha;
    };

    LiveRerunOracle(HttpTransport& transport, std::string token, FetchClock clock = FetchClock::system(),
                    std::chrono::seconds poll_interval = std::chrono::seconds(30),
                    std::chrono::seconds poll_timeout = std::chrono::hours(6));

    void add_target(const std::string& job_ref, Target target);
    // Registers every initially failed job of the corpus.
    void add_corpus(const Corpus& corpus);

    Outcome execute(const std::string& job_ref) override;
    [[nodiscard]] Diagnostics diagnostics() const;

private:
    HttpResponse call(const std::string& method, const std::string& path);

    HttpTransport& transport_;
    std::string token_;
    FetchClock clock_;
    std::chrono::seconds poll_interval_;
    std::chrono::seconds poll_timeout_;
    std::map<std::string, Target> targets_;
    Diagnostics diagnostics_;
    mutable std::mutex mu_;
};

struct LabelOptions {
    int max_reruns = 10;
    // Inconclusive executions tolerated per job before it is left unlabeled.
    int max_inconclusive = 10;
    int jobs = 1;  // worker threads
    int per_repo_limit = 4;  // concurrent jobs per repository
};

// Initially failed jobs: completed failures in attempt 1.
struct FailedJob {
    std::string job_ref;
    const CorpusBuild* build = nullptr;
    JobKey key;
    const JobRecord* job = nullptr;  // attempt-1 record
};

std::vector<FailedJob> initially_failed_jobs(const Corpus& corpus);

// Throws ContractError when the job's first outcome is not a completed
// failure, and Error when the oracle stays inconclusive past the limit.
FlakyLabel label_job(const std::string& job_ref, const JobKey& key, const RerunSequence& history, RerunOracle& oracle,
                     const LabelOptions& options = {});

struct LabelSummary {
    std::size_t developer_rerun_history = 0;
    std::size_t automated_rerun = 0;
    std::size_t exhausted = 0;
    std::size_t unlabeled = 0;
};

struct LabelRun {
    std::vector<FlakyLabel> labels;  // in initially_failed_jobs order
    LabelSummary summary;
    Diagnostics diagnostics;
};

// Per-job failures become diagnostics; the batch always completes.
LabelRun label_corpus(const Corpus& corpus, RerunOracle& oracle, const LabelOptions& options = {});

// Seeded sample of exhausted (non_flaky) labels for manual audit.
std::vector<std::string> audit_sample(const std::vector<FlakyLabel>& labels, std::uint64_t seed,
                                      std::size_t size = 10);

// labels.json:
//   {"schema_version": 1, "seed": 7,
//    "labels": [{"job_ref": "...", "label": "flaky",
//                "evidence": {"type": "automated_rerun", "success_at": 2},
//                "reruns_consumed": 2}]}
nlohmann::json labels_to_json(const std::vector<FlakyLabel>& labels, std::uint64_t seed);
std::vector<FlakyLabel> labels_from_json(const nlohmann::json& doc);
// job_ref -> label, read from <root>/labels.json. Empty when absent.
std::map<std::string, Label> load_label_map(const std::filesystem::path& file);

}  // namespace flaky
