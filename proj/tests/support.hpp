#pragma once

// Fixture builders shared by the test binaries.

#include "flaky/model.hpp"
#include "flaky/time.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace flaky::test {

inline Timestamp at(const char* iso) { return parse_timestamp(iso); }

inline Timestamp t0() { return at("2024-03-01T10:00:00Z"); }

inline JobRecord job(std::int64_t id, const std::string& name, Outcome o, Timestamp start = t0(),
                     Timestamp end = t0() + std::chrono::minutes(1)) {
    JobRecord j;
    j.job_id = id;
    j.name = name;
    j.outcome = o;
    j.started_at = start;
    j.completed_at = end;
    j.log_ref = std::to_string(id) + ".log";
    return j;
}

inline JobRecord job(std::int64_t id, const std::string& name, Conclusion c, Timestamp start = t0(),
                     Timestamp end = t0() + std::chrono::minutes(1)) {
    return job(id, name, Outcome::completed(c), start, end);
}

inline BuildRecord attempt(int n, std::vector<JobRecord> jobs, Conclusion c = Conclusion::failure,
                           Timestamp start = t0(), Timestamp end = t0() + std::chrono::minutes(5),
                           std::int64_t build_id = 42, const std::string& repo = "acme/widget") {
    BuildRecord b;
    b.build_id = build_id;
    b.repo = repo;
    b.run_attempt = n;
    b.trigger_event = "push";
    b.started_at = start;
    b.updated_at = end;
    b.outcome = Outcome::completed(c);
    b.head_sha = "abc123";
    b.workflow_name = "CI";
    for (auto& j : jobs) {
        j.attempt = n;
        j.build_id = build_id;
        j.log_ref = std::to_string(n) + "/" + std::to_string(j.job_id) + ".log";
    }
    b.jobs = std::move(jobs);
    return b;
}

// Per-job conclusions for each attempt; job i is named "j<i>".
inline RerunSequence sequence(const std::vector<std::vector<Conclusion>>& per_attempt) {
    std::vector<BuildRecord> attempts;
    std::int64_t id = 1;
    for (std::size_t a = 0; a < per_attempt.size(); ++a) {
        std::vector<JobRecord> jobs;
        bool any_fail = false;
        for (std::size_t j = 0; j < per_attempt[a].size(); ++j) {
            jobs.push_back(job(id++, "j" + std::to_string(j), per_attempt[a][j]));
            any_fail = any_fail || per_attempt[a][j] != Conclusion::success;
        }
        attempts.push_back(attempt(static_cast<int>(a + 1), std::move(jobs),
                                   any_fail ? Conclusion::failure : Conclusion::success));
    }
    return RerunSequence(std::move(attempts));
}

class TempDir {
public:
    TempDir() {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() / ("flaky-test-" + std::to_string(rng()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

private:
    std::filesystem::path path_;
};

inline std::filesystem::path data_dir() { return FLAKY_SOURCE_DIR "/data"; }

}  // namespace flaky::test
