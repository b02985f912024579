#pragma once

// On-disk corpus layout and the GitHub Actions crawler that fills it.
//
//   <root>/<owner>/<name>/<build_id>/
//       change.json                  optional commit/diff context
//       <attempt>/build.json         run attempt object, upstream field names
//       <attempt>/jobs.json          {"total_count": n, "jobs": [...]}
//       <attempt>/<job_id>.log       raw job log, uncompressed
//   <root>/labels.json               optional flaky / non_flaky labels

#include "flaky/diagnostics.hpp"
#include "flaky/model.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace flaky {

namespace fs = std::filesystem;

// --- metadata documents ------------------------------------------------------

nlohmann::json build_to_json(const BuildRecord& build);
nlohmann::json jobs_to_json(const std::vector<JobRecord>& jobs);
// Both accept live API payloads. Throw StructuralInputError on missing or
// malformed fields.
BuildRecord build_from_json(const nlohmann::json& doc);
std::vector<JobRecord> jobs_from_json(const nlohmann::json& doc, int attempt);

// --- corpus ------------------------------------------------------------------

struct CorpusBuild {
    RerunSequence seq;
    fs::path dir;  // <root>/<owner>/<name>/<build_id>
    std::optional<nlohmann::json> change;  // change.json, when present
};

struct Corpus {
    fs::path root;
    std::vector<CorpusBuild> builds;  // ordered by (repo, build_id)
    Diagnostics diagnostics;

    [[nodiscard]] std::vector<RerunSequence> sequences() const;
};

// Loads every build below root. A build whose metadata is missing or
// malformed is skipped with a diagnostic; a dangling log reference becomes an
// empty log (log_ref cleared) with a diagnostic.
Corpus load_corpus(const fs::path& root);

// One <root>/<owner>/<name>/<build_id> directory. Throws
// StructuralInputError on missing or malformed metadata.
CorpusBuild load_build(const fs::path& dir, Diagnostics* diags = nullptr);

// Raw log text of a job in a loaded build; "" when the job has no log.
std::string read_log(const CorpusBuild& build, const JobRecord& job);

fs::path build_dir(const fs::path& root, const std::string& repo, std::int64_t build_id);

// Writes one build (all attempts) into the layout. logs maps job_id to text;
// jobs missing from it get an empty log file.
void write_build(const fs::path& root, const RerunSequence& seq, const std::map<std::int64_t, std::string>& logs,
                 const std::optional<nlohmann::json>& change = std::nullopt);

// --- GitHub REST crawler -----------------------------------------------------

struct HttpResponse {
    int status = 0;
    std::map<std::string, std::string> headers;  // lower-case names
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    // path_and_query is relative to the API base, e.g.
    // "/repos/o/r/actions/runs?per_page=100&page=1".
    virtual HttpResponse get(const std::string& path_and_query, const std::map<std::string, std::string>& headers) = 0;
    // Only the live rerun oracle posts; read-only fakes may leave this as is.
    virtual HttpResponse post(const std::string& path, const std::map<std::string, std::string>& headers,
                              const std::string& body);
};

// Request headers GitHub expects: Accept, API version, User-Agent and, when
// token is nonempty, a bearer Authorization.
std::map<std::string, std::string> github_headers(const std::string& token);

// cpp-httplib backed transport; follows redirects (log downloads redirect to
// blob storage). base_url like "https://api.github.com".
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url);

struct FetchPolicy {
    int page_size = 100;
    int max_retries = 3;
    std::chrono::milliseconds backoff_base{1000};
    int rate_limit_floor = 10;

    void validate() const;
};

// Time source and sleeper; injectable so tests never block.
struct FetchClock {
    std::function<std::int64_t()> now_epoch_seconds;
    std::function<void(std::chrono::milliseconds)> sleep;

    static FetchClock system();
};

struct FetchStats {
    int requests = 0;
    int runs_listed = 0;
    int builds_written = 0;
    int waits = 0;
    Diagnostics warnings;
};

class GitHubFetcher {
public:
    GitHubFetcher(HttpTransport& transport, std::string token, FetchPolicy policy,
                  FetchClock clock = FetchClock::system());

    // Streams every build of repo updated strictly after `since` (all attempts,
    // all jobs, all logs) to sink, writing each into out_root first when set.
    // Throws RepoUnavailable on 404/410 for the repository listing.
    FetchStats fetch_repo_history(const std::string& repo, Timestamp since, const std::optional<fs::path>& out_root,
                                  const std::function<void(const RerunSequence&)>& sink);

private:
    HttpResponse request(const std::string& path);
    void wait_for_quota();

    HttpTransport& transport_;
    std::string token_;
    FetchPolicy policy_;
    FetchClock clock_;
    std::optional<long long> remaining_;
    std::optional<long long> reset_at_;
    FetchStats stats_;
};

}  // namespace flaky
