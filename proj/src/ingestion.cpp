#include "flaky/ingestion.hpp"

#include "flaky/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

namespace flaky {

using nlohmann::json;

namespace {

std::string ts_or_null(Timestamp ts) { return format_timestamp(ts); }

json outcome_fields(json doc, const Outcome& o) {
    doc["status"] = std::string(to_string(o.status()));
    if (o.conclusion()) {
        doc["conclusion"] = std::string(to_string(*o.conclusion()));
    } else {
        doc["conclusion"] = nullptr;
    }
    return doc;
}

Outcome outcome_from(const json& doc) {
    const auto status = parse_status(doc.at("status").get<std::string>());
    std::optional<Conclusion> conclusion;
    if (doc.contains("conclusion") && !doc["conclusion"].is_null()) {
        conclusion = parse_conclusion(doc["conclusion"].get<std::string>());
    }
    if (status != Status::completed) {
        conclusion.reset();
    } else if (!conclusion) {
        throw StructuralInputError("completed record without conclusion");
    }
    return Outcome::make(status, conclusion);
}

Timestamp timestamp_field(const json& doc, const char* name, std::optional<Timestamp> fallback = std::nullopt) {
    if (!doc.contains(name) || doc[name].is_null()) {
        if (fallback) return *fallback;
        throw StructuralInputError(std::string("missing timestamp field ") + name);
    }
    return parse_timestamp(doc[name].get<std::string>());
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw StructuralInputError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw StructuralInputError(p.string() + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

bool all_digits(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; });
}

}  // namespace

json build_to_json(const BuildRecord& b) {
    json doc;
    doc["id"] = b.build_id;
    doc["name"] = b.workflow_name;
    doc["run_attempt"] = b.run_attempt;
    doc["event"] = b.trigger_event;
    doc["head_sha"] = b.head_sha;
    doc["run_started_at"] = ts_or_null(b.started_at);
    doc["updated_at"] = ts_or_null(b.updated_at);
    doc["repository"] = {{"full_name", b.repo}};
    return outcome_fields(std::move(doc), b.outcome);
}

BuildRecord build_from_json(const json& doc) {
    try {
        BuildRecord b;
        b.build_id = doc.at("id").get<std::int64_t>();
        b.run_attempt = doc.value("run_attempt", 1);
        if (b.run_attempt < 1) throw StructuralInputError("run_attempt must be >= 1");
        b.workflow_name = doc.value("name", std::string{});
        b.trigger_event = doc.value("event", std::string{});
        b.head_sha = doc.value("head_sha", std::string{});
        b.repo = doc.at("repository").at("full_name").get<std::string>();
        b.updated_at = timestamp_field(doc, "updated_at");
        b.started_at = timestamp_field(doc, "run_started_at", b.updated_at);
        b.outcome = outcome_from(doc);
        return b;
    } catch (const json::exception& e) {
        throw StructuralInputError(std::string("malformed build document: ") + e.what());
    }
}

json jobs_to_json(const std::vector<JobRecord>& jobs) {
    json arr = json::array();
    for (const auto& j : jobs) {
        json doc;
        doc["id"] = j.job_id;
        doc["run_id"] = j.build_id;
        doc["run_attempt"] = j.attempt;
        doc["name"] = j.name;
        doc["started_at"] = ts_or_null(j.started_at);
        doc["completed_at"] = ts_or_null(j.completed_at);
        doc["labels"] = j.labels;
        doc["runner_name"] = j.runner_name;
        json steps = json::array();
        for (const auto& s : j.steps) {
            steps.push_back(outcome_fields({{"name", s.name}, {"number", s.number}}, s.outcome));
        }
        doc["steps"] = std::move(steps);
        arr.push_back(outcome_fields(std::move(doc), j.outcome));
    }
    return {{"total_count", jobs.size()}, {"jobs", std::move(arr)}};
}

std::vector<JobRecord> jobs_from_json(const json& doc, int attempt) {
    try {
        std::vector<JobRecord> jobs;
        for (const auto& item : doc.at("jobs")) {
            JobRecord j;
            j.job_id = item.at("id").get<std::int64_t>();
            j.build_id = item.at("run_id").get<std::int64_t>();
            j.attempt = item.value("run_attempt", attempt);
            j.name = item.at("name").get<std::string>();
            j.started_at = timestamp_field(item, "started_at");
            j.completed_at = timestamp_field(item, "completed_at", j.started_at);
            j.outcome = outcome_from(item);
            if (item.contains("labels") && item["labels"].is_array()) {
                j.labels = item["labels"].get<std::vector<std::string>>();
            }
            if (item.contains("runner_name") && item["runner_name"].is_string()) {
                j.runner_name = item["runner_name"].get<std::string>();
            }
            if (item.contains("steps") && item["steps"].is_array()) {
                for (const auto& s : item["steps"]) {
                    j.steps.push_back({s.value("name", std::string{}), s.value("number", 0), outcome_from(s)});
                }
            }
            j.log_ref = std::to_string(j.attempt) + "/" + std::to_string(j.job_id) + ".log";
            jobs.push_back(std::move(j));
        }
        return jobs;
    } catch (const json::exception& e) {
        throw StructuralInputError(std::string("malformed job document: ") + e.what());
    }
}

fs::path build_dir(const fs::path& root, const std::string& repo, std::int64_t build_id) {
    return root / fs::path(repo) / std::to_string(build_id);
}

void write_build(const fs::path& root, const RerunSequence& seq, const std::map<std::int64_t, std::string>& logs,
                 const std::optional<json>& change) {
    const auto dir = build_dir(root, seq.repo(), seq.build_id());
    for (const auto& attempt : seq.attempts()) {
        const auto adir = dir / std::to_string(attempt.run_attempt);
        fs::create_directories(adir);
        write_text(adir / "build.json", build_to_json(attempt).dump(2) + "\n");
        write_text(adir / "jobs.json", jobs_to_json(attempt.jobs).dump(2) + "\n");
        for (const auto& job : attempt.jobs) {
            const auto it = logs.find(job.job_id);
            write_text(adir / (std::to_string(job.job_id) + ".log"), it == logs.end() ? std::string{} : it->second);
        }
    }
    if (change) {
        write_text(dir / "change.json", change->dump(2) + "\n");
    }
}

std::vector<RerunSequence> Corpus::sequences() const {
    std::vector<RerunSequence> out;
    out.reserve(builds.size());
    for (const auto& b : builds) out.push_back(b.seq);
    return out;
}

CorpusBuild load_build(const fs::path& dir, Diagnostics* diags) {
    if (!fs::is_directory(dir)) throw StructuralInputError("build directory not found: " + dir.string());
    std::vector<BuildRecord> attempts;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory() || !all_digits(entry.path().filename().string())) continue;
        const int attempt_no = std::stoi(entry.path().filename().string());
        const auto jobs_path = entry.path() / "jobs.json";
        if (!fs::exists(jobs_path)) {
            throw StructuralInputError("missing job-level document " + jobs_path.string());
        }
        auto build = build_from_json(read_json(entry.path() / "build.json"));
        if (build.run_attempt != attempt_no) {
            throw StructuralInputError("attempt directory " + std::to_string(attempt_no) + " holds run_attempt " +
                                       std::to_string(build.run_attempt));
        }
        build.jobs = jobs_from_json(read_json(jobs_path), attempt_no);
        for (auto& job : build.jobs) {
            if (!fs::exists(dir / job.log_ref)) {
                if (diags) {
                    diags->push_back({(dir / job.log_ref).string(), "dangling log reference; empty log substituted"});
                }
                job.log_ref.clear();
            }
        }
        attempts.push_back(std::move(build));
    }
    if (attempts.empty()) throw StructuralInputError("no attempt directories in " + dir.string());
    CorpusBuild cb{RerunSequence(std::move(attempts)), dir, std::nullopt};
    if (fs::exists(dir / "change.json")) cb.change = read_json(dir / "change.json");
    return cb;
}

Corpus load_corpus(const fs::path& root) {
    Corpus corpus;
    corpus.root = root;
    if (!fs::is_directory(root)) {
        throw StructuralInputError("corpus root is not a directory: " + root.string());
    }
    // Build directories sit at depth 3: owner/name/build_id.
    std::vector<fs::path> dirs;
    for (const auto& owner : fs::directory_iterator(root)) {
        if (!owner.is_directory()) continue;
        for (const auto& name : fs::directory_iterator(owner.path())) {
            if (!name.is_directory()) continue;
            for (const auto& build : fs::directory_iterator(name.path())) {
                if (build.is_directory() && all_digits(build.path().filename().string())) {
                    dirs.push_back(build.path());
                }
            }
        }
    }
    for (const auto& dir : dirs) {
        try {
            corpus.builds.push_back(load_build(dir, &corpus.diagnostics));
        } catch (const Error& e) {
            corpus.diagnostics.push_back({dir.string(), std::string("build skipped: ") + e.what()});
        }
    }
    std::sort(corpus.builds.begin(), corpus.builds.end(), [](const CorpusBuild& a, const CorpusBuild& b) {
        return std::make_pair(a.seq.repo(), a.seq.build_id()) < std::make_pair(b.seq.repo(), b.seq.build_id());
    });
    return corpus;
}

std::string read_log(const CorpusBuild& build, const JobRecord& job) {
    if (job.log_ref.empty()) return {};
    const auto p = build.dir / job.log_ref;
    if (!fs::exists(p)) return {};
    return slurp(p);
}

// --- fetcher -----------------------------------------------------------------

void FetchPolicy::validate() const {
    if (page_size < 1 || page_size > 100) throw ContractError("page_size must be in [1,100]");
    if (max_retries < 0) throw ContractError("max_retries must be >= 0");
}

FetchClock FetchClock::system() {
    return {[] {
                return static_cast<std::int64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                                     std::chrono::system_clock::now().time_since_epoch())
                                                     .count());
            },
            [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }};
}

GitHubFetcher::GitHubFetcher(HttpTransport& transport, std::string token, FetchPolicy policy, FetchClock clock)
    : transport_(transport), token_(std::move(token)), policy_(policy), clock_(std::move(clock)) {
    policy_.validate();
}

void GitHubFetcher::wait_for_quota() {
    if (!remaining_ || *remaining_ >= policy_.rate_limit_floor) return;
    const auto now = clock_.now_epoch_seconds();
    const auto reset = reset_at_.value_or(now + 60);
    const auto wait_s = std::max<long long>(1, reset - now + 1);
    clock_.sleep(std::chrono::seconds(wait_s));
    ++stats_.waits;
    // After the reset instant the window is fresh; the next response refreshes it.
    remaining_.reset();
}

std::map<std::string, std::string> github_headers(const std::string& token) {
    std::map<std::string, std::string> headers{{"Accept", "application/vnd.github+json"},
                                               {"X-GitHub-Api-Version", "2022-11-28"},
                                               {"User-Agent", "flakedetect"}};
    if (!token.empty()) headers["Authorization"] = "Bearer " + token;
    return headers;
}

HttpResponse GitHubFetcher::request(const std::string& path) {
    const auto headers = github_headers(token_);
    for (int attempt = 0;; ++attempt) {
        wait_for_quota();
        ++stats_.requests;
        HttpResponse resp;
        try {
            resp = transport_.get(path, headers);
        } catch (const TransportError&) {
            if (attempt >= policy_.max_retries) throw;
            clock_.sleep(policy_.backoff_base * (1LL << attempt));
            continue;
        }
        if (auto it = resp.headers.find("x-ratelimit-remaining"); it != resp.headers.end()) {
            remaining_ = std::stoll(it->second);
        }
        if (auto it = resp.headers.find("x-ratelimit-reset"); it != resp.headers.end()) {
            reset_at_ = std::stoll(it->second);
        }
        const bool quota_exhausted = (resp.status == 403 || resp.status == 429) && remaining_ && *remaining_ == 0;
        if (quota_exhausted && attempt < policy_.max_retries) {
            continue;  // wait_for_quota() pauses until the reset before retrying
        }
        if (resp.status >= 500 && attempt < policy_.max_retries) {
            clock_.sleep(policy_.backoff_base * (1LL << attempt));
            continue;
        }
        return resp;
    }
}

FetchStats GitHubFetcher::fetch_repo_history(const std::string& repo, Timestamp since,
                                             const std::optional<fs::path>& out_root,
                                             const std::function<void(const RerunSequence&)>& sink) {
    stats_ = {};
    const std::string base = "/repos/" + repo + "/actions";
    const std::string per_page = "per_page=" + std::to_string(policy_.page_size);

    std::vector<json> runs;
    for (int page = 1;; ++page) {
        const auto resp = request(base + "/runs?" + per_page + "&page=" + std::to_string(page));
        if (resp.status == 404 || resp.status == 410) throw RepoUnavailable(repo, resp.status);
        if (resp.status != 200) {
            throw TransportError("listing runs of " + repo + " failed with HTTP " + std::to_string(resp.status));
        }
        json doc;
        try {
            doc = json::parse(resp.body);
        } catch (const json::exception& e) {
            throw TransportError("unparseable run listing for " + repo + ": " + e.what());
        }
        const auto& items = doc.value("workflow_runs", json::array());
        for (const auto& r : items) runs.push_back(r);
        const auto total = doc.value("total_count", static_cast<std::int64_t>(runs.size()));
        if (items.empty() || static_cast<int>(items.size()) < policy_.page_size ||
            static_cast<std::int64_t>(runs.size()) >= total) {
            break;
        }
    }
    stats_.runs_listed = static_cast<int>(runs.size());

    for (const auto& run : runs) {
        std::int64_t run_id = 0;
        try {
            run_id = run.at("id").get<std::int64_t>();
            const auto latest = build_from_json(run);
            if (latest.updated_at <= since) continue;

            std::vector<BuildRecord> attempts;
            std::map<std::int64_t, std::string> logs;
            for (int a = 1; a <= latest.run_attempt; ++a) {
                const auto apath = base + "/runs/" + std::to_string(run_id) + "/attempts/" + std::to_string(a);
                const auto aresp = request(apath);
                if (aresp.status != 200) {
                    throw StructuralInputError("attempt " + std::to_string(a) + " unavailable (HTTP " +
                                               std::to_string(aresp.status) + ")");
                }
                auto build = build_from_json(json::parse(aresp.body));
                json all_jobs = json::array();
                for (int page = 1;; ++page) {
                    const auto jresp = request(apath + "/jobs?" + per_page + "&page=" + std::to_string(page));
                    if (jresp.status != 200) {
                        throw StructuralInputError("jobs of attempt " + std::to_string(a) + " unavailable");
                    }
                    const auto jdoc = json::parse(jresp.body);
                    const auto& items = jdoc.value("jobs", json::array());
                    for (const auto& j : items) all_jobs.push_back(j);
                    const auto total = jdoc.value("total_count", static_cast<std::int64_t>(all_jobs.size()));
                    if (items.empty() || static_cast<int>(items.size()) < policy_.page_size ||
                        static_cast<std::int64_t>(all_jobs.size()) >= total) {
                        break;
                    }
                }
                build.jobs = jobs_from_json(json{{"jobs", all_jobs}}, a);
                for (const auto& job : build.jobs) {
                    const auto lresp = request(base + "/jobs/" + std::to_string(job.job_id) + "/logs");
                    if (lresp.status == 200) {
                        logs[job.job_id] = lresp.body;
                    } else {
                        stats_.warnings.push_back({repo + "#" + std::to_string(run_id),
                                                   "log of job " + std::to_string(job.job_id) + " unavailable (HTTP " +
                                                       std::to_string(lresp.status) + "); empty log stored"});
                    }
                }
                attempts.push_back(std::move(build));
            }
            RerunSequence seq(std::move(attempts));
            if (out_root) write_build(*out_root, seq, logs);
            ++stats_.builds_written;
            sink(seq);
        } catch (const json::exception& e) {
            stats_.warnings.push_back({repo + "#" + std::to_string(run_id), std::string("record skipped: ") + e.what()});
        } catch (const StructuralInputError& e) {
            stats_.warnings.push_back({repo + "#" + std::to_string(run_id), std::string("record skipped: ") + e.what()});
        }
    }
    return stats_;
}

}  // namespace flaky
