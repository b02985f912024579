#pragma once

// In-memory GitHub Actions API serving a fixed set of builds.

#include "flaky/error.hpp"
#include "flaky/ingestion.hpp"

#include <json.hpp>

#include <deque>
#include <map>
#include <string>
#include <vector>

namespace flaky::test {

class FakeGitHub : public HttpTransport {
public:
    struct Build {
        RerunSequence seq;
        std::map<std::int64_t, std::string> logs;
    };

    std::string repo = "acme/widget";
    std::vector<Build> builds;
    int missing_status = 0;  // nonzero: every listing answers with it
    std::vector<std::string> requests;
    // Quota header values handed out in order; the last one repeats.
    std::deque<long long> remaining;
    long long reset_at = 0;
    // Paths answering a one-off status before normal service.
    std::map<std::string, std::deque<int>> hiccups;
    std::map<std::int64_t, nlohmann::json> run_overrides;

    HttpResponse get(const std::string& path, const std::map<std::string, std::string>& headers) override {
        (void)headers;
        requests.push_back(path);
        HttpResponse r;
        if (!remaining.empty()) {
            r.headers["x-ratelimit-remaining"] = std::to_string(remaining.front());
            r.headers["x-ratelimit-reset"] = std::to_string(reset_at);
            if (remaining.size() > 1) remaining.pop_front();
        }
        if (auto it = hiccups.find(strip_query(path)); it != hiccups.end() && !it->second.empty()) {
            r.status = it->second.front();
            it->second.pop_front();
            return r;
        }
        const std::string base = "/repos/" + repo + "/actions";
        if (path.rfind(base, 0) != 0) return status(r, 404);
        if (missing_status) return status(r, missing_status);
        const std::string rest = path.substr(base.size());
        const auto q = query(path);
        if (rest.rfind("/runs?", 0) == 0) {
            nlohmann::json items = nlohmann::json::array();
            const auto [lo, hi] = page_bounds(q, builds.size());
            for (std::size_t i = lo; i < hi; ++i) {
                const auto id = builds[i].seq.build_id();
                items.push_back(run_overrides.count(id) ? run_overrides[id] : build_to_json(builds[i].seq.last()));
            }
            r.body = nlohmann::json{{"total_count", builds.size()}, {"workflow_runs", items}}.dump();
            r.status = 200;
            return r;
        }
        if (rest.rfind("/jobs/", 0) == 0) {
            const auto id = std::stoll(rest.substr(6));
            for (const auto& b : builds) {
                if (auto it = b.logs.find(id); it != b.logs.end()) {
                    r.status = 200;
                    r.body = it->second;
                    return r;
                }
            }
            return status(r, 404);
        }
        if (rest.rfind("/runs/", 0) == 0) {
            const auto tail = strip_query(rest.substr(6));
            const auto run_id = std::stoll(tail);
            const auto slash = tail.find("/attempts/");
            if (slash == std::string::npos) return status(r, 404);
            const int attempt = std::stoi(tail.substr(slash + 10));
            for (const auto& b : builds) {
                if (b.seq.build_id() != run_id) continue;
                if (attempt < 1 || attempt > static_cast<int>(b.seq.size())) return status(r, 404);
                const auto& a = b.seq.attempts()[attempt - 1];
                r.status = 200;
                if (tail.find("/jobs") != std::string::npos) {
                    const auto all = jobs_to_json(a.jobs);
                    const auto [lo, hi] = page_bounds(q, a.jobs.size());
                    nlohmann::json items = nlohmann::json::array();
                    for (std::size_t i = lo; i < hi; ++i) items.push_back(all["jobs"][i]);
                    r.body = nlohmann::json{{"total_count", a.jobs.size()}, {"jobs", items}}.dump();
                } else {
                    r.body = build_to_json(a).dump();
                }
                return r;
            }
            return status(r, 404);
        }
        return status(r, 404);
    }

private:
    static HttpResponse& status(HttpResponse& r, int s) {
        r.status = s;
        r.body = R"({"message":"Not Found"})";
        return r;
    }
    static std::string strip_query(const std::string& p) { return p.substr(0, p.find('?')); }
    static std::map<std::string, int> query(const std::string& p) {
        std::map<std::string, int> out;
        const auto qpos = p.find('?');
        if (qpos == std::string::npos) return out;
        std::string q = p.substr(qpos + 1);
        std::size_t start = 0;
        while (start < q.size()) {
            auto amp = q.find('&', start);
            if (amp == std::string::npos) amp = q.size();
            const auto kv = q.substr(start, amp - start);
            const auto eq = kv.find('=');
            if (eq != std::string::npos) out[kv.substr(0, eq)] = std::stoi(kv.substr(eq + 1));
            start = amp + 1;
        }
        return out;
    }
    static std::pair<std::size_t, std::size_t> page_bounds(const std::map<std::string, int>& q, std::size_t n) {
        const auto per = static_cast<std::size_t>(q.count("per_page") ? q.at("per_page") : 30);
        const auto page = static_cast<std::size_t>(q.count("page") ? q.at("page") : 1);
        const auto lo = std::min(n, (page - 1) * per);
        return {lo, std::min(n, lo + per)};
    }
};

inline FetchClock fake_clock(std::int64_t* now, std::vector<std::chrono::milliseconds>* sleeps) {
    return {[now] { return *now; },
            [now, sleeps](std::chrono::milliseconds d) {
                sleeps->push_back(d);
                *now += std::chrono::duration_cast<std::chrono::seconds>(d).count();
            }};
}

}  // namespace flaky::test
