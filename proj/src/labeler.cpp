#include "flaky/labeler.hpp"

#include "flaky/error.hpp"
#include "flaky/random.hpp"

#include <algorithm>
#include <condition_variable>
#include <fstream>
#include <thread>

namespace flaky {

using nlohmann::json;

std::string_view to_string(Label l) { return l == Label::flaky ? "flaky" : "non_flaky"; }

// --- fixture oracle ----------------------------------------------------------

FixtureOracle::FixtureOracle(std::map<std::string, std::vector<std::string>> scripts) : scripts_(std::move(scripts)) {
    for (const auto& [ref, steps] : scripts_) {
        for (const auto& step : steps) {
            if (step == "transport_error") continue;
            try {
                (void)parse_conclusion(step);
            } catch (const Error&) {
                (void)parse_status(step);  // throws for unknown words
            }
        }
    }
}

FixtureOracle FixtureOracle::from_json(const json& doc) {
    try {
        if (doc.value("schema_version", 0) != 1) throw ContractError("unsupported oracle script schema_version");
        std::map<std::string, std::vector<std::string>> scripts;
        for (const auto& [ref, steps] : doc.at("scripts").items()) {
            scripts[ref] = steps.get<std::vector<std::string>>();
        }
        return FixtureOracle(std::move(scripts));
    } catch (const json::exception& e) {
        throw ContractError(std::string("malformed oracle script: ") + e.what());
    }
}

FixtureOracle FixtureOracle::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ContractError("cannot open oracle script " + file.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ContractError(file.string() + ": " + e.what());
    }
}

void FixtureOracle::begin(const std::string& job_ref) {
    std::lock_guard lock(mu_);
    cursor_[job_ref] = 0;
}

Outcome FixtureOracle::execute(const std::string& job_ref) {
    std::string step = "failure";
    {
        std::lock_guard lock(mu_);
        ++calls_[job_ref];
        auto it = scripts_.find(job_ref);
        if (it != scripts_.end()) {
            auto& pos = cursor_[job_ref];
            if (pos < it->second.size()) step = it->second[pos++];
        }
    }
    if (step == "transport_error") throw TransportError("scripted transport failure for " + job_ref);
    try {
        return Outcome::completed(parse_conclusion(step));
    } catch (const Error&) {
        return Outcome::pending(parse_status(step));
    }
}

int FixtureOracle::calls(const std::string& job_ref) const {
    std::lock_guard lock(mu_);
    auto it = calls_.find(job_ref);
    return it == calls_.end() ? 0 : it->second;
}

// --- live oracle -------------------------------------------------------------

LiveRerunOracle::LiveRerunOracle(HttpTransport& transport, std::string token, FetchClock clock,
                                 std::chrono::seconds poll_interval, std::chrono::seconds poll_timeout)
    : transport_(transport),
      token_(std::move(token)),
      clock_(std::move(clock)),
      poll_interval_(poll_interval),
      poll_timeout_(poll_timeout) {}

void LiveRerunOracle::add_target(const std::string& job_ref, Target target) {
    std::lock_guard lock(mu_);
    targets_[job_ref] = std::move(target);
}

void LiveRerunOracle::add_corpus(const Corpus& corpus) {
    for (const auto& failed : initially_failed_jobs(corpus)) {
        const auto& first = failed.build->seq.first();
        add_target(failed.job_ref,
                   {first.repo, first.build_id, failed.job->job_id, failed.job->name, first.head_sha});
    }
}

Diagnostics LiveRerunOracle::diagnostics() const {
    std::lock_guard lock(mu_);
    return diagnostics_;
}

HttpResponse LiveRerunOracle::call(const std::string& method, const std::string& path) {
    const auto headers = github_headers(token_);
    auto resp = method == "POST" ? transport_.post(path, headers, "{}") : transport_.get(path, headers);
    if (resp.status >= 500 || resp.status == 429) {
        throw TransportError(method + " " + path + ": HTTP " + std::to_string(resp.status));
    }
    if (resp.status >= 400) {
        throw Error(method + " " + path + ": HTTP " + std::to_string(resp.status));
    }
    return resp;
}

Outcome LiveRerunOracle::execute(const std::string& job_ref) {
    Target target;
    {
        std::lock_guard lock(mu_);
        auto it = targets_.find(job_ref);
        if (it == targets_.end()) throw ContractError("no rerun target registered for " + job_ref);
        target = it->second;
    }
    const std::string run_path = "/repos/" + target.repo + "/actions/runs/" + std::to_string(target.run_id);
    auto parse = [](const HttpResponse& r) {
        try {
            return json::parse(r.body);
        } catch (const json::parse_error& e) {
            throw TransportError(std::string("malformed API payload: ") + e.what());
        }
    };
    const int before = parse(call("GET", run_path)).value("run_attempt", 1);
    call("POST", "/repos/" + target.repo + "/actions/jobs/" + std::to_string(target.job_id) + "/rerun");

    const auto deadline = clock_.now_epoch_seconds() + poll_timeout_.count();
    json run;
    for (;;) {
        clock_.sleep(poll_interval_);
        run = parse(call("GET", run_path));
        if (run.value("run_attempt", 1) > before && run.value("status", "") == "completed") break;
        if (clock_.now_epoch_seconds() >= deadline) return Outcome::pending(Status::in_progress);
    }
    const int attempt = run.value("run_attempt", before + 1);
    if (run.value("head_sha", target.head_sha) != target.head_sha) {
        std::lock_guard lock(mu_);
        diagnostics_.push_back({job_ref, "rerun attempt " + std::to_string(attempt) + " ran on a different head_sha"});
    }
    const auto jobs = parse(call("GET", run_path + "/attempts/" + std::to_string(attempt) + "/jobs?per_page=100"));
    for (const auto& j : jobs.value("jobs", json::array())) {
        if (j.value("name", "") != target.job_name) continue;
        const auto status = parse_status(j.value("status", "queued"));
        std::optional<Conclusion> conclusion;
        if (j.contains("conclusion") && j["conclusion"].is_string()) {
            conclusion = parse_conclusion(j["conclusion"].get<std::string>());
        }
        {
            std::lock_guard lock(mu_);
            targets_[job_ref].job_id = j.value("id", target.job_id);
        }
        return Outcome::make(status, conclusion);
    }
    throw Error("job " + target.job_name + " missing from rerun attempt " + std::to_string(attempt));
}

// --- labeling ----------------------------------------------------------------

std::vector<FailedJob> initially_failed_jobs(const Corpus& corpus) {
    std::vector<FailedJob> out;
    for (const auto& build : corpus.builds) {
        const auto& first = build.seq.first();
        const auto keys = job_keys(first);
        for (std::size_t i = 0; i < first.jobs.size(); ++i) {
            if (first.jobs[i].outcome.is(Conclusion::failure)) {
                out.push_back({job_ref(build.seq, keys[i]), &build, keys[i], &first.jobs[i]});
            }
        }
    }
    return out;
}

FlakyLabel label_job(const std::string& job_ref, const JobKey& key, const RerunSequence& history, RerunOracle& oracle,
                     const LabelOptions& options) {
    if (options.max_reruns < 0) throw ContractError("max_reruns must be nonnegative");
    const auto paired = pair_jobs(history);
    auto it = std::find_if(paired.begin(), paired.end(), [&](const PairedJob& p) { return p.key == key; });
    if (it == paired.end() || it->runs.front()->attempt != 1 || !it->runs.front()->outcome.is(Conclusion::failure)) {
        throw ContractError(job_ref + ": initial outcome is not a completed failure");
    }

    FlakyLabel label;
    label.job_ref = job_ref;
    const bool history_success = std::any_of(it->runs.begin() + 1, it->runs.end(),
                                             [](const JobRecord* j) { return j->outcome.is(Conclusion::success); });
    if (history_success) {
        label.label = Label::flaky;
        label.evidence = DeveloperRerunHistory{};
        return label;
    }

    oracle.begin(job_ref);
    while (label.reruns_consumed < options.max_reruns) {
        std::optional<Outcome> outcome;
        for (int attempt = 0; attempt < 2 && !outcome; ++attempt) {
            try {
                outcome = oracle.execute(job_ref);
            } catch (const TransportError& e) {
                if (attempt == 1) label.diagnostics.push_back({job_ref, e.what()});
            }
        }
        if (!outcome || !outcome->is_conclusive()) {
            if (++label.inconclusive > options.max_inconclusive) {
                throw Error(job_ref + ": oracle inconclusive " + std::to_string(label.inconclusive) + " times");
            }
            continue;
        }
        ++label.reruns_consumed;
        if (outcome->is(Conclusion::success)) {
            label.label = Label::flaky;
            label.evidence = AutomatedRerun{label.reruns_consumed};
            return label;
        }
    }
    label.label = Label::non_flaky;
    label.evidence = Exhausted{options.max_reruns};
    return label;
}

LabelRun label_corpus(const Corpus& corpus, RerunOracle& oracle, const LabelOptions& options) {
    const auto failed = initially_failed_jobs(corpus);
    std::vector<std::optional<FlakyLabel>> results(failed.size());
    std::vector<std::string> errors(failed.size());
    std::vector<bool> claimed(failed.size(), false);

    std::mutex mu;
    std::condition_variable cv;
    std::map<std::string, int> in_flight;
    const int limit = std::max(1, options.per_repo_limit);

    // Claims the first unclaimed job whose repository is under its cap.
    auto claim = [&]() -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < failed.size(); ++i) {
            if (!claimed[i] && in_flight[failed[i].build->seq.repo()] < limit) return i;
        }
        return std::nullopt;
    };

    auto worker = [&] {
        for (;;) {
            std::size_t idx = 0;
            {
                std::unique_lock lock(mu);
                std::optional<std::size_t> pick;
                cv.wait(lock, [&] {
                    if (std::find(claimed.begin(), claimed.end(), false) == claimed.end()) return true;
                    pick = claim();
                    return pick.has_value();
                });
                if (!pick) return;
                idx = *pick;
                claimed[idx] = true;
                ++in_flight[failed[idx].build->seq.repo()];
            }
            std::optional<FlakyLabel> label;
            std::string error;
            try {
                label = label_job(failed[idx].job_ref, failed[idx].key, failed[idx].build->seq, oracle, options);
            } catch (const Error& e) {
                error = e.what();
            }
            {
                std::lock_guard lock(mu);
                results[idx] = std::move(label);
                errors[idx] = std::move(error);
                --in_flight[failed[idx].build->seq.repo()];
            }
            cv.notify_all();
        }
    };

    const int threads = std::max(1, options.jobs);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    LabelRun run;
    for (std::size_t i = 0; i < failed.size(); ++i) {
        if (!results[i]) {
            run.diagnostics.push_back({failed[i].job_ref, errors[i]});
            ++run.summary.unlabeled;
            continue;
        }
        auto& label = *results[i];
        std::visit(
            [&](const auto& ev) {
                using T = std::decay_t<decltype(ev)>;
                if constexpr (std::is_same_v<T, DeveloperRerunHistory>) ++run.summary.developer_rerun_history;
                if constexpr (std::is_same_v<T, AutomatedRerun>) ++run.summary.automated_rerun;
                if constexpr (std::is_same_v<T, Exhausted>) ++run.summary.exhausted;
            },
            label.evidence);
        for (const auto& d : label.diagnostics) run.diagnostics.push_back(d);
        run.labels.push_back(std::move(label));
    }
    return run;
}

std::vector<std::string> audit_sample(const std::vector<FlakyLabel>& labels, std::uint64_t seed, std::size_t size) {
    std::vector<std::string> exhausted;
    for (const auto& l : labels) {
        if (std::holds_alternative<Exhausted>(l.evidence)) exhausted.push_back(l.job_ref);
    }
    Rng rng(seed);
    const auto k = std::min(size, exhausted.size());
    for (std::size_t i = 0; i < k; ++i) std::swap(exhausted[i], exhausted[i + rng.below(exhausted.size() - i)]);
    exhausted.resize(k);
    std::sort(exhausted.begin(), exhausted.end());
    return exhausted;
}

json labels_to_json(const std::vector<FlakyLabel>& labels, std::uint64_t seed) {
    json arr = json::array();
    for (const auto& l : labels) {
        json ev;
        std::visit(
            [&](const auto& e) {
                using T = std::decay_t<decltype(e)>;
                if constexpr (std::is_same_v<T, DeveloperRerunHistory>) ev = {{"type", "developer_rerun_history"}};
                if constexpr (std::is_same_v<T, AutomatedRerun>) {
                    ev = {{"type", "automated_rerun"}, {"success_at", e.success_at}};
                }
                if constexpr (std::is_same_v<T, Exhausted>) ev = {{"type", "exhausted"}, {"max_reruns", e.max_reruns}};
            },
            l.evidence);
        arr.push_back({{"job_ref", l.job_ref},
                       {"label", std::string(to_string(l.label))},
                       {"evidence", ev},
                       {"reruns_consumed", l.reruns_consumed}});
    }
    return {{"schema_version", 1}, {"seed", seed}, {"labels", std::move(arr)}};
}

std::vector<FlakyLabel> labels_from_json(const json& doc) {
    try {
        if (doc.value("schema_version", 0) != 1) throw ContractError("unsupported labels schema_version");
        std::vector<FlakyLabel> out;
        for (const auto& j : doc.at("labels")) {
            FlakyLabel l;
            l.job_ref = j.at("job_ref").get<std::string>();
            const auto name = j.at("label").get<std::string>();
            if (name != "flaky" && name != "non_flaky") throw ContractError("unknown label " + name);
            l.label = name == "flaky" ? Label::flaky : Label::non_flaky;
            l.reruns_consumed = j.value("reruns_consumed", 0);
            const auto& ev = j.at("evidence");
            const auto type = ev.at("type").get<std::string>();
            if (type == "developer_rerun_history") {
                l.evidence = DeveloperRerunHistory{};
            } else if (type == "automated_rerun") {
                l.evidence = AutomatedRerun{ev.at("success_at").get<int>()};
            } else if (type == "exhausted") {
                l.evidence = Exhausted{ev.at("max_reruns").get<int>()};
            } else {
                throw ContractError("unknown evidence type " + type);
            }
            if ((l.label == Label::flaky) == std::holds_alternative<Exhausted>(l.evidence)) {
                throw ContractError(l.job_ref + ": label disagrees with its evidence");
            }
            out.push_back(std::move(l));
        }
        return out;
    } catch (const json::exception& e) {
        throw ContractError(std::string("malformed labels document: ") + e.what());
    }
}

std::map<std::string, Label> load_label_map(const std::filesystem::path& file) {
    std::map<std::string, Label> out;
    if (!std::filesystem::exists(file)) return out;
    std::ifstream in(file);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ContractError(file.string() + ": " + e.what());
    }
    for (auto& l : labels_from_json(doc)) out[l.job_ref] = l.label;
    return out;
}

}  // namespace flaky
