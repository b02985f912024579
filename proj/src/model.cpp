#include "flaky/model.hpp"

#include "flaky/error.hpp"

#include <algorithm>
#include <map>

namespace flaky {

std::string_view to_string(Status s) {
    switch (s) {
        case Status::queued: return "queued";
        case Status::pending: return "pending";
        case Status::waiting: return "waiting";
        case Status::in_progress: return "in_progress";
        case Status::completed: return "completed";
    }
    return "queued";
}

std::string_view to_string(Conclusion c) {
    switch (c) {
        case Conclusion::success: return "success";
        case Conclusion::failure: return "failure";
        case Conclusion::startup_failure: return "startup_failure";
        case Conclusion::action_required: return "action_required";
        case Conclusion::neutral: return "neutral";
        case Conclusion::cancelled: return "cancelled";
        case Conclusion::skipped: return "skipped";
    }
    return "neutral";
}

Status parse_status(std::string_view text) {
    if (text == "queued" || text == "requested") return Status::queued;
    if (text == "pending") return Status::pending;
    if (text == "waiting") return Status::waiting;
    if (text == "in_progress") return Status::in_progress;
    if (text == "completed") return Status::completed;
    throw StructuralInputError("unknown status: " + std::string(text));
}

Conclusion parse_conclusion(std::string_view text) {
    if (text == "success") return Conclusion::success;
    if (text == "failure") return Conclusion::failure;
    if (text == "startup_failure") return Conclusion::startup_failure;
    if (text == "action_required") return Conclusion::action_required;
    if (text == "neutral") return Conclusion::neutral;
    if (text == "cancelled" || text == "canceled") return Conclusion::cancelled;
    if (text == "skipped") return Conclusion::skipped;
    // timed_out and stale exist upstream; both are unsuccessful completed runs.
    if (text == "timed_out") return Conclusion::failure;
    if (text == "stale") return Conclusion::skipped;
    throw StructuralInputError("unknown conclusion: " + std::string(text));
}

Outcome Outcome::pending(Status s) {
    if (s == Status::completed) {
        throw ContractError("completed outcome requires a conclusion");
    }
    return Outcome(s, std::nullopt);
}

Outcome Outcome::make(Status s, std::optional<Conclusion> c) {
    if ((s == Status::completed) != c.has_value()) {
        throw StructuralInputError("conclusion must be present iff status is completed");
    }
    return Outcome(s, c);
}

bool Outcome::is_conclusive() const noexcept {
    if (status_ != Status::completed || !conclusion_) return false;
    switch (*conclusion_) {
        case Conclusion::startup_failure:
        case Conclusion::action_required:
        case Conclusion::cancelled:
        case Conclusion::skipped:
            return false;
        default:
            return true;
    }
}

RerunSequence::RerunSequence(std::vector<BuildRecord> attempts) : attempts_(std::move(attempts)) {
    if (attempts_.empty()) {
        throw StructuralInputError("rerun sequence has no attempts");
    }
    std::stable_sort(attempts_.begin(), attempts_.end(),
                     [](const BuildRecord& a, const BuildRecord& b) { return a.run_attempt < b.run_attempt; });
    const auto id = attempts_.front().build_id;
    for (std::size_t i = 0; i < attempts_.size(); ++i) {
        const auto& a = attempts_[i];
        if (a.build_id != id) {
            throw StructuralInputError("attempts of build " + std::to_string(id) + " carry build id " +
                                       std::to_string(a.build_id));
        }
        if (a.run_attempt != static_cast<int>(i) + 1) {
            throw StructuralInputError("build " + std::to_string(id) + ": expected run_attempt " +
                                       std::to_string(i + 1) + ", found " + std::to_string(a.run_attempt) +
                                       " (gap or duplicate)");
        }
        for (const auto& job : a.jobs) {
            if (job.attempt != a.run_attempt) {
                throw StructuralInputError("job " + std::to_string(job.job_id) + " of build " + std::to_string(id) +
                                           " has attempt " + std::to_string(job.attempt) + " inside attempt " +
                                           std::to_string(a.run_attempt));
            }
        }
    }
}

std::string JobKey::str() const {
    return occurrence == 0 ? name : name + "#" + std::to_string(occurrence + 1);
}

std::string job_ref(const RerunSequence& seq, const JobKey& key) {
    return seq.repo() + "/" + std::to_string(seq.build_id()) + "/" + key.str();
}

std::vector<JobKey> job_keys(const BuildRecord& attempt) {
    std::map<std::string, int> seen;
    std::vector<JobKey> keys;
    keys.reserve(attempt.jobs.size());
    for (const auto& job : attempt.jobs) {
        keys.push_back({job.name, seen[job.name]++});
    }
    return keys;
}

std::vector<PairedJob> pair_jobs(const RerunSequence& seq) {
    std::map<JobKey, std::vector<const JobRecord*>> grouped;
    for (const auto& attempt : seq.attempts()) {
        const auto keys = job_keys(attempt);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            grouped[keys[i]].push_back(&attempt.jobs[i]);
        }
    }
    std::vector<PairedJob> out;
    out.reserve(grouped.size());
    for (auto& [key, runs] : grouped) {
        out.push_back({key, std::move(runs)});
    }
    return out;
}

RerunClass classify_rerun(const RerunSequence& seq) {
    const int n = seq.last().run_attempt;
    if (n > 1) return Rerun{n - 1};
    return NotRerun{};
}

bool is_flaky_job(std::span<const Outcome> outcomes) {
    bool success = false;
    bool failure = false;
    for (const auto& o : outcomes) {
        if (!o.is_conclusive()) continue;
        success = success || o.is(Conclusion::success);
        failure = failure || o.is(Conclusion::failure);
    }
    return success && failure;
}

FlakyVerdict judge_build(const RerunSequence& seq) {
    FlakyVerdict v;
    v.build_is_rerun = seq.size() > 1;
    v.approval_rerun = seq.size() == 2 && seq.first().outcome.is(Conclusion::action_required);
    if (!v.build_is_rerun) return v;
    for (const auto& paired : pair_jobs(seq)) {
        std::vector<Outcome> outcomes;
        outcomes.reserve(paired.runs.size());
        for (const auto* run : paired.runs) outcomes.push_back(run->outcome);
        if (is_flaky_job(outcomes)) {
            v.flaky_job_ids.insert(paired.key.str());
        }
    }
    v.build_is_flaky = !v.flaky_job_ids.empty();
    return v;
}

std::vector<RerunSequence> filter_approval_reruns(std::vector<RerunSequence> seqs) {
    std::erase_if(seqs, [](const RerunSequence& s) { return judge_build(s).approval_rerun; });
    return seqs;
}

}  // namespace flaky
