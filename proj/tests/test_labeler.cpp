#include "fake_github.hpp"
#include "flaky/error.hpp"
#include "flaky/labeler.hpp"
#include "flaky/random.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <thread>

using namespace flaky;
using namespace flaky::test;
using nlohmann::json;

namespace {

// One failed job "test" in attempt 1; further attempts per `history`.
RerunSequence failed_build(std::int64_t id, std::vector<Conclusion> history = {}, const std::string& repo = "acme/widget") {
    std::vector<BuildRecord> as;
    as.push_back(attempt(1, {job(id * 10, "test", Conclusion::failure), job(id * 10 + 1, "lint", Conclusion::success)},
                         Conclusion::failure, t0(), t0() + std::chrono::minutes(5), id, repo));
    int n = 2;
    for (auto c : history) {
        as.push_back(attempt(n, {job(id * 10 + n * 2, "test", c), job(id * 10 + n * 2 + 1, "lint", Conclusion::success)},
                             c, t0(), t0() + std::chrono::minutes(5), id, repo));
        ++n;
    }
    return RerunSequence(as);
}

Corpus corpus_of(std::vector<RerunSequence> seqs) {
    Corpus c;
    for (auto& s : seqs) c.builds.push_back({std::move(s), {}, std::nullopt});
    return c;
}

const JobKey kTest{"test", 0};

std::vector<std::string> fails(int n) { return std::vector<std::string>(static_cast<std::size_t>(n), "failure"); }

}  // namespace

TEST(LabelJob, DeveloperHistorySkipsOracle) {
    FixtureOracle oracle({});
    const auto seq = failed_build(1, {Conclusion::success});
    const auto l = label_job("r", kTest, seq, oracle);
    EXPECT_EQ(l.label, Label::flaky);
    EXPECT_TRUE(std::holds_alternative<DeveloperRerunHistory>(l.evidence));
    EXPECT_EQ(l.reruns_consumed, 0);
    EXPECT_EQ(oracle.calls("r"), 0);
}

TEST(LabelJob, StopsAtFirstSuccess) {
    FixtureOracle oracle({{"r", {"failure", "success", "failure"}}});
    const auto l = label_job("r", kTest, failed_build(1), oracle);
    EXPECT_EQ(l.label, Label::flaky);
    EXPECT_EQ(std::get<AutomatedRerun>(l.evidence).success_at, 2);
    EXPECT_EQ(l.reruns_consumed, 2);
    EXPECT_EQ(oracle.calls("r"), 2);
}

TEST(LabelJob, TenFailuresExhaust) {
    FixtureOracle oracle({{"r", fails(10)}});
    const auto l = label_job("r", kTest, failed_build(1), oracle);
    EXPECT_EQ(l.label, Label::non_flaky);
    EXPECT_EQ(std::get<Exhausted>(l.evidence).max_reruns, 10);
    EXPECT_EQ(l.reruns_consumed, 10);
}

TEST(LabelJob, HistoryFailuresOnlyStillConsultOracle) {
    FixtureOracle oracle(std::map<std::string, std::vector<std::string>>{{"r", {"success"}}});
    const auto l = label_job("r", kTest, failed_build(1, {Conclusion::failure, Conclusion::cancelled}), oracle);
    EXPECT_EQ(std::get<AutomatedRerun>(l.evidence).success_at, 1);
}

TEST(LabelJob, InconclusiveAndTransportErrorsDoNotCount) {
    FixtureOracle oracle({{"r", {"cancelled", "transport_error", "failure", "in_progress", "success"}}});
    const auto l = label_job("r", kTest, failed_build(1), oracle);
    EXPECT_EQ(std::get<AutomatedRerun>(l.evidence).success_at, 2);
    EXPECT_EQ(l.reruns_consumed, 2);
    EXPECT_EQ(l.inconclusive, 2);
}

TEST(LabelJob, TransportErrorRetriedOnceThenInconclusive) {
    FixtureOracle oracle({{"r", {"transport_error", "transport_error", "success"}}});
    const auto l = label_job("r", kTest, failed_build(1), oracle);
    EXPECT_EQ(l.inconclusive, 1);
    EXPECT_EQ(l.reruns_consumed, 1);
    EXPECT_EQ(l.diagnostics.size(), 1u);
}

TEST(LabelJob, TooManyInconclusiveIsAnError) {
    FixtureOracle oracle({{"r", std::vector<std::string>(20, "cancelled")}});
    LabelOptions opt;
    opt.max_inconclusive = 3;
    EXPECT_THROW(label_job("r", kTest, failed_build(1), oracle, opt), Error);
}

TEST(LabelJob, RejectsJobThatDidNotFailInitially) {
    FixtureOracle oracle({});
    EXPECT_THROW(label_job("r", JobKey{"lint", 0}, failed_build(1), oracle), ContractError);
    EXPECT_THROW(label_job("r", JobKey{"absent", 0}, failed_build(1), oracle), ContractError);
}

TEST(LabelJob, PropertiesOverRandomScripts) {
    Rng rng(17);
    const char* steps[] = {"failure", "success", "cancelled", "transport_error", "skipped", "failure", "failure"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> script;
        for (int i = 0; i < 15; ++i) script.push_back(steps[rng.below(7)]);
        const int max = 1 + static_cast<int>(rng.below(10));
        LabelOptions opt;
        opt.max_reruns = max;
        opt.max_inconclusive = 100;
        FixtureOracle a({{"r", script}});
        const auto l = label_job("r", kTest, failed_build(1), a, opt);
        ASSERT_LE(l.reruns_consumed, max);
        ASSERT_EQ(l.label == Label::flaky,
                  std::holds_alternative<AutomatedRerun>(l.evidence) ||
                      std::holds_alternative<DeveloperRerunHistory>(l.evidence));
        if (auto* ar = std::get_if<AutomatedRerun>(&l.evidence)) {
            ASSERT_GE(ar->success_at, 1);
            ASSERT_LE(ar->success_at, max);
            // early stop: the call that saw the success is the last one
            int conclusive = 0;
            int calls = 0;
            for (const auto& s : script) {
                if (s == "transport_error") {
                    ++calls;
                    continue;
                }
                ++calls;
                if (s == "failure" || s == "success") ++conclusive;
                if (s == "success") break;
            }
            ASSERT_EQ(a.calls("r"), calls);
            ASSERT_EQ(conclusive, ar->success_at);
        }
        FixtureOracle b({{"r", script}});
        const auto again = label_job("r", kTest, failed_build(1), b, opt);
        ASSERT_EQ(again.label, l.label);
        ASSERT_EQ(again.evidence, l.evidence);
        ASSERT_EQ(again.reruns_consumed, l.reruns_consumed);
        if (l.label == Label::flaky) {
            opt.max_reruns = max + 5;
            FixtureOracle c({{"r", script}});
            ASSERT_EQ(label_job("r", kTest, failed_build(1), c, opt).label, Label::flaky);
        }
    }
}

TEST(LabelCorpus, EmptyCorpus) {
    FixtureOracle oracle({});
    const auto run = label_corpus(Corpus{}, oracle);
    EXPECT_TRUE(run.labels.empty());
    EXPECT_EQ(run.summary.unlabeled, 0u);
}

TEST(LabelCorpus, SummaryPartitionsEvidence) {
    const auto corpus = corpus_of({failed_build(1), failed_build(2), failed_build(3, {Conclusion::success})});
    FixtureOracle oracle({{"acme/widget/1/test", fails(10)}, {"acme/widget/2/test", {"failure", "success"}}});
    const auto run = label_corpus(corpus, oracle);
    ASSERT_EQ(run.labels.size(), 3u);
    EXPECT_EQ(run.summary.exhausted, 1u);
    EXPECT_EQ(run.summary.automated_rerun, 1u);
    EXPECT_EQ(run.summary.developer_rerun_history, 1u);
    EXPECT_EQ(run.labels[0].job_ref, "acme/widget/1/test");
}

TEST(LabelCorpus, PerJobErrorsBecomeDiagnostics) {
    const auto corpus = corpus_of({failed_build(1), failed_build(2)});
    FixtureOracle oracle({{"acme/widget/1/test", std::vector<std::string>(30, "cancelled")},
                          {"acme/widget/2/test", {"success"}}});
    const auto run = label_corpus(corpus, oracle);
    EXPECT_EQ(run.labels.size(), 1u);
    EXPECT_EQ(run.summary.unlabeled, 1u);
    ASSERT_EQ(run.diagnostics.size(), 1u);
    EXPECT_EQ(run.diagnostics[0].subject, "acme/widget/1/test");
}

TEST(LabelCorpus, GeometricFlakinessNeedsFewReruns) {
    // Each flaky job succeeds per rerun with p = 0.6, so 99% succeed within
    // five reruns and the mean is 1/p.
    Rng rng(99);
    std::vector<RerunSequence> seqs;
    std::map<std::string, std::vector<std::string>> scripts;
    for (int i = 0; i < 400; ++i) {
        seqs.push_back(failed_build(100 + i));
        std::vector<std::string> s;
        while (s.size() < 10 && !rng.bernoulli(0.6)) s.push_back("failure");
        if (s.size() < 10) s.push_back("success");
        scripts["acme/widget/" + std::to_string(100 + i) + "/test"] = s;
    }
    FixtureOracle oracle(scripts);
    const auto run = label_corpus(corpus_of(seqs), oracle);
    double sum = 0;
    int flaky = 0;
    int within_five = 0;
    for (const auto& l : run.labels) {
        if (l.label != Label::flaky) continue;
        ++flaky;
        sum += l.reruns_consumed;
        within_five += l.reruns_consumed <= 5;
    }
    ASSERT_GT(flaky, 390);
    EXPECT_GE(static_cast<double>(within_five) / flaky, 0.98);
    EXPECT_LE(sum / flaky, 5.0);
}

TEST(LabelCorpus, ParallelMatchesSerialAndRespectsRepoCap) {
    std::vector<RerunSequence> seqs;
    std::map<std::string, std::vector<std::string>> scripts;
    for (int i = 0; i < 40; ++i) {
        const std::string repo = i % 2 ? "acme/odd" : "acme/even";
        seqs.push_back(failed_build(i + 1, {}, repo));
        scripts[repo + "/" + std::to_string(i + 1) + "/test"] = i % 3 ? fails(i % 7) : fails(10);
        scripts[repo + "/" + std::to_string(i + 1) + "/test"].push_back("success");
    }
    const auto corpus = corpus_of(seqs);

    class Counting : public RerunOracle {
    public:
        explicit Counting(std::map<std::string, std::vector<std::string>> s) : inner_(std::move(s)) {}
        void begin(const std::string& r) override { inner_.begin(r); }
        Outcome execute(const std::string& r) override {
            const bool odd = r.find("acme/odd") == 0;
            auto& n = odd ? odd_ : even_;
            const int now = ++n;
            auto& peak = odd ? peak_odd : peak_even;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {
            }
            std::this_thread::sleep_for(std::chrono::microseconds(200));
            auto out = inner_.execute(r);
            --n;
            return out;
        }
        std::atomic<int> peak_odd{0};
        std::atomic<int> peak_even{0};

    private:
        FixtureOracle inner_;
        std::atomic<int> odd_{0};
        std::atomic<int> even_{0};
    };

    FixtureOracle serial_oracle(scripts);
    const auto serial = label_corpus(corpus, serial_oracle);
    Counting counting(scripts);
    LabelOptions opt;
    opt.jobs = 6;
    opt.per_repo_limit = 2;
    const auto parallel = label_corpus(corpus, counting, opt);
    ASSERT_EQ(serial.labels.size(), parallel.labels.size());
    for (std::size_t i = 0; i < serial.labels.size(); ++i) {
        EXPECT_EQ(serial.labels[i].job_ref, parallel.labels[i].job_ref);
        EXPECT_EQ(serial.labels[i].evidence, parallel.labels[i].evidence);
    }
    EXPECT_LE(counting.peak_odd.load(), 2);
    EXPECT_LE(counting.peak_even.load(), 2);
}

TEST(AuditSample, SeededSubsetOfExhausted) {
    std::vector<FlakyLabel> labels;
    for (int i = 0; i < 30; ++i) {
        FlakyLabel l;
        l.job_ref = "r" + std::to_string(i);
        if (i % 3 == 0) {
            l.label = Label::flaky;
            l.evidence = AutomatedRerun{1};
        } else {
            l.evidence = Exhausted{10};
        }
        labels.push_back(l);
    }
    const auto a = audit_sample(labels, 5, 10);
    EXPECT_EQ(a, audit_sample(labels, 5, 10));
    EXPECT_EQ(a.size(), 10u);
    for (const auto& r : a) EXPECT_NE(std::stoi(r.substr(1)) % 3, 0);
    EXPECT_EQ(audit_sample(labels, 5, 100).size(), 20u);
}

TEST(LabelsFile, RoundTrip) {
    std::vector<FlakyLabel> labels(3);
    labels[0] = {"a/b/1/test", Label::flaky, DeveloperRerunHistory{}, 0, 0, {}};
    labels[1] = {"a/b/2/test", Label::flaky, AutomatedRerun{3}, 3, 1, {}};
    labels[2] = {"a/b/3/test", Label::non_flaky, Exhausted{10}, 10, 0, {}};
    const auto doc = labels_to_json(labels, 7);
    EXPECT_EQ(doc["schema_version"], 1);
    EXPECT_EQ(doc["seed"], 7);
    const auto back = labels_from_json(doc);
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].job_ref, labels[i].job_ref);
        EXPECT_EQ(back[i].label, labels[i].label);
        EXPECT_EQ(back[i].evidence, labels[i].evidence);
        EXPECT_EQ(back[i].reruns_consumed, labels[i].reruns_consumed);
    }
    TempDir dir;
    std::ofstream(dir / "labels.json") << doc.dump();
    const auto map = load_label_map(dir / "labels.json");
    EXPECT_EQ(map.at("a/b/3/test"), Label::non_flaky);
    EXPECT_TRUE(load_label_map(dir / "absent.json").empty());
}

TEST(FixtureOracle, LoadsScriptFileAndRewindsOnBegin) {
    TempDir dir;
    std::ofstream(dir / "o.json") << R"({"schema_version": 1, "scripts": {"x": ["failure", "success"]}})";
    auto o = FixtureOracle::load(dir / "o.json");
    o.begin("x");
    EXPECT_TRUE(o.execute("x").is(Conclusion::failure));
    EXPECT_TRUE(o.execute("x").is(Conclusion::success));
    EXPECT_TRUE(o.execute("x").is(Conclusion::failure));
    o.begin("x");
    EXPECT_TRUE(o.execute("x").is(Conclusion::failure));
    EXPECT_TRUE(o.execute("unknown").is(Conclusion::failure));
    EXPECT_THROW(FixtureOracle::from_json(json::parse(R"({"scripts": {"x": ["bogus"]}})")), Error);
}

namespace {

// Serves one run whose attempt counter advances on each rerun POST.
class RerunServer : public HttpTransport {
public:
    int attempt = 1;
    int polls_until_done = 2;
    std::string conclusion = "success";
    std::string head_sha = "abc123";
    std::vector<std::string> log;

    HttpResponse get(const std::string& path, const std::map<std::string, std::string>&) override {
        log.push_back("GET " + path);
        HttpResponse r{200, {}, {}};
        if (path.find("/jobs") != std::string::npos) {
            r.body = json{{"jobs", {{{"id", 900 + attempt}, {"name", "test"}, {"status", "completed"},
                                     {"conclusion", conclusion}}}}}
                         .dump();
            return r;
        }
        const bool done = pending_ == 0;
        if (pending_ > 0) --pending_;
        r.body = json{{"id", 1}, {"run_attempt", attempt}, {"status", done ? "completed" : "in_progress"},
                      {"head_sha", head_sha}}
                     .dump();
        return r;
    }
    HttpResponse post(const std::string& path, const std::map<std::string, std::string>&, const std::string&) override {
        log.push_back("POST " + path);
        ++attempt;
        pending_ = polls_until_done;
        return {201, {}, "{}"};
    }

private:
    int pending_ = 0;
};

}  // namespace

TEST(LiveRerunOracle, RerunsPollsAndReadsConclusion) {
    RerunServer server;
    std::int64_t now = 0;
    std::vector<std::chrono::milliseconds> sleeps;
    LiveRerunOracle oracle(server, "tok", fake_clock(&now, &sleeps), std::chrono::seconds(30), std::chrono::hours(1));
    oracle.add_target("acme/widget/1/test", {"acme/widget", 1, 900, "test", "abc123"});
    const auto out = oracle.execute("acme/widget/1/test");
    EXPECT_TRUE(out.is(Conclusion::success));
    EXPECT_EQ(std::count_if(server.log.begin(), server.log.end(), [](auto& s) { return s.rfind("POST", 0) == 0; }), 1);
    EXPECT_NE(std::find(server.log.begin(), server.log.end(), "POST /repos/acme/widget/actions/jobs/900/rerun"),
              server.log.end());
    EXPECT_EQ(sleeps.size(), 3u);
    EXPECT_TRUE(oracle.diagnostics().empty());
    // the next rerun targets the job id of the newest attempt
    server.head_sha = "fff000";
    server.conclusion = "failure";
    EXPECT_TRUE(oracle.execute("acme/widget/1/test").is(Conclusion::failure));
    EXPECT_NE(std::find(server.log.begin(), server.log.end(), "POST /repos/acme/widget/actions/jobs/902/rerun"),
              server.log.end());
    EXPECT_EQ(oracle.diagnostics().size(), 1u);
}

TEST(LiveRerunOracle, TimeoutIsInconclusive) {
    RerunServer server;
    server.polls_until_done = 1000;
    std::int64_t now = 0;
    std::vector<std::chrono::milliseconds> sleeps;
    LiveRerunOracle oracle(server, "tok", fake_clock(&now, &sleeps), std::chrono::seconds(60), std::chrono::minutes(5));
    oracle.add_target("r", {"acme/widget", 1, 900, "test", "abc123"});
    EXPECT_FALSE(oracle.execute("r").is_conclusive());
    EXPECT_THROW(oracle.execute("unregistered"), ContractError);
}
