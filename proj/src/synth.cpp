#include "flaky/synth.hpp"

#include "flaky/error.hpp"
#include "flaky/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flaky {

using nlohmann::json;

namespace {

constexpr double kShift = 1.5;  // class means sit at +-kShift * signal
constexpr int kClassMethods = 10;

const std::vector<std::string> kFlakyTemplates = {
    "java.net.SocketTimeoutException: Read timed out while connecting to {host}:{port}",
    "java.net.ConnectException: Connection refused: {host}/10.0.{n}.{n}:{port}",
    "Could not transfer artifact org.example:lib-{word}:jar:1.{n}.{n} from/to central: Connection reset",
    "org.awaitility.core.ConditionTimeoutException: Condition with lambda expression in {cls}Test was not fulfilled within {n} seconds.",
    "java.net.BindException: Address already in use (port {port})",
    "java.lang.OutOfMemoryError: Java heap space",
    "org.testcontainers.containers.ContainerLaunchException: Timed out waiting for container port {port} to open",
    "java.util.concurrent.TimeoutException: Waited {n} ms for {word} to become ready",
};

const std::vector<std::string> kDeterministicTemplates = {
    "[ERROR] COMPILATION ERROR : /home/runner/work/app/core/src/main/java/com/example/{cls}.java:[{n},{n}] cannot find symbol",
    "org.opentest4j.AssertionFailedError: expected: <{n}> but was: <{n}>",
    "java.lang.NullPointerException: Cannot invoke \"com.example.{cls}.{word}()\" because \"{word}\" is null",
    "[ERROR] Failed to execute goal org.apache.maven.plugins:maven-checkstyle-plugin:3.3.1:check (validate) on project core: You have {n} Checkstyle violations.",
    "java.lang.IllegalStateException: {cls} is not in state {word}",
    "error: package com.example.{word} does not exist",
    "java.lang.ClassCastException: class com.example.{cls} cannot be cast to class com.example.{cls}",
    "org.junit.ComparisonFailure: expected:<[{word}]> but was:<[{word}]>",
};

const std::vector<std::string> kWords = {"alpha",  "beta",    "cache", "delta",  "engine", "filter", "gateway",
                                         "handler", "index",  "journal", "kernel", "ledger", "mapper", "node",
                                         "order",  "parser",  "queue", "router", "stream", "token"};
const std::vector<std::string> kClasses = {"OrderService", "UserRepository", "CacheManager", "EventBus",
                                           "TokenParser",  "RouteTable",     "StreamReader", "IndexWriter"};
const std::vector<std::string> kHosts = {"repo.maven.apache.org", "localhost", "api.example.internal",
                                         "db.test.local", "registry.npmjs.org"};
const std::vector<std::string> kDevelopers = {"alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"};
const std::vector<std::string> kCommitTypes = {"fix", "feat", "chore", "refactor", "test", "docs"};
const std::vector<std::string> kModules = {"core", "api", "web"};
const std::vector<std::string> kInfo = {
    "[INFO] Scanning for projects...",
    "[INFO] Downloading from central: https://repo.maven.apache.org/maven2/org/example/{word}/1.{n}/{word}-1.{n}.pom",
    "[INFO] --- maven-compiler-plugin:3.11.0:compile (default-compile) @ core ---",
    "[INFO] Compiling {n} source files to /home/runner/work/app/core/target/classes",
    "[INFO] --- maven-surefire-plugin:3.2.2:test (default-test) @ core ---",
    "[INFO] Running com.example.{cls}Test",
    "[INFO] Copying {n} resources",
    "[INFO] Using {word} strategy for module {word}",
};

std::string fill(const std::string& tpl, Rng& rng) {
    std::string out;
    for (std::size_t i = 0; i < tpl.size();) {
        if (tpl[i] != '{') {
            out += tpl[i++];
            continue;
        }
        const auto close = tpl.find('}', i);
        const auto key = tpl.substr(i + 1, close - i - 1);
        if (key == "host") {
            out += rng.pick(kHosts);
        } else if (key == "port") {
            out += std::to_string(1024 + rng.below(60000));
        } else if (key == "n") {
            out += std::to_string(1 + rng.below(400));
        } else if (key == "word") {
            out += rng.pick(kWords);
        } else if (key == "cls") {
            out += rng.pick(kClasses);
        }
        i = close + 1;
    }
    return out;
}

std::string hex(Rng& rng, std::size_t len) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += digits[rng.below(16)];
    return s;
}

class LogWriter {
public:
    explicit LogWriter(Timestamp t) : t_(t) {}
    void line(const std::string& text) {
        out_ << format_runner(t_) << ' ' << text << '\n';
        t_ += Millis(137);
    }
    std::string str() const { return out_.str(); }

private:
    static std::string format_runner(Timestamp t) {
        // 2024-01-02T03:04:05.1230000Z
        auto s = format_timestamp(t);
        if (!s.empty() && s.back() == 'Z') s.pop_back();
        if (s.find('.') == std::string::npos) s += ".000";
        return s + "0000Z";
    }
    Timestamp t_;
    std::ostringstream out_;
};

std::string java_class(const std::string& pkg, const std::string& name, const std::vector<int>& constants,
                       int extra_methods) {
    std::ostringstream s;
    s << "package " << pkg << ";\n\nimport java.util.List;\n\npublic class " << name << " {\n";
    s << "    private int calls;\n\n";
    for (std::size_t i = 0; i < constants.size(); ++i) {
        s << "    public int step" << i << "(int x) {\n        calls++;\n        return x + " << constants[i]
          << ";\n    }\n\n";
    }
    for (int i = 0; i < extra_methods; ++i) {
        s << "    public String extra" << i << "(List<String> items) {\n        return String.join(\",\", items);\n"
          << "    }\n\n";
    }
    s << "}\n";
    return s.str();
}

std::string java_test(const std::string& name, int tests) {
    std::ostringstream s;
    s << "package com.example;\n\nimport org.junit.jupiter.api.Test;\n\nclass " << name << " {\n";
    for (int i = 0; i < tests; ++i) {
        s << "    @Test\n    void case" << i << "() {\n        assert " << i << " >= 0;\n    }\n\n";
    }
    s << "}\n";
    return s.str();
}

StepRecord step(int number, std::string name, Conclusion c) { return {std::move(name), number, Outcome::completed(c)}; }

}  // namespace

double SynthSpec::parse_signal(const std::string& text) {
    if (text == "none") return 0.0;
    if (text == "weak") return 0.5;
    if (text == "medium") return 1.0;
    if (text == "strong") return 2.0;
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ContractError("unknown signal strength " + text);
    }
    if (used != text.size() || !(v >= 0.0) || !std::isfinite(v)) throw ContractError("bad signal strength " + text);
    return v;
}

void SynthSpec::validate() const {
    if (!(flaky_ratio > 0.0 && flaky_ratio < 1.0)) throw ContractError("flaky ratio must lie in (0,1)");
    if (projects < 1 || n < projects) throw ContractError("need at least one job per project");
    if (!(signal >= 0.0) || !std::isfinite(signal)) throw ContractError("signal must be finite and nonnegative");
    if (!(success_builds >= 0.0) || !std::isfinite(success_builds)) {
        throw ContractError("success_builds must be finite and nonnegative");
    }
}

json SynthSpec::to_json() const {
    return {{"n", n},
            {"flaky_ratio", flaky_ratio},
            {"signal", signal},
            {"projects", projects},
            {"success_builds", success_builds}};
}

SynthCorpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    SynthCorpus out;
    out.spec = spec;
    out.seed = seed;

    const auto flaky_total = static_cast<std::size_t>(std::llround(static_cast<double>(spec.n) * spec.flaky_ratio));
    std::vector<int> labels(spec.n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(flaky_total), 1);
    Rng label_rng(derive_seed(seed, 0));
    label_rng.shuffle(labels);

    // Independent streams: what carries the signal, and everything else.
    Rng signal_rng(derive_seed(seed, 1));
    Rng noise_rng(derive_seed(seed, 2));
    const double pool_bias = 0.5 + 0.25 * std::min(spec.signal, 2.0);
    json scripts = json::object();

    const Timestamp epoch = parse_timestamp("2024-01-01T00:00:00Z");
    for (std::size_t p = 0; p < spec.projects; ++p) {
        const std::string repo = "synth/project-" + std::to_string(p + 1);
        const std::size_t lo = spec.n * p / spec.projects;
        const std::size_t hi = spec.n * (p + 1) / spec.projects;
        Timestamp t = epoch;
        std::int64_t build_id = 1000;
        auto make_build = [&](bool failing, int y, PlantedJob* planted) {
            ++build_id;
            t += std::chrono::minutes(60 + noise_rng.below(180));
            const Timestamp start = t;
            const std::string author = noise_rng.pick(kDevelopers);
            const std::string committer = noise_rng.bernoulli(0.8) ? author : noise_rng.pick(kDevelopers);

            // Planted draws; non-failing builds use the same shape without a class shift.
            const double sign = failing ? (y ? 1.0 : -1.0) : 0.0;
            auto draw = [&] { return signal_rng.normal() + kShift * spec.signal * sign; };
            const double z_dur = draw();
            const double z_churn = draw();
            const double z_tests = draw();
            const double z_body = draw();
            const bool flaky_pool = y ? signal_rng.bernoulli(pool_bias) : !signal_rng.bernoulli(pool_bias);

            const double duration_s = std::max(20.0, 600.0 + 120.0 * z_dur);
            const int churn = static_cast<int>(std::max(2.0, std::round(60.0 + 15.0 * z_churn)));
            const int tests_failed = static_cast<int>(std::clamp(std::round(6.0 + 1.5 * z_tests), 1.0, 30.0));
            const int bodies = static_cast<int>(std::clamp(std::round(4.0 + 1.2 * z_body), 0.0, double(kClassMethods)));

            // Change context.
            const std::string module = noise_rng.pick(kModules);
            const std::string cls = noise_rng.pick(kClasses);
            std::vector<int> before(kClassMethods);
            for (auto& c : before) c = static_cast<int>(noise_rng.below(100));
            auto after = before;
            std::vector<std::size_t> which(kClassMethods);
            for (std::size_t i = 0; i < which.size(); ++i) which[i] = i;
            noise_rng.shuffle(which);
            for (int i = 0; i < bodies; ++i) after[which[static_cast<std::size_t>(i)]] += 1000;
            const int extra_before = static_cast<int>(noise_rng.below(3));
            const int extra_after = extra_before + (noise_rng.bernoulli(0.3) ? 1 : 0);
            const std::string pkg = "com.example." + module;
            const int additions = (churn * 3 + 4) / 5;
            json files = json::array();
            files.push_back({{"path", module + "/src/main/java/com/example/" + module + "/" + cls + ".java"},
                             {"status", "modified"},
                             {"additions", additions},
                             {"deletions", churn - additions},
                             {"before", java_class(pkg, cls, before, extra_before)},
                             {"after", java_class(pkg, cls, after, extra_after)}});
            if (noise_rng.bernoulli(0.4)) {
                const int tb = 2 + static_cast<int>(noise_rng.below(4));
                const int ta = tb + static_cast<int>(noise_rng.below(3));
                files.push_back({{"path", module + "/src/test/java/com/example/" + cls + "Test.java"},
                                 {"status", "modified"},
                                 {"additions", 6 * (ta - tb) + 1},
                                 {"deletions", 1},
                                 {"before", java_test(cls + "Test", tb)},
                                 {"after", java_test(cls + "Test", ta)}});
            }
            if (noise_rng.bernoulli(0.1)) {
                files.push_back({{"path", "pom.xml"},
                                 {"status", "modified"},
                                 {"additions", 1 + noise_rng.below(4)},
                                 {"deletions", 1},
                                 {"before", nullptr},
                                 {"after", nullptr}});
            }
            json commits = json::array();
            const auto ncommits = 1 + noise_rng.below(3);
            for (std::size_t c = 0; c < ncommits; ++c) {
                commits.push_back({{"sha", hex(noise_rng, 40)},
                                   {"author", author},
                                   {"committer", committer},
                                   {"message", noise_rng.pick(kCommitTypes) + ": update " + noise_rng.pick(kWords)},
                                   {"timestamp", format_timestamp(start - std::chrono::minutes(10 * (ncommits - c)))}});
            }
            json change = {{"schema_version", 1},
                           {"author", author},
                           {"committer", committer},
                           {"commits", commits},
                           {"files", files},
                           {"repo",
                            {{"sloc", 20000 + 10 * static_cast<int>(build_id - 1000)},
                             {"test_lines", 6000 + 3 * static_cast<int>(build_id - 1000)},
                             {"dependencies_count", 30 + noise_rng.below(5)}}},
                           {"pr_comments", noise_rng.below(4)}};

            // Jobs: a test job (failing or not) and a lint job that passes.
            BuildRecord b;
            b.build_id = build_id;
            b.repo = repo;
            b.run_attempt = 1;
            b.trigger_event = noise_rng.bernoulli(0.7) ? "push" : "pull_request";
            b.started_at = start;
            b.head_sha = commits.back()["sha"].get<std::string>();
            b.workflow_name = "CI";
            const auto runner_labels = std::vector<std::string>{noise_rng.bernoulli(0.85) ? "ubuntu-latest"
                                                                                         : "windows-latest"};
            JobRecord test;
            test.job_id = build_id * 10 + 1;
            test.build_id = build_id;
            test.name = "test";
            test.started_at = start + std::chrono::seconds(5);
            test.completed_at = test.started_at + Millis(static_cast<std::int64_t>(duration_s * 1000.0));
            test.outcome = Outcome::completed(failing ? Conclusion::failure : Conclusion::success);
            test.labels = runner_labels;
            test.runner_name = "GitHub Actions " + std::to_string(1 + noise_rng.below(20));
            test.steps = {step(1, "Set up job", Conclusion::success), step(2, "Checkout", Conclusion::success),
                          step(3, "Set up JDK 17", Conclusion::success),
                          step(4, "Run tests", failing ? Conclusion::failure : Conclusion::success),
                          step(5, "Upload test reports artifact", Conclusion::success)};
            JobRecord lint;
            lint.job_id = build_id * 10 + 2;
            lint.build_id = build_id;
            lint.name = "lint";
            lint.started_at = start + std::chrono::seconds(3);
            lint.completed_at = lint.started_at + std::chrono::seconds(60 + noise_rng.below(60));
            lint.outcome = Outcome::completed(Conclusion::success);
            lint.labels = {"ubuntu-latest"};
            lint.runner_name = "GitHub Actions " + std::to_string(1 + noise_rng.below(20));
            lint.steps = {step(1, "Set up job", Conclusion::success), step(2, "Checkout", Conclusion::success),
                          step(3, "Run checkstyle", Conclusion::success)};
            b.jobs = {test, lint};
            b.updated_at = std::max(test.completed_at, lint.completed_at);
            b.outcome = Outcome::completed(failing ? Conclusion::failure : Conclusion::success);

            // Logs.
            LogWriter log(test.started_at);
            log.line("##[group]Run actions/checkout@v4");
            log.line("Syncing repository: " + repo);
            log.line("##[endgroup]");
            const auto info_lines = 15 + noise_rng.below(20);
            for (std::size_t i = 0; i < info_lines; ++i) log.line(fill(noise_rng.pick(kInfo), noise_rng));
            const int ran = 80 + static_cast<int>(noise_rng.below(120));
            const int skipped = static_cast<int>(noise_rng.below(4));
            if (failing) {
                const auto& pool = flaky_pool ? kFlakyTemplates : kDeterministicTemplates;
                // Signal lines use the signal stream so that noise draws do not shift between strengths.
                const auto& tpl = pool[signal_rng.below(pool.size())];
                log.line("[ERROR] Tests run: " + std::to_string(std::min(ran, 12)) + ", Failures: " +
                         std::to_string(std::min(tests_failed, 12)) + ", Errors: 0, Skipped: 0, Time elapsed: " +
                         std::to_string(1 + noise_rng.below(30)) + ".2 s <<< FAILURE! - in com.example." + cls + "Test");
                log.line("##[error]" + fill(tpl, noise_rng));
                const auto frames = 2 + noise_rng.below(4);
                for (std::size_t f = 0; f < frames; ++f) {
                    const auto& fc = noise_rng.pick(kClasses);
                    log.line("\tat com.example." + fc + "." + noise_rng.pick(kWords) + "(" + fc + ".java:" +
                             std::to_string(10 + noise_rng.below(300)) + ")");
                }
                log.line("[INFO] Results:");
                log.line("[ERROR] Tests run: " + std::to_string(ran) + ", Failures: " + std::to_string(tests_failed) +
                         ", Errors: 0, Skipped: " + std::to_string(skipped));
                log.line("[INFO] BUILD FAILURE");
                log.line("##[error]Process completed with exit code 1.");
            } else {
                log.line("[INFO] Tests run: " + std::to_string(ran) + ", Failures: 0, Errors: 0, Skipped: " +
                         std::to_string(skipped));
                log.line("[INFO] BUILD SUCCESS");
            }
            LogWriter lint_log(lint.started_at);
            lint_log.line("[INFO] You have 0 Checkstyle violations.");

            SynthBuild sb{RerunSequence({b}), {{test.job_id, log.str()}, {lint.job_id, lint_log.str()}}, change};
            if (planted) {
                planted->job_ref = job_ref(sb.seq, JobKey{"test", 0});
                planted->label = y;
                planted->duration = z_dur;
                planted->churn = z_churn;
                planted->tests_failed = z_tests;
                planted->body_modified = z_body;
                planted->log_from_flaky_pool = flaky_pool;
            }
            out.builds.push_back(std::move(sb));
        };

        for (std::size_t i = lo; i < hi; ++i) {
            while (noise_rng.bernoulli(spec.success_builds / (1.0 + spec.success_builds))) make_build(false, 0, nullptr);
            PlantedJob pj;
            make_build(true, labels[i], &pj);
            FlakyLabel fl;
            fl.job_ref = pj.job_ref;
            std::vector<std::string> script;
            if (labels[i]) {
                int at = 1;
                while (at < 10 && noise_rng.bernoulli(0.3)) ++at;
                fl.label = Label::flaky;
                fl.evidence = AutomatedRerun{at};
                fl.reruns_consumed = at;
                script.assign(static_cast<std::size_t>(at - 1), "failure");
                script.emplace_back("success");
            } else {
                fl.label = Label::non_flaky;
                fl.evidence = Exhausted{10};
                fl.reruns_consumed = 10;
                script.assign(10, "failure");
            }
            scripts[pj.job_ref] = script;
            out.labels.push_back(std::move(fl));
            out.truth.push_back(pj);
        }
    }
    out.oracle_script = {{"schema_version", 1}, {"scripts", std::move(scripts)}};
    return out;
}

void write_synthetic_corpus(const std::filesystem::path& root, const SynthCorpus& corpus) {
    std::filesystem::create_directories(root);
    for (const auto& b : corpus.builds) write_build(root, b.seq, b.logs, b.change);
    auto write = [&](const char* name, const json& doc) {
        std::ofstream f(root / name, std::ios::binary);
        if (!f) throw Error("cannot write " + (root / name).string());
        f << doc.dump(2) << '\n';
    };
    write("labels.json", labels_to_json(corpus.labels, corpus.seed));
    write("oracle.json", corpus.oracle_script);
    json truth = json::array();
    for (const auto& t : corpus.truth) {
        truth.push_back({{"job_ref", t.job_ref},
                         {"label", t.label},
                         {"duration", t.duration},
                         {"churn", t.churn},
                         {"tests_failed", t.tests_failed},
                         {"body_modified", t.body_modified},
                         {"log_from_flaky_pool", t.log_from_flaky_pool}});
    }
    write("truth.json", {{"schema_version", 1}, {"seed", corpus.seed}, {"jobs", std::move(truth)}});
    write("synth.json", {{"schema_version", 1}, {"seed", corpus.seed}, {"spec", corpus.spec.to_json()}});
}

}  // namespace flaky
