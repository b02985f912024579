// flakedetect: corpus collection, rerun labeling, feature export, training,
// prediction and forward-chaining evaluation.

#include "flaky/cost.hpp"
#include "flaky/detector.hpp"
#include "flaky/error.hpp"
#include "flaky/features.hpp"
#include "flaky/harness.hpp"
#include "flaky/ingestion.hpp"
#include "flaky/labeler.hpp"
#include "flaky/parallel.hpp"
#include "flaky/synth.hpp"
#include "flaky/taxonomy.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace flaky;

constexpr int kSchemaVersion = 1;

struct Global {
    std::uint64_t seed = 0;
    int jobs = default_jobs();
    std::string format = "text";

    [[nodiscard]] bool lines() const { return format == "json-lines"; }
};

json stamp(json doc, const Global& g) {
    doc["schema_version"] = kSchemaVersion;
    doc["seed"] = g.seed;
    return doc;
}

void emit(const json& doc) { std::cout << doc.dump() << '\n'; }

json diag_json(const Diagnostics& ds) {
    json a = json::array();
    for (const auto& d : ds) a.push_back({{"subject", d.subject}, {"message", d.message}});
    return a;
}

void warn(const Diagnostics& ds, std::size_t limit = 20) {
    for (std::size_t i = 0; i < ds.size() && i < limit; ++i) {
        std::cerr << "warning: " << ds[i].subject << ": " << ds[i].message << '\n';
    }
    if (ds.size() > limit) std::cerr << "warning: " << ds.size() - limit << " more diagnostics\n";
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw StructuralInputError("cannot read " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw StructuralInputError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
}

std::string env_token() {
    const char* t = std::getenv("GITHUB_TOKEN");
    return t ? t : "";
}

PatternLibrary load_library(const std::string& path) {
    return path.empty() ? PatternLibrary::builtin() : PatternLibrary::load(path);
}

std::map<std::string, Label> labels_for(const fs::path& corpus, const std::string& labels_path) {
    const fs::path p = labels_path.empty() ? corpus / "labels.json" : fs::path(labels_path);
    if (!fs::exists(p)) throw StructuralInputError("no labels at " + p.string() + "; run `label` first");
    return load_label_map(p);
}

std::string ms_text(double ms) { return format_duration(Millis(static_cast<std::int64_t>(ms))); }

// --- ingest ------------------------------------------------------------------

struct IngestArgs {
    std::vector<std::string> repos;
    std::string out;
    std::string since = "1970-01-01T00:00:00Z";
    std::string api_base = "https://api.github.com";
    int page_size = 100;
    int max_retries = 3;
};

int run_ingest(const IngestArgs& a, const Global& g) {
    auto transport = make_http_transport(a.api_base);
    FetchPolicy policy;
    policy.page_size = a.page_size;
    policy.max_retries = a.max_retries;
    policy.validate();
    GitHubFetcher fetcher(*transport, env_token(), policy);
    const auto since = parse_timestamp(a.since);
    int failures = 0;
    for (const auto& repo : a.repos) {
        json rec = {{"repo", repo}};
        try {
            int builds = 0;
            const auto stats = fetcher.fetch_repo_history(repo, since, fs::path(a.out),
                                                          [&](const RerunSequence&) { ++builds; });
            rec["status"] = "ok";
            rec["builds_written"] = stats.builds_written;
            rec["runs_listed"] = stats.runs_listed;
            rec["requests"] = stats.requests;
            rec["rate_limit_waits"] = stats.waits;
            rec["warnings"] = diag_json(stats.warnings);
            if (!g.lines()) {
                std::cout << repo << ": " << stats.builds_written << " builds, " << stats.requests << " requests\n";
                warn(stats.warnings);
            }
        } catch (const RepoUnavailable& e) {
            ++failures;
            rec["status"] = "unavailable";
            rec["http_status"] = e.http_status();
            if (!g.lines()) std::cout << repo << ": unavailable (HTTP " << e.http_status() << ")\n";
        }
        if (g.lines()) emit(stamp(rec, g));
    }
    return failures == static_cast<int>(a.repos.size()) ? 1 : 0;
}

// --- stats -------------------------------------------------------------------

struct CorpusArgs {
    std::string corpus;
};

int run_stats(const CorpusArgs& a, const Global& g) {
    const auto corpus = load_corpus(a.corpus);
    warn(corpus.diagnostics);
    std::size_t reruns = 0;
    std::size_t approvals = 0;
    std::size_t flaky_builds = 0;
    std::size_t flaky_jobs = 0;
    std::vector<double> wait_rerun;
    std::vector<double> wait_single;
    std::vector<double> comp_rerun;
    std::vector<double> comp_single;
    for (const auto& b : corpus.builds) {
        const auto verdict = judge_build(b.seq);
        Diagnostics d;
        const auto wait = waiting_time(b.seq, &d);
        const auto comp = computational_time(b.seq, &d);
        if (verdict.approval_rerun) ++approvals;
        if (verdict.build_is_rerun && !verdict.approval_rerun) {
            ++reruns;
            wait_rerun.push_back(static_cast<double>(wait.count()));
            comp_rerun.push_back(static_cast<double>(comp.count()));
        } else if (!verdict.build_is_rerun) {
            wait_single.push_back(static_cast<double>(wait.count()));
            comp_single.push_back(static_cast<double>(comp.count()));
        }
        if (verdict.build_is_flaky) ++flaky_builds;
        flaky_jobs += verdict.flaky_job_ids.size();
        if (g.lines()) {
            json ids = json::array();
            for (const auto& id : verdict.flaky_job_ids) ids.push_back(id);
            emit(stamp({{"record", "build"},
                        {"repo", b.seq.repo()},
                        {"build_id", b.seq.build_id()},
                        {"attempts", b.seq.size()},
                        {"rerun", verdict.build_is_rerun},
                        {"approval_rerun", verdict.approval_rerun},
                        {"flaky", verdict.build_is_flaky},
                        {"flaky_jobs", ids},
                        {"waiting_time_ms", wait.count()},
                        {"computational_time_ms", comp.count()},
                        {"diagnostics", diag_json(d)}},
                       g));
        }
    }
    auto compare = [](const std::vector<double>& x, const std::vector<double>& y) -> json {
        try {
            const auto c = compare_costs(x, y);
            return {{"rerun_median_ms", c.group_a.median},
                    {"rerun_mean_ms", c.group_a.mean},
                    {"non_rerun_median_ms", c.group_b.median},
                    {"non_rerun_mean_ms", c.group_b.mean},
                    {"u", c.u_statistic},
                    {"p_value", c.p_value},
                    {"test", c.test_name}};
        } catch (const StatisticsUndefined& e) {
            return {{"undefined", e.what()}};
        }
    };
    const json summary = {{"record", "summary"},
                          {"builds", corpus.builds.size()},
                          {"rerun_builds", reruns},
                          {"approval_reruns", approvals},
                          {"flaky_builds", flaky_builds},
                          {"flaky_jobs", flaky_jobs},
                          {"waiting_time", compare(wait_rerun, wait_single)},
                          {"computational_time", compare(comp_rerun, comp_single)},
                          {"corpus_diagnostics", corpus.diagnostics.size()}};
    if (g.lines()) {
        emit(stamp(summary, g));
        return 0;
    }
    const double rerun_share = corpus.builds.empty() ? 0.0 : 100.0 * double(reruns) / double(corpus.builds.size());
    const double flaky_share = reruns == 0 ? 0.0 : 100.0 * double(flaky_builds) / double(reruns);
    std::cout << "builds:           " << corpus.builds.size() << '\n'
              << "rerun builds:     " << reruns << " (" << std::fixed << std::setprecision(1) << rerun_share
              << "%)\n"
              << "approval reruns:  " << approvals << " (excluded)\n"
              << "flaky builds:     " << flaky_builds << " (" << flaky_share << "% of rerun builds)\n"
              << "flaky jobs:       " << flaky_jobs << '\n';
    auto cost_line = [](const char* name, const json& c) {
        std::cout << name;
        if (c.contains("undefined")) {
            std::cout << "n/a (" << c["undefined"].get<std::string>() << ")\n";
            return;
        }
        std::cout << "median " << ms_text(c["rerun_median_ms"].get<double>())
                  << " rerun vs "
                  << ms_text(c["non_rerun_median_ms"].get<double>())
                  << " non-rerun, p = " << std::setprecision(4) << c["p_value"].get<double>() << " ("
                  << c["test"].get<std::string>() << ")\n";
    };
    cost_line("waiting time:     ", summary["waiting_time"]);
    cost_line("computational:    ", summary["computational_time"]);
    return 0;
}

// --- classify-failures -------------------------------------------------------

struct ClassifyArgs {
    std::string corpus;
    std::string library;
    std::size_t sample = 10;
};

int run_classify(const ClassifyArgs& a, const Global& g) {
    const auto corpus = load_corpus(a.corpus);
    warn(corpus.diagnostics);
    const auto library = load_library(a.library);
    const auto failed = initially_failed_jobs(corpus);
    std::vector<std::string> logs;
    std::map<std::string, std::size_t> histogram;
    for (const auto& f : failed) {
        logs.push_back(read_log(*f.build, *f.job));
        const auto m = classify_log(logs.back(), library);
        const std::string cat = m.matched ? std::string(to_string(m.matched->category)) : "unknown";
        ++histogram[cat];
        if (g.lines()) {
            json rec = {{"record", "job"}, {"job_ref", f.job_ref}, {"category", cat}, {"message", m.message}};
            rec["pattern_id"] = m.matched ? json(m.matched->pattern_id) : json(nullptr);
            if (m.unmatched_reason) rec["unmatched_reason"] = *m.unmatched_reason;
            emit(stamp(rec, g));
        }
    }
    const auto cov = coverage_report(logs, library, g.seed, a.sample);
    json samples = json::array();
    for (const auto& s : cov.unmatched_samples) {
        samples.push_back({{"job_ref", failed[s.log_index].job_ref}, {"message", s.message}, {"reason", s.reason}});
    }
    if (g.lines()) {
        emit(stamp({{"record", "summary"},
                    {"matched", cov.matched_count},
                    {"unmatched", cov.unmatched_count},
                    {"categories", histogram},
                    {"unmatched_sample", samples}},
                   g));
        return 0;
    }
    const auto total = cov.matched_count + cov.unmatched_count;
    std::cout << "failed jobs: " << total << ", matched " << cov.matched_count << ", unmatched "
              << cov.unmatched_count << '\n';
    for (const auto& [cat, n] : histogram) std::cout << "  " << cat << ": " << n << '\n';
    if (!cov.unmatched_samples.empty()) std::cout << "unmatched sample:\n";
    for (const auto& s : samples) {
        std::cout << "  " << s["job_ref"].get<std::string>() << " [" << s["reason"].get<std::string>() << "] "
                  << s["message"].get<std::string>().substr(0, 160) << '\n';
    }
    return 0;
}

// --- label -------------------------------------------------------------------

struct LabelArgs {
    std::string corpus;
    std::string oracle;
    std::string out;
    std::string api_base = "https://api.github.com";
    int max_reruns = 10;
    int max_inconclusive = 10;
    int per_repo_limit = 4;
    std::size_t audit = 10;
};

int run_label(const LabelArgs& a, const Global& g) {
    const auto corpus = load_corpus(a.corpus);
    warn(corpus.diagnostics);
    LabelOptions opt;
    opt.max_reruns = a.max_reruns;
    opt.max_inconclusive = a.max_inconclusive;
    opt.per_repo_limit = a.per_repo_limit;
    opt.jobs = g.jobs;

    struct FixtureHolder final : RerunOracle {
        FixtureOracle inner;
        explicit FixtureHolder(const std::string& file) : inner(FixtureOracle::load(file)) {}
        void begin(const std::string& ref) override { inner.begin(ref); }
        Outcome execute(const std::string& ref) override { return inner.execute(ref); }
    };
    std::unique_ptr<HttpTransport> transport;
    std::unique_ptr<RerunOracle> oracle;
    LiveRerunOracle* live = nullptr;
    if (a.oracle.rfind("fixture:", 0) == 0) {
        oracle = std::make_unique<FixtureHolder>(a.oracle.substr(8));
    } else if (a.oracle == "live") {
        const auto token = env_token();
        if (token.empty()) throw ContractError("live reruns need GITHUB_TOKEN");
        transport = make_http_transport(a.api_base);
        auto l = std::make_unique<LiveRerunOracle>(*transport, token);
        l->add_corpus(corpus);
        live = l.get();
        oracle = std::move(l);
    } else {
        throw ContractError("--oracle must be live or fixture:<file>");
    }

    const auto run = label_corpus(corpus, *oracle, opt);
    auto diags = run.diagnostics;
    if (live) {
        const auto extra = live->diagnostics();
        diags.insert(diags.end(), extra.begin(), extra.end());
    }
    const fs::path out = a.out.empty() ? fs::path(a.corpus) / "labels.json" : fs::path(a.out);
    write_file(out, labels_to_json(run.labels, g.seed).dump(2) + "\n");
    const auto audit = audit_sample(run.labels, g.seed, a.audit);
    if (g.lines()) {
        const auto doc = labels_to_json(run.labels, g.seed);
        for (const auto& l : doc["labels"]) emit(stamp({{"record", "label"}, {"label", l}}, g));
        emit(stamp({{"record", "summary"},
                    {"developer_rerun_history", run.summary.developer_rerun_history},
                    {"automated_rerun", run.summary.automated_rerun},
                    {"exhausted", run.summary.exhausted},
                    {"unlabeled", run.summary.unlabeled},
                    {"audit_sample", audit},
                    {"labels_file", out.string()},
                    {"diagnostics", diag_json(diags)}},
                   g));
        return 0;
    }
    warn(diags);
    std::cout << "labels written to " << out.string() << '\n'
              << "  flaky from developer reruns: " << run.summary.developer_rerun_history << '\n'
              << "  flaky from automated reruns: " << run.summary.automated_rerun << '\n'
              << "  non-flaky (reruns exhausted): " << run.summary.exhausted << '\n'
              << "  unlabeled: " << run.summary.unlabeled << '\n';
    if (!audit.empty()) {
        std::cout << "audit sample of non-flaky labels:\n";
        for (const auto& r : audit) std::cout << "  " << r << '\n';
    }
    return 0;
}

// --- features ----------------------------------------------------------------

struct FeaturesArgs {
    std::string corpus;
    std::string labels;
    std::string library;
    std::string out;
};

int run_features(const FeaturesArgs& a, const Global& g) {
    const auto corpus = load_corpus(a.corpus);
    warn(corpus.diagnostics);
    const auto library = load_library(a.library);
    std::map<std::string, Label> labels;
    const fs::path lp = a.labels.empty() ? fs::path(a.corpus) / "labels.json" : fs::path(a.labels);
    if (fs::exists(lp)) labels = load_label_map(lp);
    const auto history = RepoHistory::from_corpus(corpus);
    const auto failed = initially_failed_jobs(corpus);
    std::vector<StructuredFeatureVector> rows(failed.size());
    Diagnostics diags;
    std::vector<Diagnostics> per(failed.size());
    parallel_for(failed.size(), g.jobs, [&](std::size_t i) {
        const auto& f = failed[i];
        const auto ctx = change_context(*f.build, &per[i]);
        rows[i] = extract({f.build, f.job, read_log(*f.build, *f.job)}, ctx, history, library);
    });
    std::vector<std::string> refs;
    std::vector<int> ys;
    for (std::size_t i = 0; i < failed.size(); ++i) {
        refs.push_back(failed[i].job_ref);
        auto it = labels.find(failed[i].job_ref);
        ys.push_back(it == labels.end() ? -1 : it->second == Label::flaky ? 1 : 0);
        diags.insert(diags.end(), per[i].begin(), per[i].end());
        for (const auto& d : rows[i].diagnostics) diags.push_back({failed[i].job_ref + ": " + d.subject, d.message});
    }
    warn(diags);
    if (g.lines()) {
        const auto& names = feature_names();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            json values = json::object();
            for (std::size_t c = 0; c < names.size(); ++c) values[names[c]] = rows[i].values[c];
            emit(stamp({{"record", "job"},
                        {"job_ref", refs[i]},
                        {"label", ys[i] < 0 ? json(nullptr) : json(ys[i])},
                        {"structural_fallback", rows[i].structural_fallback},
                        {"features", values}},
                       g));
        }
        return 0;
    }
    if (a.out.empty() || a.out == "-") {
        write_feature_csv(std::cout, refs, ys, rows);
    } else {
        std::ostringstream s;
        write_feature_csv(s, refs, ys, rows);
        write_file(a.out, s.str());
        std::cout << rows.size() << " rows written to " << a.out << '\n';
    }
    return 0;
}

// --- train / predict ---------------------------------------------------------

struct TrainArgs {
    std::string corpus;
    std::string labels;
    std::string library;
    std::string out;
    std::string classifier = "rf";
    std::string embedder = "hashed-tf-v1:512";
    DetectorConfig config;
};

int run_train(const TrainArgs& a, const Global& g) {
    a.config.validate();
    const auto corpus = load_corpus(a.corpus);
    warn(corpus.diagnostics);
    const auto ds = build_dataset(corpus, labels_for(a.corpus, a.labels), a.embedder, load_library(a.library), g.jobs);
    warn(ds.diagnostics);
    std::vector<TrainingJob> jobs;
    for (const auto& r : ds.rows) jobs.push_back({r.job_ref, r.start, r.embedding, r.features, r.label});
    const auto model = DetectorModel::train(jobs, ds.feature_names, a.config, a.classifier, a.embedder, g.seed);
    write_file(a.out, model.to_json().dump() + "\n");
    const json rec = {{"record", "model"},
                      {"model", a.out},
                      {"rows", jobs.size()},
                      {"positives", std::count_if(jobs.begin(), jobs.end(), [](auto& j) { return j.label == 1; })},
                      {"classifier", a.classifier},
                      {"config", a.config.to_json()}};
    if (g.lines()) {
        emit(stamp(rec, g));
    } else {
        std::cout << "trained " << a.classifier << " detector on " << jobs.size() << " jobs -> " << a.out << '\n';
    }
    return 0;
}

struct PredictArgs {
    std::string model;
    std::string job;
    std::string job_name;
    std::string history;
    std::string library;
};

int run_predict(const PredictArgs& a, const Global& g) {
    const auto model = DetectorModel::from_json(read_json_file(a.model));
    Diagnostics load_diags;
    const auto build = load_build(a.job, &load_diags);
    warn(load_diags);
    RepoHistory history;
    if (!a.history.empty()) history = RepoHistory::from_corpus(load_corpus(a.history));
    const auto library = load_library(a.library);
    const auto& first = build.seq.first();
    const auto keys = job_keys(first);
    int predicted = 0;
    for (std::size_t i = 0; i < first.jobs.size(); ++i) {
        const auto& job = first.jobs[i];
        if (!job.outcome.is(Conclusion::failure)) continue;
        if (!a.job_name.empty() && job.name != a.job_name && keys[i].str() != a.job_name) continue;
        ++predicted;
        const auto ref = job_ref(build.seq, keys[i]);
        Diagnostics diags;
        const auto ctx = change_context(build, &diags);
        const auto raw = read_log(build, job);
        const auto fv = extract({&build, &job, raw}, ctx, history, library);
        std::optional<LogDocument> doc;
        if (!raw.empty()) doc = LogDocument::make(ref, raw, model.embedder());
        auto p = model.predict(doc ? &*doc : nullptr, fv.values);
        p.diagnostics.insert(p.diagnostics.begin(), diags.begin(), diags.end());
        p.diagnostics.insert(p.diagnostics.end(), fv.diagnostics.begin(), fv.diagnostics.end());
        if (a.history.empty()) p.diagnostics.push_back({ref, "no history corpus; history features use defaults"});
        auto rec = p.to_json();
        rec["record"] = "verdict";
        rec["job_ref"] = ref;
        rec["config"] = model.config().to_json();
        rec["model_seed"] = model.seed();
        if (g.lines()) {
            emit(stamp(rec, g));
        } else {
            std::cout << stamp(rec, g).dump(2) << '\n';
        }
    }
    if (predicted == 0) throw ContractError("no initially failed job to predict in " + a.job);
    return 0;
}

// --- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
    std::string corpus;
    std::string labels;
    std::string library;
    std::string plan = "auto";
    std::string grid = "paper";
    std::string models = "lr,rf";
    std::string out;
    bool baseline = false;
};

int run_evaluate(const EvaluateArgs& a, const Global& g) {
    if (a.plan != "auto") throw ContractError("--plan supports only auto");
    EvaluationOptions opt;
    opt.seed = g.seed;
    opt.jobs = g.jobs;
    opt.baseline = a.baseline;
    opt.grid = a.grid == "paper" ? GridSpec::paper() : GridSpec::from_json(read_json_file(a.grid));
    opt.models.clear();
    std::stringstream ms(a.models);
    for (std::string m; std::getline(ms, m, ',');) {
        if (m.empty()) continue;
        if (m != "lr" && m != "rf" && m != "mlp") throw ContractError("unknown model " + m);
        opt.models.push_back(m);
    }
    if (opt.models.empty() && !opt.baseline) throw ContractError("no models to evaluate");
    const auto corpus = load_corpus(a.corpus);
    warn(corpus.diagnostics);
    const auto ds = build_dataset(corpus, labels_for(a.corpus, a.labels), "hashed-tf-v1:512", load_library(a.library),
                                  g.jobs);
    warn(ds.diagnostics);
    const auto report = evaluate(ds, opt);
    auto doc = report.to_json();
    doc["grid"] = opt.grid.to_json();
    doc["grid_points"] = opt.grid.size();
    doc["rows"] = ds.rows.size();
    if (!a.out.empty()) write_file(a.out, doc.dump(2) + "\n");
    if (g.lines()) {
        for (const auto& p : doc["projects"]) emit(stamp({{"record", "project"}, {"project", p}}, g));
        emit(stamp({{"record", "summary"},
                    {"models", doc["models"]},
                    {"average", doc["average"]},
                    {"median", doc["median"]},
                    {"diagnostics", doc["diagnostics"]}},
                   g));
        return 0;
    }
    warn(report.diagnostics);
    report.render_text(std::cout);
    if (a.baseline) std::cout << "baseline: " << kBaselineName << " (tree ensemble in place of gradient boosting)\n";
    std::cout << "seed " << g.seed << ", " << opt.grid.size() << " grid points";
    if (!a.out.empty()) std::cout << ", report written to " << a.out;
    std::cout << '\n';
    return 0;
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
    SynthSpec spec;
    std::string signal = "medium";
    std::string out;
};

int run_synth(SynthArgs a, const Global& g) {
    a.spec.signal = SynthSpec::parse_signal(a.signal);
    const auto corpus = generate_synthetic_corpus(a.spec, g.seed);
    write_synthetic_corpus(a.out, corpus);
    const auto flaky = std::count_if(corpus.labels.begin(), corpus.labels.end(),
                                     [](const FlakyLabel& l) { return l.label == Label::flaky; });
    const json rec = {{"record", "synth"},
                      {"out", a.out},
                      {"builds", corpus.builds.size()},
                      {"labeled_jobs", corpus.labels.size()},
                      {"flaky", flaky},
                      {"spec", a.spec.to_json()}};
    if (g.lines()) {
        emit(stamp(rec, g));
    } else {
        std::cout << "wrote " << corpus.builds.size() << " builds (" << corpus.labels.size() << " labeled jobs, "
                  << flaky << " flaky) to " << a.out << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flaky CI failure detection: collect, label, featurize, train, predict, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    Global g;
    app.add_option("--seed", g.seed, "Seed for every stochastic step")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--format", g.format, "Output format")
        ->check(CLI::IsMember({"text", "json-lines"}))
        ->capture_default_str();

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Crawl GitHub Actions history into a corpus directory");
    c_ingest->add_option("--repo", ingest.repos, "owner/name (repeatable)")->required();
    c_ingest->add_option("--out", ingest.out, "Corpus root")->required();
    c_ingest->add_option("--since", ingest.since, "Only builds updated after this instant")->capture_default_str();
    c_ingest->add_option("--api-base", ingest.api_base, "REST API base URL")->capture_default_str();
    c_ingest->add_option("--page-size", ingest.page_size)->check(CLI::Range(1, 100))->capture_default_str();
    c_ingest->add_option("--max-retries", ingest.max_retries)->check(CLI::NonNegativeNumber)->capture_default_str();

    CorpusArgs stats;
    auto* c_stats = app.add_subcommand("stats", "Rerun, flakiness and cost statistics of a corpus");
    c_stats->add_option("--corpus", stats.corpus)->required();

    ClassifyArgs classify;
    auto* c_classify = app.add_subcommand("classify-failures", "Assign failure categories to failed jobs");
    c_classify->add_option("--corpus", classify.corpus)->required();
    c_classify->add_option("--library", classify.library, "Pattern library (default: built in)");
    c_classify->add_option("--sample", classify.sample, "Unmatched messages to show")->capture_default_str();

    LabelArgs label;
    auto* c_label = app.add_subcommand("label", "Label initially failed jobs through reruns");
    c_label->add_option("--corpus", label.corpus)->required();
    c_label->add_option("--oracle", label.oracle, "live or fixture:<file>")->required();
    c_label->add_option("--out", label.out, "Labels file (default: <corpus>/labels.json)");
    c_label->add_option("--api-base", label.api_base)->capture_default_str();
    c_label->add_option("--max-reruns", label.max_reruns)->check(CLI::PositiveNumber)->capture_default_str();
    c_label->add_option("--max-inconclusive", label.max_inconclusive)
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    c_label->add_option("--per-repo-limit", label.per_repo_limit)->check(CLI::PositiveNumber)->capture_default_str();
    c_label->add_option("--audit", label.audit, "Non-flaky labels sampled for audit")->capture_default_str();

    FeaturesArgs features;
    auto* c_features = app.add_subcommand("features", "Export the structured feature matrix");
    c_features->add_option("--corpus", features.corpus)->required();
    c_features->add_option("--labels", features.labels, "Labels file (default: <corpus>/labels.json)");
    c_features->add_option("--library", features.library);
    c_features->add_option("--out", features.out, "CSV file (default: stdout)");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train a detector model on a labeled corpus");
    c_train->add_option("--corpus", train.corpus)->required();
    c_train->add_option("--labels", train.labels);
    c_train->add_option("--library", train.library);
    c_train->add_option("--out", train.out, "Model file")->required();
    c_train->add_option("--classifier", train.classifier)
        ->check(CLI::IsMember({"lr", "rf", "mlp"}))
        ->capture_default_str();
    c_train->add_option("--embedder", train.embedder)->capture_default_str();
    c_train->add_option("--K", train.config.K, "Neighbors")->capture_default_str();
    c_train->add_option("--F", train.config.F, "Selected features")->capture_default_str();
    c_train->add_option("--alpha", train.config.alpha, "Weight of the log channel")->capture_default_str();
    c_train->add_option("--beta", train.config.beta, "Decision threshold")->capture_default_str();

    PredictArgs predict;
    auto* c_predict = app.add_subcommand("predict", "Score the failed jobs of one build directory");
    c_predict->add_option("--model", predict.model)->required();
    c_predict->add_option("--job", predict.job, "Build directory <root>/<owner>/<name>/<build_id>")->required();
    c_predict->add_option("--job-name", predict.job_name, "Only this job");
    c_predict->add_option("--history", predict.history, "Corpus supplying earlier builds");
    c_predict->add_option("--library", predict.library);

    EvaluateArgs ev;
    auto* c_eval = app.add_subcommand("evaluate", "Forward-chaining evaluation with grid search");
    c_eval->add_option("--corpus", ev.corpus)->required();
    c_eval->add_option("--labels", ev.labels);
    c_eval->add_option("--library", ev.library);
    c_eval->add_option("--plan", ev.plan)->check(CLI::IsMember({"auto"}))->capture_default_str();
    c_eval->add_option("--grid", ev.grid, "paper or a grid JSON file")->capture_default_str();
    c_eval->add_option("--models", ev.models, "Comma-separated subset of lr,rf,mlp")->capture_default_str();
    c_eval->add_flag("--baseline", ev.baseline, "Also evaluate the TF-IDF baseline");
    c_eval->add_option("--out", ev.out, "Report JSON file");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
    c_synth->add_option("--n", synth.spec.n, "Labeled failed jobs")->check(CLI::PositiveNumber)->capture_default_str();
    c_synth->add_option("--flaky-ratio", synth.spec.flaky_ratio)->capture_default_str();
    c_synth->add_option("--signal", synth.signal, "none, weak, medium, strong or a number")->capture_default_str();
    c_synth->add_option("--projects", synth.spec.projects)->check(CLI::PositiveNumber)->capture_default_str();
    c_synth->add_option("--success-builds", synth.spec.success_builds, "Passing builds per failed one")
        ->capture_default_str();
    c_synth->add_option("--out", synth.out, "Corpus root")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*c_ingest) return run_ingest(ingest, g);
        if (*c_stats) return run_stats(stats, g);
        if (*c_classify) return run_classify(classify, g);
        if (*c_label) return run_label(label, g);
        if (*c_features) return run_features(features, g);
        if (*c_train) return run_train(train, g);
        if (*c_predict) return run_predict(predict, g);
        if (*c_eval) return run_evaluate(ev, g);
        if (*c_synth) return run_synth(synth, g);
    } catch (const flaky::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
