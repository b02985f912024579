#include "flaky/features.hpp"

#include "flaky/error.hpp"

#include <boost/regex.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

namespace flaky {

using nlohmann::json;

namespace {

constexpr auto kMonth = std::chrono::days(30);
constexpr auto kQuarter = std::chrono::days(90);
constexpr int kCoreMemberCommits = 20;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

bool contains(const std::string& hay, std::string_view needle) { return hay.find(needle) != std::string::npos; }

std::string extension_of(const std::string& path) {
    const auto slash = path.find_last_of('/');
    const auto name = slash == std::string::npos ? path : path.substr(slash + 1);
    const auto dot = name.find_last_of('.');
    return dot == std::string::npos || dot == 0 ? "" : lower(name.substr(dot + 1));
}

template <class T>
std::optional<T> opt(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

std::vector<std::string> build_feature_names() {
    std::vector<std::string> n = {
        "gh_num_committers",
        "repo_team_size",
        "gh_committer_trust_recent",
        "gh_committer_trust_hist",
        "gh_same_committer",
        "gh_committer_repo_exp",
        "gh_committer_first_build",
        "gh_committer_cross_project_exp",
        "is_core_member",
        "gh_commits",
        "gh_commits_on_files_touched",
        "gh_src_churn",
        "gh_test_churn",
        "gh_tests_added",
        "gh_tests_deleted",
        "gh_lines_added",
        "gh_lines_deleted",
        "gh_files_added",
        "gh_files_deleted",
        "gh_files_modified",
        "gh_files_type_modified",
        "gh_files_entropy",
    };
    for (const auto& c : commit_types()) n.push_back("git_commit_attention=" + c);
    for (const char* s : {"gh_cross_module_changes", "src_ast_diff", "test_ast_diff", "ast_class_added",
                          "ast_class_deleted", "ast_class_modified", "ast_met_added", "ast_met_deleted",
                          "ast_met_changed", "ast_met_body_modified", "ast_field_added", "ast_field_deleted",
                          "ast_import_added", "ast_import_deleted", "repo_fail_rate_history", "repo_fail_rate_recent",
                          "gh_hotspot_files_touched", "gh_prev_same_files", "gh_prev_build_result"}) {
        n.emplace_back(s);
    }
    for (const auto& c : error_step_types()) n.push_back("gh_first_error_step=" + c);
    for (auto c : all_categories()) n.push_back("sub_reason=" + std::string(to_string(c)));
    n.emplace_back("sub_reason=unknown");
    for (const char* s : {"sloc_initial", "test_lines_initial", "tests_ran", "tests_passed", "tests_failed",
                          "concurrent_jobs", "gh_dependencies_churn", "gh_dependencies_count", "dockerfile_changed",
                          "is_artifact_share", "is_runner_changed", "gh_num_pr_comments", "duration", "log_warn_nums",
                          "external_github_resource", "time_of_day", "day_of_week"}) {
        n.emplace_back(s);
    }
    for (const auto& c : runner_types()) n.push_back("runner_type=" + c);
    for (const auto& c : os_types()) n.push_back("operation_system=" + c);
    return n;
}

const std::map<std::string, std::size_t>& feature_positions() {
    static const auto pos = [] {
        std::map<std::string, std::size_t> m;
        const auto& names = feature_names();
        for (std::size_t i = 0; i < names.size(); ++i) m[names[i]] = i;
        return m;
    }();
    return pos;
}

class Writer {
public:
    explicit Writer(StructuredFeatureVector& v) : v_(v) { v_.values.assign(feature_names().size(), 0.0); }
    void set(const std::string& name, double value) {
        const auto& pos = feature_positions();
        auto it = pos.find(name);
        if (it == pos.end()) throw ContractError("unknown feature " + name);
        v_.values[it->second] = value;
    }
    void one_hot(const std::string& prefix, const std::string& category) { set(prefix + "=" + category, 1.0); }

private:
    StructuredFeatureVector& v_;
};

FileSummary summarize(const std::optional<std::string>& src) { return src ? parse_java(*src) : FileSummary{}; }

std::string os_of(const std::vector<std::string>& labels, const std::string& runner_name) {
    std::string all = lower(runner_name);
    for (const auto& l : labels) all += " " + lower(l);
    if (contains(all, "windows")) return "windows";
    if (contains(all, "macos") || contains(all, "mac-") || contains(all, "osx")) return "macos";
    if (contains(all, "ubuntu") || contains(all, "linux") || contains(all, "debian")) return "linux";
    return "unknown";
}

std::string runner_of(const std::vector<std::string>& labels, const std::string& runner_name) {
    for (const auto& l : labels) {
        if (lower(l) == "self-hosted") return "self-hosted";
    }
    if (!labels.empty() || runner_name.rfind("GitHub Actions", 0) == 0) return "hosted";
    return "unknown";
}

}  // namespace

// --- change context ----------------------------------------------------------

ChangeContext ChangeContext::from_json(const json& doc) {
    try {
        ChangeContext c;
        c.author = doc.value("author", "");
        c.committer = doc.value("committer", "");
        for (const auto& cj : doc.value("commits", json::array())) {
            CommitInfo ci;
            ci.sha = cj.value("sha", "");
            ci.author = cj.value("author", "");
            ci.committer = cj.value("committer", "");
            ci.message = cj.value("message", "");
            if (auto ts = opt<std::string>(cj, "timestamp")) ci.timestamp = parse_timestamp(*ts);
            c.commits.push_back(std::move(ci));
        }
        for (const auto& fj : doc.value("files", json::array())) {
            FileChange f;
            f.path = fj.at("path").get<std::string>();
            f.status = fj.value("status", "modified");
            f.additions = fj.value("additions", 0);
            f.deletions = fj.value("deletions", 0);
            f.before = opt<std::string>(fj, "before");
            f.after = opt<std::string>(fj, "after");
            if (f.additions < 0 || f.deletions < 0) throw StructuralInputError("negative line counts in " + f.path);
            c.files.push_back(std::move(f));
        }
        const auto repo = doc.value("repo", json::object());
        c.sloc = opt<double>(repo, "sloc");
        c.test_lines = opt<double>(repo, "test_lines");
        c.dependencies_count = opt<double>(repo, "dependencies_count");
        c.committer_cross_project_commits = opt<double>(repo, "committer_cross_project_commits");
        c.pr_comments = opt<double>(doc, "pr_comments");
        return c;
    } catch (const json::exception& e) {
        throw StructuralInputError(std::string("malformed change document: ") + e.what());
    }
}

json ChangeContext::to_json() const {
    json commits_j = json::array();
    for (const auto& c : commits) {
        json cj = {{"sha", c.sha}, {"author", c.author}, {"committer", c.committer}, {"message", c.message}};
        if (c.timestamp) cj["timestamp"] = format_timestamp(*c.timestamp);
        commits_j.push_back(std::move(cj));
    }
    json files_j = json::array();
    for (const auto& f : files) {
        files_j.push_back({{"path", f.path},
                           {"status", f.status},
                           {"additions", f.additions},
                           {"deletions", f.deletions},
                           {"before", f.before ? json(*f.before) : json(nullptr)},
                           {"after", f.after ? json(*f.after) : json(nullptr)}});
    }
    json repo = json::object();
    if (sloc) repo["sloc"] = *sloc;
    if (test_lines) repo["test_lines"] = *test_lines;
    if (dependencies_count) repo["dependencies_count"] = *dependencies_count;
    if (committer_cross_project_commits) repo["committer_cross_project_commits"] = *committer_cross_project_commits;
    json doc = {{"schema_version", 1},
                {"author", author},
                {"committer", committer},
                {"commits", std::move(commits_j)},
                {"files", std::move(files_j)},
                {"repo", std::move(repo)}};
    if (pr_comments) doc["pr_comments"] = *pr_comments;
    return doc;
}

std::string ChangeContext::head_committer() const {
    if (!committer.empty()) return committer;
    if (!commits.empty()) return commits.back().committer.empty() ? commits.back().author : commits.back().committer;
    return author;
}

// --- helpers -----------------------------------------------------------------

double trust_score(int successes, int total) {
    if (successes < 0 || successes > total) throw ContractError("trust_score needs 0 <= successes <= total");
    return (successes + 1.0) / (total + 2.0);
}

double change_entropy(const std::vector<double>& per_file_churn) {
    double total = 0.0;
    for (double c : per_file_churn) {
        if (c < 0) throw ContractError("churn must be nonnegative");
        total += c;
    }
    if (per_file_churn.size() <= 1 || total <= 0) return 0.0;
    double h = 0.0;
    for (double c : per_file_churn) {
        if (c > 0) h -= (c / total) * std::log2(c / total);
    }
    return h;
}

bool is_test_path(const std::string& path) {
    const auto p = lower(path);
    const auto slash = p.find_last_of('/');
    const auto name = slash == std::string::npos ? p : p.substr(slash + 1);
    return contains(p, "/test/") || contains(p, "/tests/") || p.rfind("test/", 0) == 0 || p.rfind("tests/", 0) == 0 ||
           contains(name, "test.") || contains(name, "tests.") || name.rfind("test_", 0) == 0 ||
           contains(name, "_test.") || contains(name, "it.java");
}

bool is_dependency_manifest(const std::string& path) {
    static const std::set<std::string> names = {"pom.xml",          "build.gradle",     "build.gradle.kts",
                                                "settings.gradle",  "libs.versions.toml", "package.json",
                                                "package-lock.json", "yarn.lock",        "requirements.txt",
                                                "pyproject.toml",   "setup.py",         "go.mod",
                                                "go.sum",           "cargo.toml",       "cargo.lock",
                                                "gemfile",          "gemfile.lock",     "ivy.xml"};
    const auto slash = path.find_last_of('/');
    return names.count(lower(slash == std::string::npos ? path : path.substr(slash + 1))) > 0;
}

bool is_dockerfile(const std::string& path) {
    const auto slash = path.find_last_of('/');
    const auto name = lower(slash == std::string::npos ? path : path.substr(slash + 1));
    return name.rfind("dockerfile", 0) == 0 || extension_of(name) == "dockerfile" ||
           name.rfind("docker-compose", 0) == 0;
}

std::string module_of(const std::string& path) {
    const auto slash = path.find('/');
    return slash == std::string::npos ? "" : path.substr(0, slash);
}

const std::vector<std::string>& commit_types() {
    static const std::vector<std::string> v = {"fix", "feat", "chore", "refactor", "test", "docs", "other", "unknown"};
    return v;
}

const std::vector<std::string>& error_step_types() {
    static const std::vector<std::string> v = {"checkout", "setup",  "dependency", "compile", "test",
                                               "static-analysis", "deploy", "other",   "unknown"};
    return v;
}

const std::vector<std::string>& runner_types() {
    static const std::vector<std::string> v = {"hosted", "self-hosted", "unknown"};
    return v;
}

const std::vector<std::string>& os_types() {
    static const std::vector<std::string> v = {"linux", "windows", "macos", "unknown"};
    return v;
}

std::string commit_type(const std::string& message) {
    if (message.empty()) return "unknown";
    static const boost::regex re(R"(^\s*(\w+)(?:\([^)]*\))?!?:)");
    boost::smatch m;
    if (boost::regex_search(message, m, re)) {
        const auto t = lower(m[1].str());
        static const std::map<std::string, std::string> alias = {
            {"fix", "fix"},         {"bugfix", "fix"},          {"hotfix", "fix"},     {"feat", "feat"},
            {"feature", "feat"},    {"chore", "chore"},         {"build", "chore"},    {"ci", "chore"},
            {"refactor", "refactor"}, {"perf", "refactor"},     {"style", "refactor"}, {"test", "test"},
            {"tests", "test"},      {"docs", "docs"},           {"doc", "docs"}};
        auto it = alias.find(t);
        return it == alias.end() ? "other" : it->second;
    }
    return "other";
}

std::string error_step_type(const std::string& step_name) {
    const auto s = lower(step_name);
    // Order matters: "Set up JDK" is setup, "Run unit tests" is test.
    static const std::vector<std::pair<std::string, std::vector<std::string>>> table = {
        {"checkout", {"checkout", "clone", "fetch source"}},
        {"static-analysis",
         {"lint", "checkstyle", "spotbugs", "pmd", "spotless", "sonar", "codeql", "analy", "format", "eslint"}},
        {"test", {"test", "junit", "pytest", "verify", "coverage", "e2e"}},
        {"dependency", {"depend", "install", "restore", "cache", "resolve", "download", "npm ci", "pip"}},
        {"compile", {"compile", "build", "assemble", "make", "package", "javac"}},
        {"deploy", {"deploy", "publish", "release", "upload", "push", "docker push"}},
        {"setup", {"set up", "setup", "configure", "init", "prepare", "start"}},
    };
    for (const auto& [category, words] : table) {
        for (const auto& w : words) {
            if (contains(s, w)) return category;
        }
    }
    return "other";
}

TestCounts parse_test_counts(std::string_view log) {
    static const boost::regex maven(
        R"(Tests run:\s*(\d+),\s*Failures:\s*(\d+),\s*Errors:\s*(\d+),\s*Skipped:\s*(\d+)(.*))");
    static const boost::regex gradle(R"((\d+) tests? completed(?:,\s*(\d+) failed)?(?:,\s*(\d+) skipped)?)");
    static const boost::regex pytest_summary(R"(^=+ .*\b(?:passed|failed|error)\b.*\bin [\d.]+s.*=+\s*$)");
    static const boost::regex pytest_item(R"((\d+) (passed|failed|errors?|skipped))");

    TestCounts summary;
    TestCounts per_class;
    bool have_summary = false;
    std::size_t start = 0;
    while (start < log.size()) {
        auto end = log.find('\n', start);
        if (end == std::string_view::npos) end = log.size();
        const std::string line(strip_runner_timestamp(log.substr(start, end - start)));
        start = end + 1;
        boost::smatch m;
        if (boost::regex_search(line, m, maven)) {
            const double ran = std::stod(m[1]);
            const double failed = std::stod(m[2]) + std::stod(m[3]);
            const double skipped = std::stod(m[4]);
            // Per-class lines carry "Time elapsed"; module summaries do not.
            auto& into = contains(m[5].str(), "Time elapsed") ? per_class : summary;
            if (&into == &summary) have_summary = true;
            into.ran += ran;
            into.failed += failed;
            into.passed += std::max(0.0, ran - failed - skipped);
        } else if (boost::regex_search(line, m, gradle)) {
            const double ran = std::stod(m[1]);
            const double failed = m[2].matched ? std::stod(m[2]) : 0.0;
            const double skipped = m[3].matched ? std::stod(m[3]) : 0.0;
            have_summary = true;
            summary.ran += ran;
            summary.failed += failed;
            summary.passed += std::max(0.0, ran - failed - skipped);
        } else if (boost::regex_match(line, pytest_summary)) {
            have_summary = true;
            for (boost::sregex_iterator it(line.begin(), line.end(), pytest_item), e; it != e; ++it) {
                const double n = std::stod((*it)[1]);
                const auto kind = (*it)[2].str();
                if (kind == "passed") {
                    summary.passed += n;
                    summary.ran += n;
                } else if (kind == "failed" || kind.rfind("error", 0) == 0) {
                    summary.failed += n;
                    summary.ran += n;
                }
            }
        }
    }
    return have_summary ? summary : per_class;
}

// --- history -----------------------------------------------------------------

HistoryBuild history_entry(const CorpusBuild& build) {
    const auto& first = build.seq.first();
    HistoryBuild h;
    h.build_id = first.build_id;
    h.start = first.started_at;
    h.completed = first.outcome.status() == Status::completed;
    h.failed = first.outcome.is(Conclusion::failure);
    h.succeeded = first.outcome.is(Conclusion::success);
    for (const auto& j : first.jobs) h.jobs.push_back({j.name, j.started_at, j.completed_at, j.labels});
    if (build.change) {
        try {
            const auto ctx = ChangeContext::from_json(*build.change);
            h.committer = ctx.head_committer();
            for (const auto& c : ctx.commits) {
                h.commit_shas.push_back(c.sha);
                h.commit_authors.push_back(c.committer.empty() ? c.author : c.committer);
            }
            for (const auto& f : ctx.files) h.files.push_back(f.path);
        } catch (const Error&) {
            // Context errors are reported by extract() for the build itself.
        }
    }
    return h;
}

RepoHistory RepoHistory::from_corpus(const Corpus& corpus) {
    RepoHistory r;
    for (const auto& b : corpus.builds) r.add(b.seq.repo(), history_entry(b));
    return r;
}

void RepoHistory::add(const std::string& repo, HistoryBuild build) {
    auto& v = repos_[repo];
    const auto pos = std::upper_bound(v.begin(), v.end(), build, [](const HistoryBuild& a, const HistoryBuild& b) {
        return std::make_pair(a.start, a.build_id) < std::make_pair(b.start, b.build_id);
    });
    v.insert(pos, std::move(build));
}

std::vector<const HistoryBuild*> RepoHistory::before(const std::string& repo, Timestamp t) const {
    std::vector<const HistoryBuild*> out;
    auto it = repos_.find(repo);
    if (it == repos_.end()) return out;
    for (const auto& b : it->second) {
        if (b.start >= t) break;
        out.push_back(&b);
    }
    return out;
}

double fail_rate(const std::vector<const HistoryBuild*>& history, Millis window, Timestamp as_of) {
    int completed = 0;
    int failed = 0;
    for (const auto* b : history) {
        if (b->start < as_of - window || b->start >= as_of || !b->completed) continue;
        ++completed;
        if (b->failed) ++failed;
    }
    return completed == 0 ? 0.0 : static_cast<double>(failed) / completed;
}

// --- extraction --------------------------------------------------------------

const std::vector<std::string>& feature_names() {
    static const auto names = build_feature_names();
    return names;
}

double StructuredFeatureVector::get(std::string_view name) const {
    const auto& pos = feature_positions();
    auto it = pos.find(std::string(name));
    if (it == pos.end()) throw ContractError("unknown feature " + std::string(name));
    return values.at(it->second);
}

ChangeContext change_context(const CorpusBuild& build, Diagnostics* diags) {
    if (!build.change) return {};
    try {
        return ChangeContext::from_json(*build.change);
    } catch (const Error& e) {
        if (diags) diags->push_back({build.dir.string(), e.what()});
        return {};
    }
}

StructuredFeatureVector extract(const JobInput& input, const ChangeContext& ctx, const RepoHistory& history,
                                const PatternLibrary& library) {
    if (!input.build || !input.job) throw ContractError("extract needs a build and a job");
    StructuredFeatureVector v;
    Writer w(v);
    const auto& seq = input.build->seq;
    const auto& first = seq.first();
    const Timestamp t0 = first.started_at;
    const auto past = history.before(seq.repo(), t0);
    const std::string committer = ctx.head_committer();

    // Developer
    std::set<std::string> committers;
    for (const auto& c : ctx.commits) committers.insert(c.committer.empty() ? c.author : c.committer);
    if (committers.empty() && !committer.empty()) committers.insert(committer);
    w.set("gh_num_committers", static_cast<double>(committers.size()));

    std::set<std::string> team;
    int recent_total = 0;
    int recent_ok = 0;
    int hist_total = 0;
    int hist_ok = 0;
    bool seen_before = false;
    std::set<std::string> prior_commits;
    for (const auto* b : past) {
        if (b->start >= t0 - kQuarter && !b->committer.empty()) team.insert(b->committer);
        for (std::size_t i = 0; i < b->commit_shas.size(); ++i) {
            if (!committer.empty() && b->commit_authors[i] == committer) prior_commits.insert(b->commit_shas[i]);
        }
        if (committer.empty() || b->committer != committer) continue;
        seen_before = true;
        if (!b->completed) continue;
        if (b->start >= t0 - kQuarter) {
            ++hist_total;
            hist_ok += b->succeeded;
        }
        if (b->start >= t0 - kMonth) {
            ++recent_total;
            recent_ok += b->succeeded;
        }
    }
    w.set("repo_team_size", static_cast<double>(team.size()));
    w.set("gh_committer_trust_recent", trust_score(recent_ok, recent_total));
    w.set("gh_committer_trust_hist", trust_score(hist_ok, hist_total));
    w.set("gh_same_committer", !ctx.author.empty() && ctx.author == ctx.committer ? 1.0 : 0.0);
    w.set("gh_committer_repo_exp", static_cast<double>(prior_commits.size()));
    w.set("gh_committer_first_build", seen_before ? 0.0 : 1.0);
    w.set("gh_committer_cross_project_exp", ctx.committer_cross_project_commits.value_or(0.0));
    w.set("is_core_member", prior_commits.size() >= kCoreMemberCommits ? 1.0 : 0.0);

    // Code change
    std::set<std::string> touched;
    for (const auto& f : ctx.files) touched.insert(f.path);
    w.set("gh_commits", static_cast<double>(ctx.commits.size()));
    std::set<std::string> commits_on_touched;
    for (const auto* b : past) {
        if (b->start < t0 - kQuarter) continue;
        const bool overlaps = std::any_of(b->files.begin(), b->files.end(),
                                          [&](const std::string& f) { return touched.count(f) > 0; });
        if (overlaps) commits_on_touched.insert(b->commit_shas.begin(), b->commit_shas.end());
    }
    w.set("gh_commits_on_files_touched", static_cast<double>(commits_on_touched.size()));

    double src_churn = 0;
    double test_churn = 0;
    double added = 0;
    double deleted = 0;
    double dep_churn = 0;
    int files_added = 0;
    int files_deleted = 0;
    int files_modified = 0;
    bool dockerfile = false;
    std::set<std::string> types;
    std::set<std::string> modules;
    std::vector<double> churn;
    StructuralDiff src_ast;
    StructuralDiff test_ast;
    for (const auto& f : ctx.files) {
        const double c = f.additions + f.deletions;
        churn.push_back(c);
        (is_test_path(f.path) ? test_churn : src_churn) += c;
        added += f.additions;
        deleted += f.deletions;
        if (f.status == "added") {
            ++files_added;
        } else if (f.status == "deleted" || f.status == "removed") {
            ++files_deleted;
        } else {
            ++files_modified;
        }
        types.insert(extension_of(f.path));
        modules.insert(module_of(f.path));
        if (is_dependency_manifest(f.path)) dep_churn += c;
        if (is_dockerfile(f.path)) dockerfile = true;
        if (extension_of(f.path) != "java") continue;
        StructuralDiff d;
        try {
            d = structural_diff(summarize(f.before), summarize(f.after));
        } catch (const StructuralInputError& e) {
            d = line_based_diff(f.before.value_or(""), f.after.value_or(""));
            v.structural_fallback = true;
            v.diagnostics.push_back({f.path, std::string("line-based structural diff: ") + e.what()});
        }
        (is_test_path(f.path) ? test_ast : src_ast) += d;
    }
    StructuralDiff ast = src_ast;
    ast += test_ast;
    w.set("gh_src_churn", src_churn);
    w.set("gh_test_churn", test_churn);
    w.set("gh_tests_added", ast.tests_added);
    w.set("gh_tests_deleted", ast.tests_deleted);
    w.set("gh_lines_added", added);
    w.set("gh_lines_deleted", deleted);
    w.set("gh_files_added", files_added);
    w.set("gh_files_deleted", files_deleted);
    w.set("gh_files_modified", files_modified);
    w.set("gh_files_type_modified", static_cast<double>(types.size()));
    w.set("gh_files_entropy", change_entropy(churn));
    w.one_hot("git_commit_attention", ctx.commits.empty() ? "unknown" : commit_type(ctx.commits.back().message));
    w.set("gh_cross_module_changes", modules.size() > 1 ? static_cast<double>(modules.size() - 1) : 0.0);
    w.set("src_ast_diff", src_ast.total());
    w.set("test_ast_diff", test_ast.total());
    w.set("ast_class_added", ast.class_added);
    w.set("ast_class_deleted", ast.class_deleted);
    w.set("ast_class_modified", ast.class_modified);
    w.set("ast_met_added", ast.method_added);
    w.set("ast_met_deleted", ast.method_deleted);
    w.set("ast_met_changed", ast.method_changed);
    w.set("ast_met_body_modified", ast.method_body_modified);
    w.set("ast_field_added", ast.field_added);
    w.set("ast_field_deleted", ast.field_deleted);
    w.set("ast_import_added", ast.import_added);
    w.set("ast_import_deleted", ast.import_deleted);

    // Project and context
    w.set("repo_fail_rate_history", fail_rate(past, kQuarter, t0));
    w.set("repo_fail_rate_recent", fail_rate(past, kMonth, t0));

    std::map<std::string, int> mods;
    for (const auto* b : past) {
        if (b->start < t0 - kQuarter) continue;
        for (const auto& f : b->files) ++mods[f];
    }
    std::vector<std::pair<int, std::string>> ranked;
    for (const auto& [f, n] : mods) ranked.emplace_back(-n, f);
    std::sort(ranked.begin(), ranked.end());
    const auto hot_count = (ranked.size() + 9) / 10;
    std::set<std::string> hot;
    for (std::size_t i = 0; i < hot_count; ++i) hot.insert(ranked[i].second);
    w.set("gh_hotspot_files_touched",
          static_cast<double>(std::count_if(touched.begin(), touched.end(), [&](auto& f) { return hot.count(f); })));

    const HistoryBuild* prev = past.empty() ? nullptr : past.back();
    double same = 0;
    if (prev) {
        for (const auto& f : prev->files) same += touched.count(f);
    }
    w.set("gh_prev_same_files", same);
    w.set("gh_prev_build_result", !prev || !prev->completed ? 0.5 : prev->succeeded ? 1.0 : 0.0);

    std::string step_type = "unknown";
    for (const auto& s : input.job->steps) {
        if (s.outcome.is(Conclusion::failure)) {
            step_type = error_step_type(s.name);
            break;
        }
    }
    w.one_hot("gh_first_error_step", step_type);

    const auto cls = classify_log(input.log, library);
    w.one_hot("sub_reason", cls.matched ? std::string(to_string(cls.matched->category)) : "unknown");

    w.set("sloc_initial", ctx.sloc.value_or(0.0));
    w.set("test_lines_initial", ctx.test_lines.value_or(0.0));
    const auto tc = parse_test_counts(input.log);
    w.set("tests_ran", tc.ran);
    w.set("tests_passed", tc.passed);
    w.set("tests_failed", tc.failed);

    const Timestamp js = input.job->started_at;
    int concurrent = 0;
    auto overlaps = [&](Timestamp s, Timestamp e) { return s <= js && js < e; };
    for (const auto* b : past) {
        for (const auto& j : b->jobs) concurrent += overlaps(j.start, j.end);
    }
    for (const auto& j : first.jobs) {
        if (&j != input.job) concurrent += overlaps(j.started_at, j.completed_at);
    }
    w.set("concurrent_jobs", concurrent);
    w.set("gh_dependencies_churn", dep_churn);
    w.set("gh_dependencies_count", ctx.dependencies_count.value_or(0.0));
    w.set("dockerfile_changed", dockerfile ? 1.0 : 0.0);

    bool artifacts = false;
    for (const auto& j : first.jobs) {
        for (const auto& s : j.steps) artifacts = artifacts || contains(lower(s.name), "artifact");
    }
    w.set("is_artifact_share", artifacts ? 1.0 : 0.0);

    bool runner_changed = false;
    for (auto it = past.rbegin(); it != past.rend(); ++it) {
        auto j = std::find_if((*it)->jobs.begin(), (*it)->jobs.end(),
                              [&](const HistoryBuild::Job& x) { return x.name == input.job->name; });
        if (j == (*it)->jobs.end()) continue;
        runner_changed = j->labels != input.job->labels;
        break;
    }
    w.set("is_runner_changed", runner_changed ? 1.0 : 0.0);
    w.set("gh_num_pr_comments", ctx.pr_comments.value_or(0.0));
    w.set("duration", std::max<double>(0.0, std::chrono::duration<double>(input.job->duration()).count()));

    static const boost::regex warn_re(R"(\bwarn(?:ing)?\b|##\[warning\])", boost::regex::perl | boost::regex::icase);
    static const boost::regex external_re(R"(github\.com/|githubusercontent\.com|ghcr\.io)");
    w.set("log_warn_nums", static_cast<double>(std::distance(
                               boost::sregex_iterator(input.log.begin(), input.log.end(), warn_re), {})));
    w.set("external_github_resource", boost::regex_search(input.log, external_re) ? 1.0 : 0.0);

    const auto day = std::chrono::floor<std::chrono::days>(t0);
    const std::chrono::hh_mm_ss hms(t0 - day);
    w.set("time_of_day", static_cast<double>(hms.hours().count()));
    const std::chrono::weekday wd(day);
    w.set("day_of_week", static_cast<double>(wd.iso_encoding() - 1));  // Monday = 0
    w.one_hot("runner_type", runner_of(input.job->labels, input.job->runner_name));
    w.one_hot("operation_system", os_of(input.job->labels, input.job->runner_name));
    return v;
}

void write_feature_csv(std::ostream& out, const std::vector<std::string>& job_refs, const std::vector<int>& labels,
                       const std::vector<StructuredFeatureVector>& rows) {
    if (job_refs.size() != rows.size() || labels.size() != rows.size()) {
        throw ContractError("feature export inputs differ in length");
    }
    auto quote = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };
    out << "job_ref,label";
    for (const auto& n : feature_names()) out << ',' << quote(n);
    out << '\n';
    char buf[64];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        out << quote(job_refs[r]) << ',' << labels[r];
        for (double x : rows[r].values) {
            const auto res = std::to_chars(buf, buf + sizeof buf, x);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
}

}  // namespace flaky
