#include "flaky/taxonomy.hpp"

#include "flaky/error.hpp"
#include "flaky/random.hpp"

#include <boost/regex.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>

namespace flaky {

// Defined in the generated builtin_patterns.cpp.
extern const char* const kBuiltinPatternLibrary;

struct FailurePattern::Compiled {
    boost::regex re;
};

namespace {

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "FlakyTest",
    "NetworkIssue",
    "DependencyResolution",
    "ExternalEnvironmentInconsistency",
    "ApiServiceUnavailable",
    "ConcurrencyIssue",
    "CompilationError",
    "ExecutionCrash",
    "FileSystemInteractionError",
    "StaticAnalysisError",
    "MemoryLimit",
    "TimeoutExceeded",
    "CacheIssue",
    "ContainerIssue",
    "RunnerCommunication",
};

std::vector<CategoryInfo> make_catalog() {
    using C = FailureCategory;
    return {
        {C::FlakyTest, "Tests that pass or fail without code changes", {}, {"Rerun"}, false},
        {C::NetworkIssue,
         "Temporary network instability during job execution",
         {"Request Timeout", "Connection Reset", "Resource Download Interruption", "TLS Handshake Failure",
          "Connection Refuse"},
         {"Rerun"},
         false},
        {C::DependencyResolution,
         "Problems retrieving required dependencies",
         {"Network Issue", "Missing Dependency"},
         {"Rerun", "Upload Artifact"},
         false},
        {C::ExternalEnvironmentInconsistency,
         "External settings not under version control",
         {"Workflow Policy Violation", "Authentication Failure", "Artifact Conflict", "Tool Intermittent Failure",
          "Upstream Repository Issue"},
         {"Add Label", "Approve Pull Request", "Mark Pull Request as Ready", "Refresh Token", "Add to Allowlist",
          "Delete Artifact", "Rerun", "Fix Upstream Issue"},
         false},
        {C::ApiServiceUnavailable, "External API usage quota exceeded", {"API Rate Limit"}, {"Rerun"}, false},
        {C::ConcurrencyIssue,
         "Unintended interaction among concurrent tasks or threads",
         {"Lock Contention", "Concurrent Collection Modification"},
         {"Rerun"},
         false},
        {C::CompilationError,
         "Failures during the compilation stage",
         {"Network Issue", "Corrupted Cache", "Upstream Repository Issue", "Dirty Cache", "Runner Incompatibility",
          "Tool Intermittent Failure", "Missing Dependency"},
         {"Rerun", "Refresh Cache", "Fix Upstream Issue", "Update Runner", "Upload Artifact"},
         false},
        {C::ExecutionCrash,
         "Process or environment fails to start or terminates abruptly",
         {"Out Of Memory", "Unstable Runner Environment"},
         {"Rerun"},
         false},
        {C::FileSystemInteractionError,
         "Failures interacting with the local file system",
         {"Network Issue", "API Rate Limit", "External Resource Inconsistency", "Unstable Cache Key",
          "Authentication Failure"},
         {"Rerun", "Update External Resource", "Update Permission"},
         false},
        {C::StaticAnalysisError,
         "Failures while running static analysis tools",
         {"Upstream Repository Issue", "Network Issue", "External Resource Inconsistency", "Stale Cache",
          "API Rate Limit"},
         {"Fix Upstream Issue", "Rerun", "Update External Resource", "Refresh Cache"},
         false},
        {C::MemoryLimit,
         "Job exceeds memory or disk available on the runner",
         {"Heap Memory Exhaustion", "Disk Space Exhaustion"},
         {"Rerun", "Clean Disk Space"},
         false},
        {C::TimeoutExceeded, "Job, step or test exceeds its time limit", {}, {}, true},
        {C::CacheIssue, "Cache service errors or corrupted restored caches", {}, {}, true},
        {C::ContainerIssue, "Docker daemon, image pull or service-container failures", {}, {}, true},
        {C::RunnerCommunication, "Runner shut down or lost contact with the service", {}, {}, true},
    };
}

bool has_greedy_wildcard(std::string_view rx) {
    for (std::size_t i = 0; i + 1 < rx.size(); ++i) {
        if (rx[i] == '\\') {
            ++i;  // skip escaped char
            continue;
        }
        if (rx[i] == '.' && (rx[i + 1] == '*' || rx[i + 1] == '+')) {
            if (i + 2 >= rx.size() || rx[i + 2] != '?') return true;
        }
    }
    return false;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (end == text.size()) break;
        start = end + 1;
    }
    if (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

const boost::regex& runner_timestamp_re() {
    static const boost::regex re(R"(^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d+)?Z ?)");
    return re;
}

const boost::regex& failure_marker_re() {
    static const boost::regex re(
        R"((?:\berror\b|\berrors?:|\bERROR\b|##\[error\]|\bE:|\bfail(?:ed|ure|ures|ing|s)?\b|\bFAIL(?:ED|URE)?\b|\bfatal\b|\bFATAL\b|exception\b|Exception\b|\bpanic\b|\bdenied\b|\brefused\b|\bunreachable\b|timed out|\btimeout\b|\bkilled\b|\bcannot\b|could not|couldn't|unable to|\bno space left\b|out of memory|rate limit|\baborted\b|\bcrash(?:ed)?\b|segmentation fault|\bunauthorized\b|\bforbidden\b|not found|reset by peer|broken pipe|\bexceeded\b|lost communication|shutdown signal|exit code [1-9]|does not exist|no such file|toomanyrequests|bad credentials|missing required|draft state|violations?\b|\bcorrupt))",
        boost::regex::perl | boost::regex::icase);
    return re;
}

// Variable-token alternation used by generalize(). Paths cover owner/name
// slugs.
const boost::regex& variable_token_re() {
    static const boost::regex re(
        R"([A-Za-z][A-Za-z0-9+.\-]*://[^\s'"<>()\[\]{},]+)"
        R"(|\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}(?::\d{2}(?:[.,]\d+)?)?(?:Z|[+-]\d{2}:?\d{2})?)?)"
        R"(|\b\d{1,2}:\d{2}:\d{2}(?:[.,]\d+)?\b)"
        R"(|(?:[A-Za-z]:)?[\\/]?(?:[\w.@+~\-]+[\\/])+[\w.@+~\-]*)"
        R"(|\bv?\d+(?:\.\d+)+(?:[\-+][\w.]+)?\b)"
        R"(|\b0x[0-9A-Fa-f]+\b)"
        R"(|\b(?=[0-9A-Fa-f]*\d)(?=[0-9A-Fa-f]*[A-Fa-f])[0-9A-Fa-f]{7,}\b)"
        R"(|\b\d{6,}\b)",
        boost::regex::perl);
    return re;
}

constexpr std::string_view kWildcard = ".*?";
constexpr std::string_view kMeta = "\\^$.|?*+()[]{}";

bool is_meta(char c) { return kMeta.find(c) != std::string_view::npos; }

// A pattern piece: literal text (unescaped) or a wildcard.
struct Segment {
    bool wildcard = false;
    std::string text;
};

// Reads text as a (possibly already generalized) pattern: "\x" for a
// metacharacter x is that literal character, ".*?" is a wildcard, everything
// else is literal.
std::vector<Segment> lex(std::string_view s) {
    std::vector<Segment> out;
    auto literal = [&](char c) {
        if (out.empty() || out.back().wildcard) out.push_back({false, {}});
        out.back().text.push_back(c);
    };
    for (std::size_t i = 0; i < s.size();) {
        if (s.substr(i, kWildcard.size()) == kWildcard) {
            if (out.empty() || !out.back().wildcard) out.push_back({true, {}});
            i += kWildcard.size();
        } else if (s[i] == '\\' && i + 1 < s.size() && is_meta(s[i + 1])) {
            literal(s[i + 1]);
            i += 2;
        } else {
            literal(s[i]);
            ++i;
        }
    }
    return out;
}

std::string render(const std::vector<Segment>& segs) {
    std::string out;
    for (const auto& seg : segs) {
        if (seg.wildcard) {
            out += kWildcard;
            continue;
        }
        for (char c : seg.text) {
            if (is_meta(c)) out.push_back('\\');
            out.push_back(c);
        }
    }
    return out;
}

bool trailing_punct(char c) { return std::string_view(".,;:!?'\")]").find(c) != std::string_view::npos; }

std::vector<Segment> abstract_literals(const std::vector<Segment>& segs) {
    std::vector<Segment> out;
    auto push = [&](Segment s) {
        if (s.wildcard) {
            if (!out.empty() && out.back().wildcard) return;
            out.push_back(std::move(s));
        } else if (!s.text.empty()) {
            if (!out.empty() && !out.back().wildcard) {
                out.back().text += s.text;
            } else {
                out.push_back(std::move(s));
            }
        }
    };
    for (const auto& seg : segs) {
        if (seg.wildcard) {
            push(seg);
            continue;
        }
        const std::string& t = seg.text;
        std::size_t cursor = 0;
        boost::sregex_iterator it(t.begin(), t.end(), variable_token_re());
        for (; it != boost::sregex_iterator(); ++it) {
            auto start = static_cast<std::size_t>(it->position());
            auto end = start + static_cast<std::size_t>(it->length());
            if (start < cursor) continue;
            while (end > start && trailing_punct(t[end - 1])) --end;
            if (end == start) continue;
            push({false, t.substr(cursor, start - cursor)});
            push({true, {}});
            cursor = end;
        }
        push({false, t.substr(cursor)});
    }
    return out;
}

std::string generalize_once(std::string_view s) { return render(abstract_literals(lex(s))); }

}  // namespace

std::string_view to_string(FailureCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

FailureCategory parse_category(std::string_view name) {
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
        if (kCategoryNames[i] == name) return static_cast<FailureCategory>(i);
    }
    throw ContractError("unknown failure category: " + std::string(name));
}

const std::vector<FailureCategory>& all_categories() {
    static const std::vector<FailureCategory> cats = [] {
        std::vector<FailureCategory> v;
        for (std::size_t i = 0; i < kCategoryCount; ++i) v.push_back(static_cast<FailureCategory>(i));
        return v;
    }();
    return cats;
}

const CategoryInfo& category_info(FailureCategory c) {
    static const std::vector<CategoryInfo> catalog = make_catalog();
    return catalog[static_cast<std::size_t>(c)];
}

FailurePattern::FailurePattern(std::string id, std::string regex, FailureCategory category, std::string provenance)
    : id_(std::move(id)), regex_(std::move(regex)), category_(category), provenance_(std::move(provenance)) {
    if (has_greedy_wildcard(regex_)) {
        throw ContractError("pattern " + id_ + " has a greedy wildcard: " + regex_);
    }
    try {
        compiled_ = std::make_shared<const Compiled>(Compiled{boost::regex(regex_, boost::regex::perl)});
    } catch (const boost::regex_error& e) {
        throw ContractError("pattern " + id_ + " does not compile: " + e.what());
    }
}

bool FailurePattern::matches(std::string_view line) const {
    try {
        return boost::regex_match(line.begin(), line.end(), compiled_->re);
    } catch (const std::runtime_error&) {
        // boost raises on pathological backtracking; treat as no match
        return false;
    }
}

PatternLibrary::PatternLibrary(std::vector<FailurePattern> patterns) : patterns_(std::move(patterns)) {}

PatternLibrary PatternLibrary::from_json(const nlohmann::json& doc) {
    try {
        if (doc.value("schema_version", 0) != 1) {
            throw ContractError("unsupported pattern library schema_version");
        }
        std::vector<FailurePattern> patterns;
        std::vector<std::string> ids;
        for (const auto& p : doc.at("patterns")) {
            patterns.emplace_back(p.at("id").get<std::string>(), p.at("regex").get<std::string>(),
                                  parse_category(p.at("category").get<std::string>()),
                                  p.value("provenance", std::string{}));
            ids.push_back(patterns.back().id());
        }
        std::sort(ids.begin(), ids.end());
        if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
            throw ContractError("duplicate pattern id in library");
        }
        return PatternLibrary(std::move(patterns));
    } catch (const nlohmann::json::exception& e) {
        throw ContractError(std::string("malformed pattern library: ") + e.what());
    }
}

PatternLibrary PatternLibrary::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ContractError("cannot open pattern library " + file.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError(file.string() + ": " + e.what());
    }
}

const PatternLibrary& PatternLibrary::builtin() {
    static const PatternLibrary lib = from_json(nlohmann::json::parse(kBuiltinPatternLibrary));
    return lib;
}

nlohmann::json PatternLibrary::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : patterns_) {
        arr.push_back({{"id", p.id()},
                       {"regex", p.regex()},
                       {"category", std::string(to_string(p.category()))},
                       {"provenance", p.provenance()}});
    }
    return {{"schema_version", 1}, {"patterns", std::move(arr)}};
}

std::string_view strip_runner_timestamp(std::string_view line) {
    boost::match_results<std::string_view::const_iterator> m;
    if (boost::regex_search(line.begin(), line.end(), m, runner_timestamp_re())) {
        line.remove_prefix(static_cast<std::size_t>(m.length(0)));
    }
    return line;
}

bool is_failure_indicative(std::string_view line) {
    return boost::regex_search(line.begin(), line.end(), failure_marker_re());
}

std::string extract_failure_message(std::string_view raw_log) {
    const auto lines = split_lines(raw_log);
    const std::size_t from = lines.size() > kTailWindowLines ? lines.size() - kTailWindowLines : 0;
    std::string out;
    for (std::size_t i = from; i < lines.size(); ++i) {
        const auto line = strip_runner_timestamp(lines[i]);
        if (!is_failure_indicative(line)) continue;
        if (!out.empty()) out.push_back('\n');
        out.append(line);
    }
    return out;
}

std::string generalize(std::string_view message) {
    std::string current = generalize_once(message);
    for (int i = 0; i < 8; ++i) {
        auto next = generalize_once(current);
        if (next == current) break;
        current = std::move(next);
    }
    return current;
}

MatchResult match(std::string_view message, const PatternLibrary& library) {
    MatchResult r;
    r.message = std::string(message);
    if (message.empty()) {
        r.unmatched_reason = "empty message";
        return r;
    }
    const auto lines = split_lines(message);
    for (const auto& pattern : library.patterns()) {
        for (const auto line : lines) {
            if (pattern.matches(line)) {
                r.matched = MatchResult::Hit{pattern.id(), pattern.category()};
                return r;
            }
        }
    }
    r.unmatched_reason = "no pattern matched";
    return r;
}

MatchResult classify_log(std::string_view raw_log, const PatternLibrary& library) {
    const auto message = extract_failure_message(raw_log);
    if (message.empty() && !raw_log.empty()) {
        MatchResult r;
        r.unmatched_reason = "no failure-indicative lines";
        return r;
    }
    return match(message, library);
}

CoverageReport coverage_report(const std::vector<std::string>& raw_logs, const PatternLibrary& library,
                               std::uint64_t seed, std::size_t sample_size) {
    CoverageReport report;
    std::vector<UnmatchedSample> unmatched;
    for (std::size_t i = 0; i < raw_logs.size(); ++i) {
        auto r = classify_log(raw_logs[i], library);
        if (r.matched) {
            ++report.matched_count;
        } else {
            unmatched.push_back({i, std::move(r.message), r.unmatched_reason.value_or("")});
        }
    }
    report.unmatched_count = unmatched.size();
    Rng rng(seed);
    const auto k = std::min(sample_size, unmatched.size());
    for (std::size_t i = 0; i < k; ++i) std::swap(unmatched[i], unmatched[i + rng.below(unmatched.size() - i)]);
    unmatched.resize(k);
    std::sort(unmatched.begin(), unmatched.end(),
              [](const UnmatchedSample& a, const UnmatchedSample& b) { return a.log_index < b.log_index; });
    report.unmatched_samples = std::move(unmatched);
    return report;
}

}  // namespace flaky
