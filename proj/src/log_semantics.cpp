#include "flaky/log_semantics.hpp"

#include "flaky/error.hpp"
#include "flaky/taxonomy.hpp"

#include <boost/regex.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

namespace flaky {

using nlohmann::json;

namespace {

const boost::regex& critical_line_re() {
    static const boost::regex re(
        R"(^\s*(?:E:|E\s|\[?(?:ERROR|FATAL|CRITICAL|SEVERE)\]?\b|(?:[Ee]rror|[Ff]atal|FAILED|FAIL|[Pp]anic)\b:?|##\[error\]|Traceback\b|Caused by:))"
        R"(|\blevel=["']?(?:fatal|error|panic|crit(?:ical)?)\b)"
        R"(|(?:^|[\s:(])[\w$.]*(?:Exception|Error)(?::|\s|$))"
        R"(|^\s+at\s+[\w$.<>/\-]+\()"
        R"(|^\s+File ".*?", line \d+)",
        boost::regex::perl);
    return re;
}

struct Rule {
    boost::regex re;
    std::string_view token;
};

const std::vector<Rule>& normalization_rules() {
    static const std::vector<Rule> rules = [] {
        const auto perl = boost::regex::perl;
        std::vector<Rule> r;
        r.push_back({boost::regex(R"([A-Za-z][A-Za-z0-9+.\-]*://[^\s'"<>()\[\]{}]+)", perl), kUrlToken});
        r.push_back({boost::regex(R"(\d{4}-\d{2}-\d{2}(?:[T ]\d{2}:\d{2}:\d{2}(?:[.,]\d+)?(?:Z|[+-]\d{2}:?\d{2})?)?)"
                                  R"(|\b\d{2}:\d{2}:\d{2}(?:[.,]\d+)?\b)",
                                  perl),
                     kTsToken});
        r.push_back({boost::regex(R"(\b0[xX][0-9A-Fa-f]+\b|\b(?=[0-9A-Fa-f]*\d)(?=[0-9A-Fa-f]*[A-Fa-f])[0-9A-Fa-f]{8,}\b)",
                                  perl),
                     kAddrToken});
        r.push_back({boost::regex(R"((?<![\w.~\-])(?:[A-Za-z]:\\[^\s'"]+|~?(?:/[\w.@+\-]+)+/?))", perl), kPathToken});
        r.push_back({boost::regex(R"(\b\d{5,}\b)", perl), kNumToken});
        return r;
    }();
    return rules;
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        auto line = text.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        start = end + 1;
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

double norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

json sparse(const Embedding& e) {
    json idx = json::array();
    json val = json::array();
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (e[i] != 0.0) {
            idx.push_back(i);
            val.push_back(e[i]);
        }
    }
    return {{"i", std::move(idx)}, {"v", std::move(val)}};
}

Embedding dense(const json& j, std::size_t dim) {
    Embedding e(dim, 0.0);
    const auto idx = j.at("i").get<std::vector<std::size_t>>();
    const auto val = j.at("v").get<std::vector<double>>();
    if (idx.size() != val.size()) throw ContractError("sparse embedding length mismatch");
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= dim) throw ContractError("sparse embedding index out of range");
        e[idx[k]] = val[k];
    }
    return e;
}

}  // namespace

std::vector<std::string> preprocess(std::string_view raw) {
    std::vector<std::string> out;
    for (auto line : lines_of(raw)) {
        line = strip_runner_timestamp(line);
        if (boost::regex_search(line.begin(), line.end(), critical_line_re())) out.emplace_back(line);
    }
    return out;
}

std::string normalize(const std::vector<std::string>& filtered_lines) {
    std::string out;
    for (std::size_t i = 0; i < filtered_lines.size(); ++i) {
        std::string line = filtered_lines[i];
        for (const auto& rule : normalization_rules()) {
            line = boost::regex_replace(line, rule.re, std::string(rule.token),
                                        boost::regex_constants::format_literal);
        }
        if (i > 0) out.push_back('\n');
        out += line;
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (unsigned char c : text) {
        const bool sep = c < 0x80 && (std::isspace(c) || std::ispunct(c));
        if (sep) {
            if (!cur.empty()) tokens.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

Embedding HashingEmbedder::embed(std::string_view normalized) const {
    Embedding v(dimension_, 0.0);
    std::map<std::string, int> tf;
    for (auto& t : tokenize(normalized)) ++tf[t];
    for (const auto& [t, n] : tf) v[fnv1a(t) % dimension_] += 1.0 + std::log(static_cast<double>(n));
    const double len = norm(v);
    if (len > 0) {
        for (auto& x : v) x /= len;
    }
    return v;
}

std::string HashingEmbedder::id() const { return "hashed-tf-v1:" + std::to_string(dimension_); }

std::unique_ptr<Embedder> make_embedder(const std::string& id) {
    constexpr std::string_view prefix = "hashed-tf-v1:";
    if (id.rfind(prefix, 0) == 0) {
        try {
            const auto d = std::stoul(id.substr(prefix.size()));
            if (d > 0) return std::make_unique<HashingEmbedder>(d);
        } catch (const std::exception&) {
        }
    }
    throw ContractError("unknown embedder: " + id);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ContractError("cosine of vectors with different dimensions");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

LogDocument LogDocument::make(std::string job_ref, std::string raw, const Embedder& embedder) {
    LogDocument d;
    d.job_ref = std::move(job_ref);
    d.raw = std::move(raw);
    d.filtered_lines = preprocess(d.raw);
    d.normalized = normalize(d.filtered_lines);
    d.embedding = embedder.embed(d.normalized);
    return d;
}

// --- index -------------------------------------------------------------------

VectorIndex::VectorIndex(std::vector<IndexEntry> entries, std::string built_from)
    : entries_(std::move(entries)), built_from_(std::move(built_from)) {
    std::set<std::string> refs;
    for (const auto& e : entries_) {
        if (e.embedding.size() != entries_.front().embedding.size()) {
            throw ContractError("index entries have different dimensions");
        }
        if (e.label != 0 && e.label != 1) throw ContractError("index labels must be 0 or 1");
        if (!refs.insert(e.job_ref).second) throw ContractError("duplicate job_ref in index: " + e.job_ref);
    }
}

bool VectorIndex::contains(const std::string& job_ref) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const IndexEntry& e) { return e.job_ref == job_ref; });
}

void VectorIndex::assert_excludes(std::span<const std::string> refs) const {
    const std::set<std::string> forbidden(refs.begin(), refs.end());
    for (const auto& e : entries_) {
        if (forbidden.count(e.job_ref)) throw ContractError("index built from " + built_from_ + " contains " + e.job_ref);
    }
}

bool neighbor_before(double sim_a, Timestamp ts_a, const std::string& ref_a, double sim_b, Timestamp ts_b,
                     const std::string& ref_b) {
    if (sim_a != sim_b) return sim_a > sim_b;
    if (ts_a != ts_b) return ts_a > ts_b;
    return ref_a < ref_b;
}

std::vector<Neighbor> VectorIndex::retrieve(std::span<const double> query, int k, const std::string* exclude) const {
    if (k < 1) throw ContractError("K must be at least 1");
    std::vector<std::pair<double, const IndexEntry*>> scored;
    scored.reserve(entries_.size());
    for (const auto& e : entries_) {
        if (exclude && e.job_ref == *exclude) continue;
        scored.emplace_back(cosine(query, e.embedding), &e);
    }
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) {
                          return neighbor_before(a.first, a.second->timestamp, a.second->job_ref, b.first,
                                                 b.second->timestamp, b.second->job_ref);
                      });
    std::vector<Neighbor> out;
    out.reserve(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < take; ++i) {
        out.push_back({scored[i].first, static_cast<double>(scored[i].second->label), scored[i].second->job_ref});
    }
    while (out.size() < static_cast<std::size_t>(k)) out.push_back({0.0, 0.5, {}});
    return out;
}

json VectorIndex::to_json() const {
    json arr = json::array();
    for (const auto& e : entries_) {
        arr.push_back({{"job_ref", e.job_ref},
                       {"label", e.label},
                       {"timestamp", format_timestamp(e.timestamp)},
                       {"embedding", sparse(e.embedding)}});
    }
    const std::size_t dim = entries_.empty() ? 0 : entries_.front().embedding.size();
    return {{"built_from", built_from_}, {"dimension", dim}, {"entries", std::move(arr)}};
}

VectorIndex VectorIndex::from_json(const json& doc) {
    const auto dim = doc.at("dimension").get<std::size_t>();
    std::vector<IndexEntry> entries;
    for (const auto& e : doc.at("entries")) {
        entries.push_back({dense(e.at("embedding"), dim), e.at("label").get<int>(), e.at("job_ref").get<std::string>(),
                           parse_timestamp(e.at("timestamp").get<std::string>())});
    }
    return VectorIndex(std::move(entries), doc.at("built_from").get<std::string>());
}

std::vector<double> neighbor_features(const std::vector<Neighbor>& neighbors, int k) {
    if (k < 1) throw ContractError("K must be at least 1");
    std::vector<double> fv(2 * static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        const auto u = static_cast<std::size_t>(i);
        const Neighbor pad{0.0, 0.5, {}};
        const auto& n = u < neighbors.size() ? neighbors[u] : pad;
        fv[u] = n.similarity;
        fv[static_cast<std::size_t>(k) + u] = n.label;
    }
    return fv;
}

// --- score model -------------------------------------------------------------

double LogScoreModel::score(std::span<const double> fv) const {
    if (fv.size() != 2 * static_cast<std::size_t>(k) || weights.size() != fv.size()) {
        throw ContractError("neighbor vector has " + std::to_string(fv.size()) + " values, model expects " +
                            std::to_string(2 * k));
    }
    double z = bias;
    for (std::size_t i = 0; i < fv.size(); ++i) z += weights[i] * fv[i];
    return logistic::sigmoid(z);
}

json LogScoreModel::to_json() const { return {{"K", k}, {"weights", weights}, {"bias", bias}, {"lambda", lambda}}; }

LogScoreModel LogScoreModel::from_json(const json& doc) {
    LogScoreModel m;
    m.k = doc.at("K").get<int>();
    m.weights = doc.at("weights").get<std::vector<double>>();
    m.bias = doc.at("bias").get<double>();
    m.lambda = doc.at("lambda").get<double>();
    if (m.k < 1 || m.weights.size() != 2 * static_cast<std::size_t>(m.k)) {
        throw ContractError("log model weight length differs from 2K");
    }
    return m;
}

LogScoreModel train_log_model(const std::vector<std::vector<double>>& features, std::span<const int> labels, int k,
                              const logistic::Options& options) {
    if (k < 1) throw ContractError("K must be at least 1");
    const auto width = 2 * static_cast<std::size_t>(k);
    for (const auto& f : features) {
        if (f.size() != width) throw ContractError("neighbor vector length differs from 2K");
    }
    auto fit = logistic::train(features, labels, width, options);
    return {k, std::move(fit.weights), fit.bias, options.lambda};
}

}  // namespace flaky
