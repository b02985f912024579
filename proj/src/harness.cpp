#include "flaky/harness.hpp"

#include "flaky/error.hpp"
#include "flaky/parallel.hpp"
#include "flaky/random.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace flaky {

using nlohmann::json;

namespace {

// Baseline log text keeps at most this many trailing lines.
constexpr std::size_t kBaselineLogLines = 5000;

std::string clean_log(std::string_view raw) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < raw.size()) {
        auto end = raw.find('\n', start);
        if (end == std::string_view::npos) end = raw.size();
        auto line = strip_runner_timestamp(raw.substr(start, end - start));
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!line.empty()) lines.emplace_back(line);
        start = end + 1;
    }
    if (lines.size() > kBaselineLogLines) {
        lines.erase(lines.begin(), lines.end() - static_cast<std::ptrdiff_t>(kBaselineLogLines));
    }
    return normalize(lines);
}

bool zero_embedding(const Embedding* e) {
    return !e || e->empty() || std::all_of(e->begin(), e->end(), [](double x) { return x == 0.0; });
}

double f1_at(std::span<const double> scores, std::span<const int> labels, double beta) {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > beta;
        if (pred && labels[i]) ++tp;
        if (pred && !labels[i]) ++fp;
        if (!pred && labels[i]) ++fn;
    }
    return tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
}

bool single_class(std::span<const int> labels) {
    return std::all_of(labels.begin(), labels.end(), [&](int y) { return y == labels.front(); });
}

json diagnostics_json(const Diagnostics& ds) {
    json a = json::array();
    for (const auto& d : ds) a.push_back({{"subject", d.subject}, {"message", d.message}});
    return a;
}

std::string fmt_metric(double x) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << x;
    auto t = s.str();
    return t.rfind("0.", 0) == 0 ? t.substr(1) : t;
}

std::string display_name(const std::string& model) {
    if (model == "lr") return "LogisticRegression";
    if (model == "rf") return "RandomForest";
    if (model == "mlp") return "MLP";
    if (model == kBaselineName) return "Baseline (adapted)";
    return model;
}

}  // namespace

// --- dataset -----------------------------------------------------------------

std::vector<std::string> JobDataset::projects() const {
    std::set<std::string> s;
    for (const auto& r : rows) s.insert(r.repo);
    return {s.begin(), s.end()};
}

JobDataset JobDataset::only(const std::string& repo) const {
    JobDataset d;
    d.feature_names = feature_names;
    d.embedder_id = embedder_id;
    for (const auto& r : rows) {
        if (r.repo == repo) d.rows.push_back(r);
    }
    return d;
}

void order_rows(std::vector<JobRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const JobRow& a, const JobRow& b) {
        return std::tie(a.start, a.repo, a.build_id, a.job_name) < std::tie(b.start, b.repo, b.build_id, b.job_name);
    });
}

JobDataset build_dataset(const Corpus& corpus, const std::map<std::string, Label>& labels,
                         const std::string& embedder_id, const PatternLibrary& library, int jobs) {
    JobDataset ds;
    ds.feature_names = feature_names();
    ds.embedder_id = embedder_id;
    const auto embedder = make_embedder(embedder_id);
    const auto failed = initially_failed_jobs(corpus);
    const auto history = RepoHistory::from_corpus(corpus);

    std::vector<std::optional<JobRow>> rows(failed.size());
    std::vector<Diagnostics> diags(failed.size());
    parallel_for(failed.size(), jobs, [&](std::size_t i) {
        const auto& f = failed[i];
        auto it = labels.find(f.job_ref);
        if (it == labels.end()) return;
        const auto log = read_log(*f.build, *f.job);
        auto ctx = change_context(*f.build, &diags[i]);
        auto fv = extract({f.build, f.job, log}, ctx, history, library);
        for (auto& d : fv.diagnostics) diags[i].push_back({f.job_ref + ": " + d.subject, d.message});
        JobRow r;
        r.job_ref = f.job_ref;
        r.repo = f.build->seq.repo();
        r.build_id = f.build->seq.build_id();
        r.job_name = f.job->name;
        r.start = f.job->started_at;
        r.label = it->second == Label::flaky ? 1 : 0;
        r.features = std::move(fv.values);
        if (!log.empty()) r.embedding = LogDocument::make(f.job_ref, log, *embedder).embedding;
        r.cleaned_log = clean_log(log);
        rows[i] = std::move(r);
    });
    std::size_t unlabeled = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ds.diagnostics.insert(ds.diagnostics.end(), diags[i].begin(), diags[i].end());
        if (rows[i]) {
            ds.rows.push_back(std::move(*rows[i]));
        } else {
            ++unlabeled;
        }
    }
    if (unlabeled > 0) {
        ds.diagnostics.push_back({corpus.root.string(), std::to_string(unlabeled) + " failed jobs without a label"});
    }
    order_rows(ds.rows);
    return ds;
}

// --- fold plan ---------------------------------------------------------------

json FoldPlan::to_json() const {
    auto range = [](const Range& r) { return json::array({r.begin, r.end}); };
    json g = json::array();
    for (const auto& x : groups) g.push_back({{"train", range(x.train)}, {"val", range(x.val)}, {"test", range(x.test)}});
    return {{"rows", rows}, {"groups", std::move(g)}};
}

FoldPlan forward_chaining_plan(std::size_t n) {
    if (n < kMinPlanRows) {
        throw PlanInfeasible("forward-chaining plan needs at least " + std::to_string(kMinPlanRows) + " rows, got " +
                                 std::to_string(n),
                             kMinPlanRows);
    }
    FoldPlan plan;
    plan.rows = n;
    const std::size_t slice = n / 20;
    for (std::size_t r = 0; r < 5; ++r) {
        const std::size_t t = n * (50 + 10 * r) / 100;
        plan.groups.push_back({{0, t}, {t, t + slice}, {t + slice, t + 2 * slice}});
    }
    for (std::size_t r = 0; r < 5; ++r) {
        const auto g = plan.groups[r];
        plan.groups.push_back({g.train, g.test, g.val});
    }
    return plan;
}

// --- metrics -----------------------------------------------------------------

json Metrics::to_json() const {
    return {{"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"auc", auc},
            {"precision_undefined", precision_undefined},
            {"recall_undefined", recall_undefined},
            {"auc_undefined", auc_undefined}};
}

double auc(std::span<const double> scores, std::span<const int> labels, bool* undefined) {
    if (scores.size() != labels.size()) throw ContractError("scores and labels differ in length");
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    double pos = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                pos_rank_sum += midrank;
                pos += 1.0;
            }
        }
        i = j;
    }
    const double neg = static_cast<double>(n) - pos;
    if (undefined) *undefined = pos == 0.0 || neg == 0.0;
    if (pos == 0.0 || neg == 0.0) return 0.5;
    return (pos_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

Metrics metrics(std::span<const double> scores, std::span<const int> labels, double beta) {
    if (scores.empty() || scores.size() != labels.size()) throw ContractError("metrics need equal nonempty inputs");
    double tp = 0;
    double fp = 0;
    double fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] > beta;
        tp += pred && labels[i];
        fp += pred && !labels[i];
        fn += !pred && labels[i];
    }
    Metrics m;
    m.precision_undefined = tp + fp == 0;
    m.recall_undefined = tp + fn == 0;
    m.precision = m.precision_undefined ? 0.0 : tp / (tp + fp);
    m.recall = m.recall_undefined ? 0.0 : tp / (tp + fn);
    m.f1 = m.precision + m.recall == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
    m.auc = auc(scores, labels, &m.auc_undefined);
    return m;
}

Metrics mean_metrics(const std::vector<Metrics>& ms) {
    Metrics out;
    if (ms.empty()) return out;
    out.auc = 0.0;
    for (const auto& m : ms) {
        out.precision += m.precision;
        out.recall += m.recall;
        out.f1 += m.f1;
        out.auc += m.auc;
        out.precision_undefined = out.precision_undefined || m.precision_undefined;
        out.recall_undefined = out.recall_undefined || m.recall_undefined;
        out.auc_undefined = out.auc_undefined || m.auc_undefined;
    }
    const double n = static_cast<double>(ms.size());
    out.precision /= n;
    out.recall /= n;
    out.f1 /= n;
    out.auc /= n;
    return out;
}

Metrics median_metrics(const std::vector<Metrics>& ms) {
    Metrics out;
    if (ms.empty()) return out;
    auto med = [&](auto get) {
        std::vector<double> v;
        for (const auto& m : ms) v.push_back(get(m));
        std::sort(v.begin(), v.end());
        const auto h = v.size() / 2;
        return v.size() % 2 ? v[h] : (v[h - 1] + v[h]) / 2.0;
    };
    out.precision = med([](const Metrics& m) { return m.precision; });
    out.recall = med([](const Metrics& m) { return m.recall; });
    out.f1 = med([](const Metrics& m) { return m.f1; });
    out.auc = med([](const Metrics& m) { return m.auc; });
    return out;
}

// --- grid --------------------------------------------------------------------

GridSpec GridSpec::paper() {
    GridSpec g;
    for (int k = 5; k <= 30; k += 5) g.K_values.push_back(k);
    g.F_values = {5, 10, 20, 30, 40, 50, 60};
    for (int i = 0; i <= 10; ++i) g.alpha_values.push_back(i / 10.0);
    for (int i = 1; i <= 9; ++i) g.beta_values.push_back(i / 10.0);
    return g;
}

GridSpec GridSpec::from_json(const json& doc) {
    try {
        GridSpec g;
        g.K_values = doc.at("K").get<std::vector<int>>();
        g.F_values = doc.at("F").get<std::vector<int>>();
        g.alpha_values = doc.at("alpha").get<std::vector<double>>();
        g.beta_values = doc.at("beta").get<std::vector<double>>();
        g.normalize();
        return g;
    } catch (const json::exception& e) {
        throw ContractError(std::string("malformed grid: ") + e.what());
    }
}

json GridSpec::to_json() const {
    return {{"K", K_values}, {"F", F_values}, {"alpha", alpha_values}, {"beta", beta_values}};
}

void GridSpec::normalize() {
    auto tidy = [](auto& v) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
    };
    tidy(K_values);
    tidy(F_values);
    tidy(alpha_values);
    tidy(beta_values);
    if (K_values.empty() || F_values.empty() || alpha_values.empty() || beta_values.empty()) {
        throw ContractError("grid lists must be nonempty");
    }
    for (int k : K_values) DetectorConfig{k, F_values.front(), alpha_values.front(), beta_values.front()}.validate();
    for (int f : F_values) DetectorConfig{K_values.front(), f, alpha_values.front(), beta_values.front()}.validate();
    for (double a : alpha_values) DetectorConfig{K_values.front(), F_values.front(), a, beta_values.front()}.validate();
    for (double b : beta_values) DetectorConfig{K_values.front(), F_values.front(), alpha_values.front(), b}.validate();
}

// --- search ------------------------------------------------------------------

SearchInputs search_inputs(const JobDataset& ds, const FoldGroup& group) {
    if (group.test.end > ds.rows.size()) throw ContractError("fold group exceeds the dataset");
    SearchInputs in;
    in.feature_names = &ds.feature_names;
    auto view = [&](std::size_t i) {
        const auto& r = ds.rows[i];
        return UnlabeledJob{&r.job_ref, r.start, &r.embedding, &r.features, &r.cleaned_log};
    };
    for (auto i = group.train.begin; i < group.train.end; ++i) {
        in.train.push_back(view(i));
        in.train_labels.push_back(ds.rows[i].label);
    }
    for (auto i = group.val.begin; i < group.val.end; ++i) {
        in.val.push_back(view(i));
        in.val_labels.push_back(ds.rows[i].label);
    }
    for (auto i = group.test.begin; i < group.test.end; ++i) in.test.push_back(view(i));
    return in;
}

ChannelScores log_channel_scores(const SearchInputs& in, const std::vector<int>& K_values) {
    if (K_values.empty()) throw ContractError("no K values");
    const int kmax = *std::max_element(K_values.begin(), K_values.end());
    std::vector<IndexEntry> entries;
    for (std::size_t i = 0; i < in.train.size(); ++i) {
        const auto& j = in.train[i];
        if (!zero_embedding(j.embedding)) entries.push_back({*j.embedding, in.train_labels[i], *j.job_ref, j.timestamp});
    }
    const VectorIndex index(std::move(entries), "search");
    auto neighbors = [&](const std::vector<UnlabeledJob>& jobs, bool leave_one_out) {
        std::vector<std::vector<Neighbor>> out;
        for (const auto& j : jobs) {
            if (zero_embedding(j.embedding)) {
                out.emplace_back();
            } else {
                out.push_back(index.retrieve(*j.embedding, kmax, leave_one_out ? j.job_ref : nullptr));
            }
        }
        return out;
    };
    const auto nb_train = neighbors(in.train, true);
    const auto nb_val = neighbors(in.val, false);
    const auto nb_test = neighbors(in.test, false);

    ChannelScores cs;
    for (int k : K_values) {
        std::vector<std::vector<double>> x;
        for (const auto& nb : nb_train) x.push_back(neighbor_features(nb, k));
        const auto model = train_log_model(x, in.train_labels, k);
        auto& v = cs.val[k];
        for (const auto& nb : nb_val) v.push_back(model.score(neighbor_features(nb, k)));
        auto& t = cs.test[k];
        for (const auto& nb : nb_test) t.push_back(model.score(neighbor_features(nb, k)));
    }
    return cs;
}

ChannelScores struct_channel_scores(const SearchInputs& in, const std::vector<int>& F_values,
                                    const std::string& classifier_kind, std::uint64_t seed) {
    Dataset ds;
    ds.feature_names = *in.feature_names;
    for (std::size_t i = 0; i < in.train.size(); ++i) {
        ds.rows.push_back(*in.train[i].features);
        ds.labels.push_back(in.train_labels[i]);
    }
    if (ds.size() == 0 || ds.positives() == 0 || ds.positives() == ds.size()) {
        throw BalanceImpossible("training slice has a single class");
    }
    const auto ranking = rank_features(ds);
    std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> by_width;
    ChannelScores cs;
    for (int f_req : F_values) {
        const auto f = std::min<std::size_t>(static_cast<std::size_t>(f_req), ds.width());
        if (!by_width.count(f)) {
            std::vector<std::size_t> cols;
            for (std::size_t c = 0; c < f; ++c) cols.push_back(ranking[c].column);
            auto balanced = oversample(ds.project(cols), derive_seed(seed, 1));
            auto clf = make_classifier(classifier_kind);
            clf->fit(balanced, derive_seed(seed, 2));
            auto score = [&](const std::vector<UnlabeledJob>& jobs) {
                std::vector<double> out;
                std::vector<double> row(f);
                for (const auto& j : jobs) {
                    for (std::size_t c = 0; c < f; ++c) row[c] = (*j.features)[cols[c]];
                    out.push_back(std::clamp(clf->predict_proba(row), 0.0, 1.0));
                }
                return out;
            };
            by_width[f] = {score(in.val), score(in.test)};
        }
        cs.val[f_req] = by_width[f].first;
        cs.test[f_req] = by_width[f].second;
    }
    return cs;
}

SearchResult select_config(const ChannelScores& log, const ChannelScores& structured, std::span<const int> val_labels,
                           const GridSpec& grid) {
    SearchResult res;
    res.val_degenerate = val_labels.empty() || single_class(val_labels);
    double best = -1.0;
    std::vector<double> fused;
    for (int k : grid.K_values) {
        const auto& lv = log.val.at(k);
        for (int f : grid.F_values) {
            const auto& sv = structured.val.at(f);
            for (double a : grid.alpha_values) {
                fused.resize(lv.size());
                for (std::size_t i = 0; i < lv.size(); ++i) fused[i] = fuse(lv[i], sv[i], a);
                for (double b : grid.beta_values) {
                    const double f1 = f1_at(fused, val_labels, b);
                    if (f1 > best) {
                        best = f1;
                        res.best = {k, f, a, b};
                    }
                }
            }
        }
    }
    res.val_f1 = best;
    const auto& lt = log.test.at(res.best.K);
    const auto& st = structured.test.at(res.best.F);
    for (std::size_t i = 0; i < lt.size(); ++i) res.test_scores.push_back(fuse(lt[i], st[i], res.best.alpha));
    return res;
}

SearchResult grid_search(const SearchInputs& in, const GridSpec& grid, const std::string& classifier_kind,
                         std::uint64_t seed) {
    const auto log = log_channel_scores(in, grid.K_values);
    const auto structured = struct_channel_scores(in, grid.F_values, classifier_kind, seed);
    return select_config(log, structured, in.val_labels, grid);
}

// --- baseline ----------------------------------------------------------------

namespace {

using Tokens = std::vector<std::string>;

Tokens baseline_tokens(const std::string& cleaned) {
    Tokens out;
    for (auto& t : tokenize(cleaned)) {
        if (t.rfind("\xE2\x9F\xA8", 0) == 0) continue;  // placeholder
        out.push_back(std::move(t));
    }
    return out;
}

class TfIdf {
public:
    TfIdf(const std::vector<Tokens>& docs, std::size_t max_terms) {
        std::map<std::string, int> df;
        for (const auto& d : docs) {
            for (const auto& t : std::set<std::string>(d.begin(), d.end())) ++df[t];
        }
        std::vector<std::pair<int, std::string>> ranked;
        const int min_df = docs.size() >= 10 ? 2 : 1;
        for (const auto& [t, n] : df) {
            if (n >= min_df) ranked.emplace_back(-n, t);
        }
        std::sort(ranked.begin(), ranked.end());
        if (ranked.size() > max_terms) ranked.resize(max_terms);
        const double n = static_cast<double>(docs.size());
        for (const auto& [neg_df, t] : ranked) {
            const auto id = terms_.size();
            terms_[t] = id;
            idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(-neg_df))) + 1.0);
        }
    }

    [[nodiscard]] std::size_t width() const noexcept { return idf_.size(); }

    [[nodiscard]] std::vector<double> vectorize(const Tokens& doc) const {
        std::vector<double> v(idf_.size(), 0.0);
        for (const auto& t : doc) {
            auto it = terms_.find(t);
            if (it != terms_.end()) v[it->second] += 1.0;
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] *= idf_[i];
            norm += v[i] * v[i];
        }
        if (norm > 0) {
            norm = std::sqrt(norm);
            for (auto& x : v) x /= norm;
        }
        return v;
    }

private:
    std::map<std::string, std::size_t> terms_;
    std::vector<double> idf_;
};

// A forest, or the training prior when one class is missing.
struct Scorer {
    std::optional<RandomForest> forest;
    double prior = 0.5;

    static Scorer fit(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels, std::size_t width,
                      std::uint64_t seed) {
        Scorer s;
        const auto pos = std::count(labels.begin(), labels.end(), 1);
        s.prior = labels.empty() ? 0.5 : static_cast<double>(pos) / static_cast<double>(labels.size());
        if (pos == 0 || pos == static_cast<long>(labels.size()) || width == 0) return s;
        Dataset ds;
        ds.rows = rows;
        ds.labels = labels;
        for (std::size_t i = 0; i < width; ++i) ds.feature_names.push_back("x" + std::to_string(i));
        s.forest.emplace();
        s.forest->fit(ds, seed);
        return s;
    }

    [[nodiscard]] double score(std::span<const double> x) const {
        return forest ? forest->predict_proba(x) : prior;
    }
};

}  // namespace

BaselineResult run_baseline_group(const SearchInputs& in, const std::vector<double>& betas,
                                  const BaselineOptions& options, std::uint64_t seed) {
    if (in.train.empty() || single_class(in.train_labels)) {
        throw BalanceImpossible("training slice has a single class");
    }
    auto tokens = [](const std::vector<UnlabeledJob>& jobs) {
        std::vector<Tokens> out;
        for (const auto& j : jobs) out.push_back(baseline_tokens(*j.cleaned_log));
        return out;
    };
    const auto train_docs = tokens(in.train);
    const TfIdf tfidf(train_docs, options.max_terms);
    auto vectorize = [&](const std::vector<Tokens>& docs) {
        std::vector<std::vector<double>> out;
        for (const auto& d : docs) out.push_back(tfidf.vectorize(d));
        return out;
    };
    const auto xa_train = vectorize(train_docs);
    const auto xa_val = vectorize(tokens(in.val));
    const auto xa_test = vectorize(tokens(in.test));

    // Out-of-fold model A scores for the training rows.
    const std::size_t n = in.train.size();
    const auto folds = static_cast<std::size_t>(std::max(2, options.inner_folds));
    std::vector<double> pa_train(n, 0.5);
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t lo = n * f / folds;
        const std::size_t hi = n * (f + 1) / folds;
        if (lo == hi) continue;
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        for (std::size_t i = 0; i < n; ++i) {
            if (i >= lo && i < hi) continue;
            rows.push_back(xa_train[i]);
            labels.push_back(in.train_labels[i]);
        }
        const auto a = Scorer::fit(rows, labels, tfidf.width(), derive_seed(seed, 100 + f));
        for (std::size_t i = lo; i < hi; ++i) pa_train[i] = a.score(xa_train[i]);
    }
    const auto model_a = Scorer::fit(xa_train, in.train_labels, tfidf.width(), derive_seed(seed, 10));

    auto with_impact = [](const UnlabeledJob& j, double pa) {
        auto row = *j.features;
        row.push_back(pa);
        return row;
    };
    const auto width_b = in.feature_names->size() + 1;
    std::vector<std::vector<double>> xb_train;
    for (std::size_t i = 0; i < n; ++i) xb_train.push_back(with_impact(in.train[i], pa_train[i]));
    const auto model_b = Scorer::fit(xb_train, in.train_labels, width_b, derive_seed(seed, 11));

    auto channel = [&](const std::vector<UnlabeledJob>& jobs, const std::vector<std::vector<double>>& xa) {
        std::vector<double> pa;
        std::vector<double> pb;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            pa.push_back(model_a.score(xa[i]));
            pb.push_back(model_b.score(with_impact(jobs[i], pa.back())));
        }
        return std::make_pair(pa, pb);
    };
    const auto [pa_val, pb_val] = channel(in.val, xa_val);
    const auto [pa_test, pb_test] = channel(in.test, xa_test);

    BaselineResult res;
    double best = -1.0;
    std::vector<double> fused(pa_val.size());
    for (double w : options.vote_weights) {
        for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = w * pa_val[i] + (1 - w) * pb_val[i];
        for (double b : betas) {
            const double f1 = f1_at(fused, in.val_labels, b);
            if (f1 > best) {
                best = f1;
                res.weight = w;
                res.beta = b;
            }
        }
    }
    res.val_f1 = best;
    for (std::size_t i = 0; i < pa_test.size(); ++i) {
        res.test_scores.push_back(res.weight * pa_test[i] + (1 - res.weight) * pb_test[i]);
    }
    return res;
}

// --- evaluation --------------------------------------------------------------

ProjectReport evaluate_project(const JobDataset& project, const EvaluationOptions& options) {
    auto grid = options.grid;
    grid.normalize();
    ProjectReport rep;
    rep.project = project.rows.empty() ? "" : project.rows.front().repo;
    rep.rows = project.rows.size();
    rep.plan = forward_chaining_plan(project.rows.size());

    std::vector<std::string> models = options.models;
    if (options.baseline) models.insert(models.begin(), std::string(kBaselineName));
    const auto groups = rep.plan.groups.size();
    // results[g][m]
    std::vector<std::vector<GroupResult>> results(groups, std::vector<GroupResult>(models.size()));
    parallel_for(groups, options.jobs, [&](std::size_t g) {
        const auto& group = rep.plan.groups[g];
        const auto in = search_inputs(project, group);
        std::vector<int> test_labels;
        for (auto i = group.test.begin; i < group.test.end; ++i) test_labels.push_back(project.rows[i].label);
        const auto seed = derive_seed(options.seed, g);
        for (auto& r : results[g]) r.group = static_cast<int>(g + 1);
        if (single_class(in.train_labels)) {
            for (auto& r : results[g]) {
                r.skipped = true;
                r.diagnostics.push_back({rep.project, "group " + std::to_string(g + 1) + ": single-class training slice"});
            }
            return;
        }
        std::optional<ChannelScores> log;
        for (std::size_t m = 0; m < models.size(); ++m) {
            auto& r = results[g][m];
            std::vector<double> scores;
            double beta = 0.5;
            if (models[m] == kBaselineName) {
                const auto b = run_baseline_group(in, grid.beta_values, options.baseline_options, seed);
                r.baseline_weight = b.weight;
                r.val_f1 = b.val_f1;
                scores = b.test_scores;
                beta = b.beta;
            } else {
                if (!log) log = log_channel_scores(in, grid.K_values);
                const auto s = struct_channel_scores(in, grid.F_values, models[m], seed);
                const auto sel = select_config(*log, s, in.val_labels, grid);
                r.config = sel.best;
                r.val_f1 = sel.val_f1;
                scores = sel.test_scores;
                beta = sel.best.beta;
                if (sel.val_degenerate) {
                    r.diagnostics.push_back(
                        {rep.project, "group " + std::to_string(g + 1) + ": single-class validation slice"});
                }
            }
            r.test = metrics(scores, test_labels, beta);
            if (r.test.precision_undefined || r.test.recall_undefined) {
                r.diagnostics.push_back({rep.project, "group " + std::to_string(g + 1) + ": zero-division in metrics"});
            }
        }
    });
    for (std::size_t m = 0; m < models.size(); ++m) {
        ModelResult mr;
        mr.model = models[m];
        mr.plan = rep.plan;
        std::vector<Metrics> ms;
        for (std::size_t g = 0; g < groups; ++g) {
            mr.groups.push_back(results[g][m]);
            if (!results[g][m].skipped) ms.push_back(results[g][m].test);
        }
        mr.evaluated_groups = static_cast<int>(ms.size());
        mr.mean = mean_metrics(ms);
        rep.models.push_back(std::move(mr));
    }
    return rep;
}

EvaluationReport evaluate(const JobDataset& ds, const EvaluationOptions& options) {
    EvaluationReport rep;
    rep.seed = options.seed;
    rep.models = options.models;
    if (options.baseline) rep.models.insert(rep.models.begin(), std::string(kBaselineName));
    for (const auto& p : ds.projects()) {
        const auto sub = ds.only(p);
        if (sub.rows.size() < kMinPlanRows) {
            rep.diagnostics.push_back({p, "skipped: " + std::to_string(sub.rows.size()) + " labeled jobs, need " +
                                              std::to_string(kMinPlanRows)});
            continue;
        }
        rep.projects.push_back(evaluate_project(sub, options));
    }
    for (const auto& m : rep.models) {
        std::vector<Metrics> ms;
        for (const auto& p : rep.projects) {
            for (const auto& mr : p.models) {
                if (mr.model == m && mr.evaluated_groups > 0) ms.push_back(mr.mean);
            }
        }
        rep.average[m] = mean_metrics(ms);
        rep.median[m] = median_metrics(ms);
    }
    return rep;
}

json EvaluationReport::to_json() const {
    json projects_j = json::array();
    for (const auto& p : projects) {
        json models_j = json::array();
        for (const auto& m : p.models) {
            json groups_j = json::array();
            for (const auto& g : m.groups) {
                json gj = {{"group", g.group},
                           {"skipped", g.skipped},
                           {"val_f1", g.val_f1},
                           {"test", g.test.to_json()},
                           {"diagnostics", diagnostics_json(g.diagnostics)}};
                if (g.config) gj["config"] = g.config->to_json();
                if (g.baseline_weight) gj["vote_weight"] = *g.baseline_weight;
                groups_j.push_back(std::move(gj));
            }
            if (!(m.plan == p.plan)) throw Error("model " + m.model + " evaluated on a different fold plan");
            models_j.push_back({{"model", m.model},
                                {"mean", m.mean.to_json()},
                                {"evaluated_groups", m.evaluated_groups},
                                {"groups", std::move(groups_j)}});
        }
        projects_j.push_back(
            {{"project", p.project}, {"rows", p.rows}, {"plan", p.plan.to_json()}, {"models", std::move(models_j)}});
    }
    json avg = json::object();
    json mid = json::object();
    for (const auto& [m, x] : average) avg[m] = x.to_json();
    for (const auto& [m, x] : median) mid[m] = x.to_json();
    json doc = {{"schema_version", 1},
                {"seed", seed},
                {"models", models},
                {"projects", std::move(projects_j)},
                {"average", std::move(avg)},
                {"median", std::move(mid)},
                {"diagnostics", diagnostics_json(diagnostics)}};
    if (std::find(models.begin(), models.end(), kBaselineName) != models.end()) {
        doc["baseline_note"] = "tree-ensemble learner in place of gradient boosting";
    }
    return doc;
}

void EvaluationReport::render_text(std::ostream& out) const {
    std::size_t name_w = 7;
    for (const auto& p : projects) name_w = std::max(name_w, p.project.size());
    const std::size_t cell = 8;
    const std::size_t block = 4 * cell;
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s.append(w - s.size(), ' ');
        return s;
    };
    out << pad("Project", name_w);
    for (const auto& m : models) out << " | " << pad(display_name(m), block);
    out << '\n' << pad("", name_w);
    for (std::size_t i = 0; i < models.size(); ++i) {
        out << " | " << pad("Prec.", cell) << pad("Recall", cell) << pad("F1", cell) << pad("AUC", cell);
    }
    out << '\n';
    const std::string rule(name_w + models.size() * (block + 3), '-');
    out << rule << '\n';
    auto row = [&](const std::string& name, auto get) {
        out << pad(name, name_w);
        for (const auto& m : models) {
            const Metrics* x = get(m);
            out << " | ";
            if (!x) {
                out << pad("n/a", block);
                continue;
            }
            out << pad(fmt_metric(x->precision), cell) << pad(fmt_metric(x->recall), cell)
                << pad(fmt_metric(x->f1), cell) << pad(fmt_metric(x->auc), cell);
        }
        out << '\n';
    };
    for (const auto& p : projects) {
        row(p.project, [&](const std::string& m) -> const Metrics* {
            for (const auto& mr : p.models) {
                if (mr.model == m && mr.evaluated_groups > 0) return &mr.mean;
            }
            return nullptr;
        });
    }
    out << rule << '\n';
    row("Avg.", [&](const std::string& m) -> const Metrics* {
        auto it = average.find(m);
        return it == average.end() ? nullptr : &it->second;
    });
    row("Mid.", [&](const std::string& m) -> const Metrics* {
        auto it = median.find(m);
        return it == median.end() ? nullptr : &it->second;
    });
}

}  // namespace flaky
