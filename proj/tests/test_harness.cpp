#include "flaky/error.hpp"
#include "flaky/harness.hpp"
#include "flaky/synth.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

using namespace flaky;
using namespace flaky::test;
namespace fs = std::filesystem;

namespace {

const char* kEmbedder = "hashed-tf-v1:128";

// Rows with a log signal (token pools) and a structured signal in feature 0.
// noise_logs makes every log the same regardless of label.
JobDataset toy_dataset(std::size_t n, std::uint64_t seed, double signal = 1.5, bool noise_logs = false,
                       const std::string& repo = "acme/widget") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    const auto embedder = make_embedder(kEmbedder);
    const std::vector<std::string> flaky_words = {"timeout", "connection", "reset", "runner", "lost", "network"};
    const std::vector<std::string> safe_words = {"assertion", "expected", "compile", "symbol", "checkstyle", "null"};
    const std::vector<std::string> noise_words = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
    JobDataset ds;
    ds.embedder_id = kEmbedder;
    ds.feature_names = {"signal", "n1", "n2", "n3", "n4", "n5"};
    for (std::size_t i = 0; i < n; ++i) {
        JobRow r;
        r.repo = repo;
        r.build_id = static_cast<std::int64_t>(i + 1);
        r.job_name = "build";
        r.job_ref = repo + "/" + std::to_string(r.build_id) + "/build";
        r.start = t0() + std::chrono::minutes(static_cast<int>(i));
        r.label = rng() % 10 < 3 ? 1 : 0;
        const auto& pool = noise_logs ? noise_words : (r.label ? flaky_words : safe_words);
        std::string log = "Error:";
        for (int w = 0; w < 6; ++w) log += " " + (rng() % 3 == 0 ? noise_words[rng() % 6] : pool[rng() % 6]);
        r.cleaned_log = log;
        r.embedding = LogDocument::make(r.job_ref, log + "\n", *embedder).embedding;
        r.features = {signal * r.label + z(rng), z(rng), z(rng), z(rng), z(rng), z(rng)};
        ds.rows.push_back(std::move(r));
    }
    return ds;
}

GridSpec small_grid() {
    GridSpec g;
    g.K_values = {5, 10};
    g.F_values = {2, 4};
    g.alpha_values = {0.0, 0.5, 1.0};
    g.beta_values = {0.3, 0.5, 0.7};
    g.normalize();
    return g;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double concordant = 0;
    double pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] != 1 || y[j] != 0) continue;
            pairs += 1;
            concordant += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    }
    return concordant / pairs;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        out[fs::relative(e.path(), root).string()] = s.str();
    }
    return out;
}

}  // namespace

TEST(Plan, ThousandRowExamples) {
    const auto p = forward_chaining_plan(1000);
    ASSERT_EQ(p.groups.size(), 10u);
    EXPECT_EQ(p.groups[0], (FoldGroup{{0, 500}, {500, 550}, {550, 600}}));
    EXPECT_EQ(p.groups[4], (FoldGroup{{0, 900}, {900, 950}, {950, 1000}}));
    EXPECT_EQ(p.groups[5], (FoldGroup{{0, 500}, {550, 600}, {500, 550}}));
}

TEST(Plan, HygieneAndSwapSymmetryForManySizes) {
    for (std::size_t n : {20, 21, 39, 200, 333, 1000, 4158, 9999}) {
        const auto p = forward_chaining_plan(n);
        ASSERT_EQ(p.rows, n);
        ASSERT_EQ(p.groups.size(), 10u);
        for (std::size_t g = 0; g < 10; ++g) {
            const auto& x = p.groups[g];
            ASSERT_EQ(x.train.begin, 0u);
            ASSERT_GT(x.train.size(), 0u);
            ASSERT_GT(x.val.size(), 0u);
            ASSERT_EQ(x.val.size(), x.test.size());
            ASSERT_LE(x.train.end, std::min(x.val.begin, x.test.begin)) << n;
            ASSERT_LE(std::max(x.val.end, x.test.end), n);
            // disjoint and contiguous
            ASSERT_TRUE(x.val.end == x.test.begin || x.test.end == x.val.begin);
        }
        for (std::size_t r = 0; r < 5; ++r) {
            ASSERT_EQ(p.groups[r + 5].train, p.groups[r].train);
            ASSERT_EQ(p.groups[r + 5].val, p.groups[r].test);
            ASSERT_EQ(p.groups[r + 5].test, p.groups[r].val);
        }
    }
}

TEST(Plan, TooFewRowsIsInfeasible) {
    EXPECT_THROW(forward_chaining_plan(kMinPlanRows - 1), PlanInfeasible);
    try {
        forward_chaining_plan(5);
    } catch (const PlanInfeasible& e) {
        EXPECT_NE(std::string(e.what()).find(std::to_string(kMinPlanRows)), std::string::npos);
    }
}

TEST(Metrics, AucExampleAndPerfectRanking) {
    const std::vector<double> s = {0.9, 0.8, 0.7, 0.1};
    const std::vector<int> y = {1, 0, 1, 0};
    EXPECT_DOUBLE_EQ(auc(s, y), 0.75);
    const auto m = metrics(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}, 0.5);
    EXPECT_EQ(m.precision, 1.0);
    EXPECT_EQ(m.recall, 1.0);
    EXPECT_EQ(m.f1, 1.0);
    EXPECT_EQ(m.auc, 1.0);
}

TEST(Metrics, AllSafeUsesZeroDivisionConvention) {
    const auto m = metrics(std::vector<double>{0.1, 0.2, 0.3}, std::vector<int>{1, 0, 1}, 0.5);
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_TRUE(m.precision_undefined);
    EXPECT_EQ(m.recall, 0.0);
    EXPECT_EQ(m.f1, 0.0);
    bool undefined = false;
    EXPECT_EQ(auc(std::vector<double>{0.2, 0.4}, std::vector<int>{1, 1}, &undefined), 0.5);
    EXPECT_TRUE(undefined);
    EXPECT_THROW(metrics(std::vector<double>{}, std::vector<int>{}, 0.5), ContractError);
}

TEST(Metrics, ThresholdIsStrict) {
    const auto m = metrics(std::vector<double>{0.5, 0.6}, std::vector<int>{1, 1}, 0.5);
    EXPECT_EQ(m.recall, 0.5);
}

TEST(Metrics, AucMatchesAllPairsOracle) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t n = 2 + rng() % 499;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % (trial % 2 ? 5 : 1000)) / 7.0;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        ASSERT_NEAR(auc(s, y), pairwise_auc(s, y), 1e-12) << trial;
    }
}

TEST(Metrics, MeanIsInvariantToGroupOrder) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u;
    std::vector<Metrics> ms(10);
    for (auto& m : ms) m = {u(rng), u(rng), u(rng), u(rng)};
    const auto a = mean_metrics(ms);
    std::shuffle(ms.begin(), ms.end(), rng);
    const auto b = mean_metrics(ms);
    EXPECT_NEAR(a.f1, b.f1, 1e-12);
    EXPECT_NEAR(a.auc, b.auc, 1e-12);
    const auto med = median_metrics({{0.1, 0, 0, 0}, {0.5, 0, 0, 0}, {0.2, 0, 0, 0}});
    EXPECT_EQ(med.precision, 0.2);
}

TEST(Grid, PaperGridHas4158Points) {
    const auto g = GridSpec::paper();
    EXPECT_EQ(g.size(), 4158u);
    EXPECT_EQ(g.K_values, (std::vector<int>{5, 10, 15, 20, 25, 30}));
    EXPECT_EQ(g.F_values, (std::vector<int>{5, 10, 20, 30, 40, 50, 60}));
    EXPECT_EQ(g.alpha_values.size(), 11u);
    EXPECT_EQ(g.beta_values.size(), 9u);
    EXPECT_EQ(GridSpec::from_json(g.to_json()).size(), 4158u);
}

TEST(Grid, NormalizeRejectsBadValues) {
    auto g = small_grid();
    g.beta_values = {1.0};
    EXPECT_THROW(g.normalize(), ContractError);
    g = small_grid();
    g.K_values.clear();
    EXPECT_THROW(g.normalize(), ContractError);
    g = small_grid();
    g.alpha_values = {0.5, 0.0, 0.5};
    g.normalize();
    EXPECT_EQ(g.alpha_values, (std::vector<double>{0.0, 0.5}));
}

TEST(SelectConfig, SinglePointAndLexicographicTieBreak) {
    ChannelScores log;
    ChannelScores st;
    const std::vector<int> val = {1, 0, 1, 0};
    log.val[5] = {0.9, 0.1, 0.8, 0.2};
    log.val[10] = {0.9, 0.1, 0.8, 0.2};
    st.val[3] = {0.9, 0.1, 0.8, 0.2};
    st.val[4] = {0.9, 0.1, 0.8, 0.2};
    log.test = {{5, {0.7}}, {10, {0.7}}};
    st.test = {{3, {0.7}}, {4, {0.7}}};
    GridSpec one{{10}, {4}, {0.5}, {0.5}};
    const auto a = select_config(log, st, val, one);
    EXPECT_EQ(a.best, (DetectorConfig{10, 4, 0.5, 0.5}));
    GridSpec tied{{10, 5}, {4, 3}, {1.0, 0.0}, {0.5, 0.3}};
    tied.normalize();
    const auto b = select_config(log, st, val, tied);
    EXPECT_EQ(b.best, (DetectorConfig{5, 3, 0.0, 0.3}));
    EXPECT_EQ(b.val_f1, 1.0);
}

TEST(GridSearch, PerturbingTestLabelsNeverChangesTheSelection) {
    const auto ds = toy_dataset(200, 11);
    const auto plan = forward_chaining_plan(ds.rows.size());
    const auto grid = small_grid();
    for (std::size_t g : {0, 4, 7}) {
        const auto& group = plan.groups[g];
        auto flipped = ds;
        for (auto i = group.test.begin; i < group.test.end; ++i) flipped.rows[i].label ^= 1;
        const auto a = grid_search(search_inputs(ds, group), grid, "lr", 3);
        const auto b = grid_search(search_inputs(flipped, group), grid, "lr", 3);
        EXPECT_EQ(a.best, b.best) << g;
        EXPECT_EQ(a.val_f1, b.val_f1);
        EXPECT_EQ(a.test_scores, b.test_scores);
        EXPECT_EQ(search_inputs(ds, group).test.size(), group.test.size());
    }
}

TEST(GridSearch, FindsThePlantedSignal) {
    const auto ds = toy_dataset(300, 12);
    const auto plan = forward_chaining_plan(ds.rows.size());
    const auto& group = plan.groups[4];
    const auto r = grid_search(search_inputs(ds, group), small_grid(), "rf", 5);
    std::vector<int> y;
    for (auto i = group.test.begin; i < group.test.end; ++i) y.push_back(ds.rows[i].label);
    EXPECT_GT(auc(r.test_scores, y), 0.9);
}

TEST(Baseline, CiFeatureEqualToLabelDrivesAuc) {
    auto ds = toy_dataset(200, 13, 0.0, true);
    for (auto& r : ds.rows) r.features[3] = r.label;
    EvaluationOptions o;
    o.models = {};
    o.baseline = true;
    o.grid = small_grid();
    o.seed = 1;
    const auto rep = evaluate_project(ds, o);
    ASSERT_EQ(rep.models.size(), 1u);
    EXPECT_EQ(rep.models[0].model, kBaselineName);
    EXPECT_GT(rep.models[0].mean.auc, 0.95);
    EXPECT_EQ(rep.models[0].evaluated_groups, 10);
}

TEST(Evaluate, EveryModelSharesTheProjectPlan) {
    const auto ds = toy_dataset(120, 14);
    EvaluationOptions o;
    o.models = {"lr", "rf"};
    o.baseline = true;
    o.grid = small_grid();
    o.seed = 2;
    const auto rep = evaluate_project(ds, o);
    EXPECT_EQ(rep.plan, forward_chaining_plan(120));
    ASSERT_EQ(rep.models.size(), 3u);
    EXPECT_EQ(rep.models[0].model, kBaselineName);
    for (const auto& m : rep.models) {
        EXPECT_EQ(m.plan, rep.plan) << m.model;
        ASSERT_EQ(m.groups.size(), 10u);
        for (const auto& g : m.groups) {
            for (double v : {g.test.precision, g.test.recall, g.test.f1, g.test.auc}) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
            if (m.model != kBaselineName && !g.skipped) EXPECT_TRUE(g.config.has_value());
        }
    }
}

TEST(Evaluate, SingleClassTrainingSliceIsSkipped) {
    auto ds = toy_dataset(40, 15);
    for (auto& r : ds.rows) r.label = 0;
    for (std::size_t i = 30; i < 40; ++i) ds.rows[i].label = 1;
    EvaluationOptions o;
    o.grid = small_grid();
    o.models = {"lr"};
    const auto rep = evaluate_project(ds, o);
    EXPECT_TRUE(rep.models[0].groups[0].skipped);
    EXPECT_FALSE(rep.models[0].groups[0].diagnostics.empty());
}

TEST(Evaluate, ReportHasPerProjectRowsAverageAndMedian) {
    auto ds = toy_dataset(100, 16, 1.5, false, "acme/alpha");
    auto other = toy_dataset(100, 17, 1.5, false, "acme/beta");
    for (auto& r : other.rows) ds.rows.push_back(r);
    auto tiny = toy_dataset(10, 18, 1.5, false, "acme/tiny");
    for (auto& r : tiny.rows) ds.rows.push_back(r);
    order_rows(ds.rows);
    EvaluationOptions o;
    o.grid = small_grid();
    o.models = {"lr", "rf"};
    o.seed = 4;
    const auto rep = evaluate(ds, o);
    ASSERT_EQ(rep.projects.size(), 2u);
    EXPECT_FALSE(rep.diagnostics.empty());  // tiny project skipped
    EXPECT_EQ(rep.average.size(), 2u);
    EXPECT_EQ(rep.median.size(), 2u);
    EXPECT_NEAR(rep.average.at("lr").f1, (rep.projects[0].models[0].mean.f1 + rep.projects[1].models[0].mean.f1) / 2,
                1e-12);
    std::ostringstream text;
    rep.render_text(text);
    const auto s = text.str();
    for (const char* needle : {"Project", "Prec.", "Recall", "F1", "AUC", "acme/alpha", "acme/beta", "Avg.", "Mid."}) {
        EXPECT_NE(s.find(needle), std::string::npos) << needle;
    }
    EXPECT_LT(s.find("acme/beta"), s.find("Avg."));
    EXPECT_LT(s.find("Avg."), s.find("Mid."));
    const auto j = rep.to_json();
    EXPECT_EQ(j.at("projects").size(), 2u);
    EXPECT_TRUE(j.contains("average"));
    EXPECT_TRUE(j.contains("median"));
}

TEST(Dataset, OrderingBreaksTiesByRepoBuildAndName) {
    std::vector<JobRow> rows(3);
    rows[0] = {"b", "z/z", 1, "a", t0()};
    rows[1] = {"a", "a/a", 2, "b", t0()};
    rows[2] = {"c", "a/a", 2, "a", t0() - std::chrono::minutes(1)};
    order_rows(rows);
    EXPECT_EQ(rows[0].job_ref, "c");
    EXPECT_EQ(rows[1].job_ref, "a");
    EXPECT_EQ(rows[2].job_ref, "b");
}

TEST(Synth, ExactFlakyCountAndDeterminism) {
    SynthSpec spec;
    spec.n = 100;
    spec.flaky_ratio = 0.3;
    const auto a = generate_synthetic_corpus(spec, 5);
    int flaky = 0;
    for (const auto& l : a.labels) flaky += l.label == Label::flaky;
    EXPECT_EQ(a.labels.size(), 100u);
    EXPECT_EQ(flaky, 30);
    TempDir d1;
    TempDir d2;
    write_synthetic_corpus(d1.path(), a);
    write_synthetic_corpus(d2.path(), generate_synthetic_corpus(spec, 5));
    EXPECT_EQ(read_tree(d1.path()), read_tree(d2.path()));
    TempDir d3;
    write_synthetic_corpus(d3.path(), generate_synthetic_corpus(spec, 6));
    EXPECT_NE(read_tree(d1.path()), read_tree(d3.path()));
}

TEST(Synth, InfeasibleSpecsThrow) {
    SynthSpec s;
    s.flaky_ratio = 0.0;
    EXPECT_THROW(generate_synthetic_corpus(s, 1), ContractError);
    s.flaky_ratio = 1.0;
    EXPECT_THROW(generate_synthetic_corpus(s, 1), ContractError);
    EXPECT_EQ(SynthSpec::parse_signal("none"), 0.0);
    EXPECT_EQ(SynthSpec::parse_signal("medium"), 1.0);
    EXPECT_EQ(SynthSpec::parse_signal("0.25"), 0.25);
    EXPECT_THROW(SynthSpec::parse_signal("loud"), ContractError);
}

TEST(Synth, CorpusLoadsIntoALabeledDataset) {
    SynthSpec spec;
    spec.n = 60;
    spec.projects = 2;
    const auto c = generate_synthetic_corpus(spec, 9);
    TempDir dir;
    write_synthetic_corpus(dir.path(), c);
    const auto corpus = load_corpus(dir.path());
    EXPECT_TRUE(corpus.diagnostics.empty());
    const auto labels = load_label_map(dir / "labels.json");
    const auto ds = build_dataset(corpus, labels, kEmbedder);
    ASSERT_EQ(ds.rows.size(), 60u);
    EXPECT_EQ(ds.projects().size(), 2u);
    int flaky = 0;
    for (const auto& r : ds.rows) flaky += r.label;
    EXPECT_EQ(flaky, 18);
    for (std::size_t i = 1; i < ds.rows.size(); ++i) EXPECT_LE(ds.rows[i - 1].start, ds.rows[i].start);
    EXPECT_EQ(ds.feature_names, feature_names());
}
