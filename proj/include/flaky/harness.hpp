#pragma once

// Forward-chaining evaluation: time-ordered job dataset, fold plans, grid
// search over (K, F, alpha, beta), metrics, the TF-IDF baseline and the
// Table-style report.

#include "flaky/detector.hpp"
#include "flaky/features.hpp"
#include "flaky/ingestion.hpp"
#include "flaky/labeler.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace flaky {

// --- dataset -----------------------------------------------------------------

struct JobRow {
    std::string job_ref;
    std::string repo;
    std::int64_t build_id = 0;
    std::string job_name;
    Timestamp start{};
    int label = 0;  // 1 flaky
    std::vector<double> features;
    Embedding embedding;  // empty when the job has no log
    std::string cleaned_log;  // full log with placeholders, for the baseline
};

struct JobDataset {
    std::vector<std::string> feature_names;
    std::string embedder_id;
    std::vector<JobRow> rows;  // time order
    Diagnostics diagnostics;

    [[nodiscard]] std::vector<std::string> projects() const;
    [[nodiscard]] JobDataset only(const std::string& repo) const;
};

// Start time, then repo, build id and job name.
void order_rows(std::vector<JobRow>& rows);

// One row per initially failed job that has a label. Unlabeled jobs are
// counted in a diagnostic.
JobDataset build_dataset(const Corpus& corpus, const std::map<std::string, Label>& labels,
                         const std::string& embedder_id = "hashed-tf-v1:512",
                         const PatternLibrary& library = PatternLibrary::builtin(), int jobs = 1);

// --- fold plan ---------------------------------------------------------------

struct Range {
    std::size_t begin = 0;
    std::size_t end = 0;
    [[nodiscard]] std::size_t size() const noexcept { return end - begin; }
    friend bool operator==(const Range&, const Range&) = default;
};

struct FoldGroup {
    Range train;
    Range val;
    Range test;
    friend bool operator==(const FoldGroup&, const FoldGroup&) = default;
};

struct FoldPlan {
    std::size_t rows = 0;
    std::vector<FoldGroup> groups;  // 10: five expanding rounds, then the same with val/test swapped
    [[nodiscard]] nlohmann::json to_json() const;
    friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

// Smallest n whose 5% slices are nonempty.
inline constexpr std::size_t kMinPlanRows = 20;

// Round r: train [0, floor(n(50+10r)/100)), then a val and a test slice of
// floor(n/20) rows each. Throws PlanInfeasible below kMinPlanRows.
FoldPlan forward_chaining_plan(std::size_t n);

// --- metrics -----------------------------------------------------------------

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.5;
    bool precision_undefined = false;  // no predicted positives
    bool recall_undefined = false;  // no actual positives
    bool auc_undefined = false;  // a single class

    [[nodiscard]] nlohmann::json to_json() const;
};

// Mann-Whitney rank statistic with midranks; 0.5 (flagged) for one class.
double auc(std::span<const double> scores, std::span<const int> labels, bool* undefined = nullptr);

// Threshold metrics use score > beta. Throws ContractError on empty or
// mismatched input.
Metrics metrics(std::span<const double> scores, std::span<const int> labels, double beta);

// --- grid --------------------------------------------------------------------

struct GridSpec {
    std::vector<int> K_values;
    std::vector<int> F_values;
    std::vector<double> alpha_values;
    std::vector<double> beta_values;

    // K 5..30 step 5; F {5,10,20,30,40,50,60}; alpha 0..1 step .1; beta .1..0.9.
    static GridSpec paper();
    // {"K": [...], "F": [...], "alpha": [...], "beta": [...]}
    static GridSpec from_json(const nlohmann::json& doc);
    [[nodiscard]] nlohmann::json to_json() const;
    // Sorts and deduplicates; throws ContractError on empty lists or values
    // outside the DetectorConfig ranges.
    void normalize();
    [[nodiscard]] std::size_t size() const noexcept {
        return K_values.size() * F_values.size() * alpha_values.size() * beta_values.size();
    }
};

// What a grid search may look at: labels for train and val only.
struct UnlabeledJob {
    const std::string* job_ref = nullptr;
    Timestamp timestamp{};
    const Embedding* embedding = nullptr;
    const std::vector<double>* features = nullptr;
    const std::string* cleaned_log = nullptr;
};

struct SearchInputs {
    const std::vector<std::string>* feature_names = nullptr;
    std::vector<UnlabeledJob> train;
    std::vector<int> train_labels;
    std::vector<UnlabeledJob> val;
    std::vector<int> val_labels;
    std::vector<UnlabeledJob> test;
};

SearchInputs search_inputs(const JobDataset& ds, const FoldGroup& group);

// Channel scores for val and test rows, keyed by K or F.
struct ChannelScores {
    std::map<int, std::vector<double>> val;
    std::map<int, std::vector<double>> test;
};

// Log model refit per K over one top-max(K) neighbor retrieval per row.
ChannelScores log_channel_scores(const SearchInputs& in, const std::vector<int>& K_values);
// Classifier refit per F over one MI ranking of the training rows. Throws
// BalanceImpossible when the training slice has a single class.
ChannelScores struct_channel_scores(const SearchInputs& in, const std::vector<int>& F_values,
                                    const std::string& classifier_kind, std::uint64_t seed);

struct SearchResult {
    DetectorConfig best;
    double val_f1 = 0.0;
    bool val_degenerate = false;  // val slice has one class
    std::vector<double> test_scores;  // p_final of the best config
};

// Highest validation F1; earlier (K, F, alpha, beta) in ascending order wins
// ties.
SearchResult select_config(const ChannelScores& log, const ChannelScores& structured, std::span<const int> val_labels,
                           const GridSpec& grid);

SearchResult grid_search(const SearchInputs& in, const GridSpec& grid, const std::string& classifier_kind,
                         std::uint64_t seed);

// --- baseline ----------------------------------------------------------------

inline constexpr std::string_view kBaselineName = "baseline-adapted";

struct BaselineOptions {
    std::size_t max_terms = 1000;
    int inner_folds = 5;
    std::vector<double> vote_weights = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
};

struct BaselineResult {
    double weight = 0.5;  // on model A
    double beta = 0.5;
    double val_f1 = 0.0;
    std::vector<double> test_scores;
};

// TF-IDF over cleaned logs into forest A; out-of-fold A scores join the
// structured features for forest B; weighted vote tuned on val.
BaselineResult run_baseline_group(const SearchInputs& in, const std::vector<double>& betas,
                                  const BaselineOptions& options, std::uint64_t seed);

// --- evaluation --------------------------------------------------------------

struct GroupResult {
    int group = 0;  // 1-based
    bool skipped = false;
    std::optional<DetectorConfig> config;  // detector models
    std::optional<double> baseline_weight;
    double val_f1 = 0.0;
    Metrics test;
    Diagnostics diagnostics;
};

struct ModelResult {
    std::string model;
    FoldPlan plan;  // the plan its groups were drawn from
    std::vector<GroupResult> groups;
    Metrics mean;  // over evaluated groups, in group order
    int evaluated_groups = 0;
};

struct ProjectReport {
    std::string project;
    std::size_t rows = 0;
    FoldPlan plan;
    std::vector<ModelResult> models;
};

struct EvaluationOptions {
    std::vector<std::string> models = {"lr", "rf"};
    bool baseline = false;
    GridSpec grid = GridSpec::paper();
    BaselineOptions baseline_options;
    std::uint64_t seed = 0;
    int jobs = 1;
};

struct EvaluationReport {
    std::vector<std::string> models;  // column order
    std::vector<ProjectReport> projects;
    std::map<std::string, Metrics> average;
    std::map<std::string, Metrics> median;
    std::uint64_t seed = 0;
    Diagnostics diagnostics;

    [[nodiscard]] nlohmann::json to_json() const;
    // Project | per model: Prec. Recall F1 AUC, then Avg. and Mid. rows.
    void render_text(std::ostream& out) const;
};

// Every model of one project runs on the same plan.
ProjectReport evaluate_project(const JobDataset& project, const EvaluationOptions& options);

// Plans folds per project; projects below kMinPlanRows are skipped with a
// diagnostic.
EvaluationReport evaluate(const JobDataset& ds, const EvaluationOptions& options);

Metrics mean_metrics(const std::vector<Metrics>& ms);
Metrics median_metrics(const std::vector<Metrics>& ms);

}  // namespace flaky
