#pragma once

// Score fusion, the decision rule and the trained end-to-end model.

#include "flaky/diagnostics.hpp"
#include "flaky/learners.hpp"
#include "flaky/log_semantics.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flaky {

struct DetectorConfig {
    int K = 10;
    int F = 20;
    double alpha = 0.5;
    double beta = 0.5;

    // Throws ContractError unless K, F > 0, alpha in [0,1], beta in (0,1).
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static DetectorConfig from_json(const nlohmann::json& doc);
    friend auto operator<=>(const DetectorConfig&, const DetectorConfig&) = default;
};

// alpha * p_log + (1 - alpha) * p_struct. Throws ContractError when any input
// lies outside [0,1].
double fuse(double p_log, double p_struct, double alpha);

enum class Verdict { flaky, safe };
std::string_view to_string(Verdict v);

// Flaky only when p_final > beta.
Verdict decide(double p_final, double beta);

// Neighbor vector for one query. A zero (or absent) embedding gets k padded
// neighbors instead of arbitrary zero-similarity matches.
std::vector<double> log_channel_features(const VectorIndex& index, const Embedding* query, int k,
                                         const std::string* exclude = nullptr);

struct TrainingJob {
    std::string job_ref;
    Timestamp timestamp{};
    Embedding embedding;  // empty when the job has no log
    std::vector<double> features;  // structured row, full width
    int label = 0;
};

struct Prediction {
    double p_log = 0.5;
    double p_struct = 0.5;
    double p_final = 0.5;
    Verdict label = Verdict::safe;
    Diagnostics diagnostics;

    [[nodiscard]] nlohmann::json to_json() const;
};

class DetectorModel {
public:
    static constexpr int kSchemaVersion = 1;

    // Log channel: index over all training logs, leave-one-out neighbor
    // vectors, logistic regression. Structured channel: MI ranking on the
    // original rows, top F columns, oversampling to 1:1, then the classifier.
    static DetectorModel train(const std::vector<TrainingJob>& jobs, const std::vector<std::string>& feature_names,
                               const DetectorConfig& config, const std::string& classifier_kind,
                               const std::string& embedder_id, std::uint64_t seed);

    // log is null when the job has no log. features has the full width.
    [[nodiscard]] Prediction predict(const LogDocument* log, std::span<const double> features) const;

    [[nodiscard]] const DetectorConfig& config() const noexcept { return config_; }
    [[nodiscard]] const Embedder& embedder() const { return *embedder_; }
    [[nodiscard]] const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
    [[nodiscard]] const FeatureRanking& selected() const noexcept { return selected_; }
    [[nodiscard]] const VectorIndex& index() const noexcept { return index_; }
    [[nodiscard]] const Classifier& classifier() const { return *classifier_; }
    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    [[nodiscard]] nlohmann::json to_json() const;
    // Throws StructuralInputError on version or dimension mismatches.
    static DetectorModel from_json(const nlohmann::json& doc);

private:
    DetectorConfig config_;
    std::shared_ptr<const Embedder> embedder_;
    VectorIndex index_;
    LogScoreModel log_model_;
    std::vector<std::string> feature_names_;
    FeatureRanking selected_;  // top F, column refers to feature_names_
    std::shared_ptr<const Classifier> classifier_;
    std::uint64_t seed_ = 0;
};

}  // namespace flaky
