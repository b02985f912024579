#pragma once

// Feature selection and base classifiers for the structured channel, plus
// the plain logistic-regression core shared with the log channel.

#include "flaky/time.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flaky {

struct Dataset {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;  // 0 or 1
    std::vector<std::string> feature_names;
    std::vector<Timestamp> timestamps;  // empty or one per row

    [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }
    [[nodiscard]] std::size_t width() const noexcept { return feature_names.size(); }
    [[nodiscard]] std::size_t positives() const;
    // Throws ContractError on ragged rows, non-binary labels or a name count
    // that differs from the row width.
    void validate() const;
    [[nodiscard]] Dataset subset(std::span<const std::size_t> idx) const;
    // Columns idx, in that order.
    [[nodiscard]] Dataset project(std::span<const std::size_t> idx) const;
};

// --- feature selection -------------------------------------------------------

inline constexpr int kDefaultBins = 10;

// Equal-frequency bin of each value: floor(r * bins / n) where r is the
// position of the value's first occurrence in sorted order, so equal values
// share a bin and a constant column collapses to bin 0.
std::vector<int> equal_frequency_bins(std::span<const double> column, int bins);

// Mutual information in bits between two discrete variables.
double mutual_information_discrete(std::span<const int> a, std::span<const int> b);
// Shannon entropy in bits.
double entropy_bits(std::span<const int> values);

// Bins the column, then computes MI with the labels. Throws ContractError on
// length mismatch or fewer than two rows.
double mutual_information(std::span<const double> column, std::span<const int> labels, int bins = kDefaultBins);

struct RankedFeature {
    std::string name;
    double mi_bits = 0.0;
    std::size_t column = 0;  // index in the unprojected dataset
};

// Descending by MI, ties by name.
using FeatureRanking = std::vector<RankedFeature>;

FeatureRanking rank_features(const Dataset& ds, int bins = kDefaultBins);

struct Selection {
    FeatureRanking ranking;
    Dataset projected;  // top N columns in ranking order
};

Selection select_top_features(const Dataset& ds, std::size_t n, int bins = kDefaultBins);

// Appends random duplicates of minority rows until both classes have equal
// counts. Throws BalanceImpossible when a class is missing.
Dataset oversample(const Dataset& ds, std::uint64_t seed);

// --- classifiers -------------------------------------------------------------

class Classifier {
public:
    virtual ~Classifier() = default;
    // Deterministic given the seed. Throws ContractError on fewer than two rows
    // or a single class.
    virtual void fit(const Dataset& ds, std::uint64_t seed) = 0;
    [[nodiscard]] virtual double predict_proba(std::span<const double> x) const = 0;
    [[nodiscard]] virtual std::string kind() const = 0;
    [[nodiscard]] virtual nlohmann::json to_json() const = 0;
    [[nodiscard]] virtual std::size_t input_width() const = 0;
};

// "lr", "rf" or "mlp" with default options.
std::unique_ptr<Classifier> make_classifier(std::string_view kind);
std::unique_ptr<Classifier> classifier_from_json(const nlohmann::json& doc);

namespace logistic {

struct Options {
    double learning_rate = 0.1;
    double lambda = 1e-3;
    int max_epochs = 500;
    double gradient_tolerance = 1e-6;
};

double sigmoid(double z);

// Mean log loss plus (lambda / 2) * |w|^2 (bias unregularized).
double loss(std::span<const double> w, double b, const std::vector<std::vector<double>>& x, std::span<const int> y,
            double lambda);
// Gradient of loss(); the last element is d/db.
std::vector<double> gradient(std::span<const double> w, double b, const std::vector<std::vector<double>>& x,
                             std::span<const int> y, double lambda);

struct Fit {
    std::vector<double> weights;
    double bias = 0.0;
    int epochs = 0;
    std::vector<double> loss_history;  // loss before each step
};

// Full-batch gradient descent from zero.
Fit train(const std::vector<std::vector<double>>& x, std::span<const int> y, std::size_t width,
          const Options& options = {});

}  // namespace logistic

// Per-column z-scoring fitted on training rows; constant columns pass through
// centered.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const std::vector<std::vector<double>>& rows, std::size_t width);
    [[nodiscard]] std::vector<double> apply(std::span<const double> x) const;
    [[nodiscard]] nlohmann::json to_json() const;
    static Standardizer from_json(const nlohmann::json& doc);
};

class LogisticRegression final : public Classifier {
public:
    explicit LogisticRegression(logistic::Options options = {}) : options_(options) {}

    void fit(const Dataset& ds, std::uint64_t seed) override;
    [[nodiscard]] double predict_proba(std::span<const double> x) const override;
    [[nodiscard]] std::string kind() const override { return "lr"; }
    [[nodiscard]] nlohmann::json to_json() const override;
    [[nodiscard]] std::size_t input_width() const override { return scaler_.mean.size(); }
    static LogisticRegression from_json(const nlohmann::json& doc);

private:
    logistic::Options options_;
    Standardizer scaler_;
    std::vector<double> weights_;
    double bias_ = 0.0;
};

struct ForestOptions {
    int trees = 100;
    int max_depth = 12;
    int max_features = 0;  // 0: floor(sqrt(F)), at least 1
    int min_leaf = 2;
    bool bootstrap = true;
};

// Gini CART trees. predict_proba averages the leaf positive fractions of all
// trees, so a forest of single-leaf trees returns the class prior.
class RandomForest final : public Classifier {
public:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;  // go left when x[feature] <= threshold
        int left = -1;
        int right = -1;
        double value = 0.0;  // positive fraction at this node
    };
    using Tree = std::vector<Node>;  // root at index 0

    explicit RandomForest(ForestOptions options = {}) : options_(options) {}

    void fit(const Dataset& ds, std::uint64_t seed) override;
    [[nodiscard]] double predict_proba(std::span<const double> x) const override;
    [[nodiscard]] std::string kind() const override { return "rf"; }
    [[nodiscard]] nlohmann::json to_json() const override;
    [[nodiscard]] std::size_t input_width() const override { return width_; }
    static RandomForest from_json(const nlohmann::json& doc);

    [[nodiscard]] const std::vector<Tree>& trees() const noexcept { return trees_; }

private:
    ForestOptions options_;
    std::size_t width_ = 0;
    std::vector<Tree> trees_;
};

struct MlpOptions {
    int hidden = 32;
    int epochs = 400;
    double learning_rate = 0.1;
    double lambda = 1e-4;
};

// One ReLU hidden layer, sigmoid output, full-batch gradient descent on log
// loss over standardized inputs. He-initialized from the seed.
class Mlp final : public Classifier {
public:
    // Flat parameter layout: W1 (hidden x width, row-major), b1, w2, b2.
    struct Params {
        std::size_t width = 0;
        std::size_t hidden = 0;
        std::vector<double> values;
    };

    explicit Mlp(MlpOptions options = {}) : options_(options) {}

    void fit(const Dataset& ds, std::uint64_t seed) override;
    [[nodiscard]] double predict_proba(std::span<const double> x) const override;
    [[nodiscard]] std::string kind() const override { return "mlp"; }
    [[nodiscard]] nlohmann::json to_json() const override;
    [[nodiscard]] std::size_t input_width() const override { return params_.width; }
    static Mlp from_json(const nlohmann::json& doc);

    static Params init(std::size_t width, std::size_t hidden, std::uint64_t seed);
    static double forward(const Params& p, std::span<const double> x);
    // Mean log loss plus (lambda / 2) * |W|^2 over weight matrices.
    static double loss(const Params& p, const std::vector<std::vector<double>>& x, std::span<const int> y,
                       double lambda);
    static std::vector<double> gradient(const Params& p, const std::vector<std::vector<double>>& x,
                                        std::span<const int> y, double lambda);

private:
    MlpOptions options_;
    Standardizer scaler_;
    Params params_;
};

}  // namespace flaky
