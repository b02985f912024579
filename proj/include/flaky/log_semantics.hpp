#pragma once

// Log channel: critical-line filter, placeholder normalization, hashed
// embedding, exact cosine top-K retrieval, and the logistic score over the
// [S1..SK, L1..LK] neighbor vector.

#include "flaky/learners.hpp"
#include "flaky/time.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flaky {

// Normalization placeholders (UTF-8).
inline constexpr std::string_view kTsToken = "⟨TS⟩";
inline constexpr std::string_view kAddrToken = "⟨ADDR⟩";
inline constexpr std::string_view kUrlToken = "⟨URL⟩";
inline constexpr std::string_view kPathToken = "⟨PATH⟩";
inline constexpr std::string_view kNumToken = "⟨NUM⟩";

// Lines carrying an error marker ("E:", "ERROR", "FATAL", "##[error]", ...),
// a structured level=error/fatal entry, or an exception / stack-trace frame.
// Runner timestamp prefixes are removed; order is preserved.
std::vector<std::string> preprocess(std::string_view raw);

// Replaces URLs, timestamps, hex addresses, absolute paths and integers of
// five or more digits with placeholders; joins lines with '\n'.
std::string normalize(const std::vector<std::string>& filtered_lines);

using Embedding = std::vector<double>;

class Embedder {
public:
    virtual ~Embedder() = default;
    [[nodiscard]] virtual Embedding embed(std::string_view normalized) const = 0;
    [[nodiscard]] virtual std::size_t dimension() const = 0;
    [[nodiscard]] virtual std::string id() const = 0;
};

// FNV-1a hashed term frequencies over lower-cased tokens split at whitespace
// and ASCII punctuation (placeholders stay whole), weighted 1 + ln(tf),
// L2-normalized. Empty text gives the zero vector.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dimension = 512) : dimension_(dimension) {}
    [[nodiscard]] Embedding embed(std::string_view normalized) const override;
    [[nodiscard]] std::size_t dimension() const override { return dimension_; }
    [[nodiscard]] std::string id() const override;

private:
    std::size_t dimension_;
};

// "hashed-tf-v1:<D>" -> embedder. Throws ContractError for unknown ids.
std::unique_ptr<Embedder> make_embedder(const std::string& id);

std::vector<std::string> tokenize(std::string_view normalized);

// Dot product of two equal-length vectors; for unit vectors the cosine.
// Zero vectors give 0.
double cosine(std::span<const double> a, std::span<const double> b);

struct LogDocument {
    std::string job_ref;
    std::string raw;
    std::vector<std::string> filtered_lines;
    std::string normalized;
    Embedding embedding;

    static LogDocument make(std::string job_ref, std::string raw, const Embedder& embedder);
};

struct IndexEntry {
    Embedding embedding;
    int label = 0;
    std::string job_ref;
    Timestamp timestamp{};
};

struct Neighbor {
    double similarity = 0.0;
    double label = 0.5;
    std::string job_ref;  // empty for padding
};

// Exact brute-force cosine index over training documents.
class VectorIndex {
public:
    VectorIndex() = default;
    // Throws ContractError on mixed dimensions or labels outside {0,1}.
    VectorIndex(std::vector<IndexEntry> entries, std::string built_from);

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] const std::vector<IndexEntry>& entries() const noexcept { return entries_; }
    [[nodiscard]] const std::string& built_from() const noexcept { return built_from_; }
    [[nodiscard]] bool contains(const std::string& job_ref) const;

    // Top k by cosine descending; ties by newer timestamp, then job_ref.
    // Fewer than k entries pad with (0, 0.5). exclude drops one job_ref
    // (leave-one-out features for training rows). Throws ContractError for
    // k < 1.
    [[nodiscard]] std::vector<Neighbor> retrieve(std::span<const double> query, int k,
                                                 const std::string* exclude = nullptr) const;

    // Throws ContractError when any of refs is indexed.
    void assert_excludes(std::span<const std::string> refs) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static VectorIndex from_json(const nlohmann::json& doc);

private:
    std::vector<IndexEntry> entries_;
    std::string built_from_;
};

// Orders neighbors as retrieve() does.
bool neighbor_before(double sim_a, Timestamp ts_a, const std::string& ref_a, double sim_b, Timestamp ts_b,
                     const std::string& ref_b);

// [S1..SK, L1..LK]
std::vector<double> neighbor_features(const std::vector<Neighbor>& neighbors, int k);

struct LogScoreModel {
    int k = 0;
    std::vector<double> weights;  // 2k
    double bias = 0.0;
    double lambda = 1e-3;

    // sigmoid(w.x + b). Throws ContractError when fv.size() != 2k.
    [[nodiscard]] double score(std::span<const double> fv) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static LogScoreModel from_json(const nlohmann::json& doc);
};

LogScoreModel train_log_model(const std::vector<std::vector<double>>& features, std::span<const int> labels, int k,
                              const logistic::Options& options = {});

}  // namespace flaky
