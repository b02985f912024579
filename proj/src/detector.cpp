#include "flaky/detector.hpp"

#include "flaky/error.hpp"
#include "flaky/random.hpp"

#include <algorithm>
#include <cmath>

namespace flaky {

using nlohmann::json;

namespace {

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

bool is_zero(const Embedding& e) {
    return std::all_of(e.begin(), e.end(), [](double x) { return x == 0.0; });
}

}  // namespace

void DetectorConfig::validate() const {
    if (K < 1 || F < 1) throw ContractError("K and F must be positive");
    if (!in_unit(alpha)) throw ContractError("alpha must lie in [0,1]");
    if (!(beta > 0.0 && beta < 1.0)) throw ContractError("beta must lie in (0,1)");
}

json DetectorConfig::to_json() const { return {{"K", K}, {"F", F}, {"alpha", alpha}, {"beta", beta}}; }

DetectorConfig DetectorConfig::from_json(const json& doc) {
    DetectorConfig c{doc.at("K").get<int>(), doc.at("F").get<int>(), doc.at("alpha").get<double>(),
                     doc.at("beta").get<double>()};
    c.validate();
    return c;
}

double fuse(double p_log, double p_struct, double alpha) {
    if (!in_unit(p_log) || !in_unit(p_struct) || !in_unit(alpha)) {
        throw ContractError("fuse inputs must lie in [0,1]");
    }
    return alpha * p_log + (1.0 - alpha) * p_struct;
}

std::string_view to_string(Verdict v) { return v == Verdict::flaky ? "Flaky" : "Safe"; }

Verdict decide(double p_final, double beta) {
    if (!in_unit(p_final) || !in_unit(beta)) throw ContractError("decide inputs must lie in [0,1]");
    return p_final > beta ? Verdict::flaky : Verdict::safe;
}

std::vector<double> log_channel_features(const VectorIndex& index, const Embedding* query, int k,
                                         const std::string* exclude) {
    if (!query || query->empty() || is_zero(*query)) return neighbor_features({}, k);
    return neighbor_features(index.retrieve(*query, k, exclude), k);
}

json Prediction::to_json() const {
    json d = json::array();
    for (const auto& x : diagnostics) d.push_back({{"subject", x.subject}, {"message", x.message}});
    return {{"p_log", p_log},
            {"p_struct", p_struct},
            {"p_final", p_final},
            {"label", std::string(flaky::to_string(label))},
            {"diagnostics", std::move(d)}};
}

DetectorModel DetectorModel::train(const std::vector<TrainingJob>& jobs, const std::vector<std::string>& feature_names,
                                   const DetectorConfig& config, const std::string& classifier_kind,
                                   const std::string& embedder_id, std::uint64_t seed) {
    config.validate();
    if (jobs.empty()) throw ContractError("no training jobs");
    DetectorModel m;
    m.config_ = config;
    m.seed_ = seed;
    m.feature_names_ = feature_names;
    m.embedder_ = make_embedder(embedder_id);

    std::vector<IndexEntry> entries;
    for (const auto& j : jobs) {
        if (j.features.size() != feature_names.size()) throw ContractError("feature row width differs from names");
        if (!j.embedding.empty() && !is_zero(j.embedding)) {
            entries.push_back({j.embedding, j.label, j.job_ref, j.timestamp});
        }
    }
    m.index_ = VectorIndex(std::move(entries), embedder_id);

    std::vector<std::vector<double>> neighbor_rows;
    std::vector<int> labels;
    for (const auto& j : jobs) {
        neighbor_rows.push_back(log_channel_features(m.index_, &j.embedding, config.K, &j.job_ref));
        labels.push_back(j.label);
    }
    m.log_model_ = train_log_model(neighbor_rows, labels, config.K);

    Dataset ds;
    ds.feature_names = feature_names;
    for (const auto& j : jobs) {
        ds.rows.push_back(j.features);
        ds.labels.push_back(j.label);
        ds.timestamps.push_back(j.timestamp);
    }
    const auto f = std::min<std::size_t>(static_cast<std::size_t>(config.F), feature_names.size());
    auto sel = select_top_features(ds, f);
    m.selected_.assign(sel.ranking.begin(), sel.ranking.begin() + static_cast<std::ptrdiff_t>(f));
    auto balanced = oversample(sel.projected, derive_seed(seed, 1));
    auto clf = make_classifier(classifier_kind);
    clf->fit(balanced, derive_seed(seed, 2));
    m.classifier_ = std::move(clf);
    return m;
}

Prediction DetectorModel::predict(const LogDocument* log, std::span<const double> features) const {
    if (features.size() != feature_names_.size()) throw ContractError("feature row width differs from the model");
    Prediction p;
    const Embedding* query = log ? &log->embedding : nullptr;
    if (!log) {
        p.diagnostics.push_back({"log", "no log; neighbors padded"});
    } else if (log->embedding.empty() || is_zero(log->embedding)) {
        p.diagnostics.push_back({log->job_ref, "no critical lines; neighbors padded"});
    }
    p.p_log = log_model_.score(log_channel_features(index_, query, config_.K));
    std::vector<double> row;
    row.reserve(selected_.size());
    for (const auto& r : selected_) row.push_back(features[r.column]);
    p.p_struct = std::clamp(classifier_->predict_proba(row), 0.0, 1.0);
    p.p_final = fuse(p.p_log, p.p_struct, config_.alpha);
    p.label = decide(p.p_final, config_.beta);
    return p;
}

json DetectorModel::to_json() const {
    json sel = json::array();
    for (const auto& r : selected_) sel.push_back({{"name", r.name}, {"mi_bits", r.mi_bits}, {"column", r.column}});
    return {{"schema_version", kSchemaVersion},
            {"kind", "detector"},
            {"seed", seed_},
            {"config", config_.to_json()},
            {"embedder", embedder_->id()},
            {"index", index_.to_json()},
            {"log_model", log_model_.to_json()},
            {"feature_names", feature_names_},
            {"selected", std::move(sel)},
            {"classifier", classifier_->to_json()}};
}

DetectorModel DetectorModel::from_json(const json& doc) {
    try {
        if (doc.at("schema_version").get<int>() != kSchemaVersion) {
            throw StructuralInputError("unsupported detector model version");
        }
        DetectorModel m;
        m.seed_ = doc.at("seed").get<std::uint64_t>();
        m.config_ = DetectorConfig::from_json(doc.at("config"));
        m.embedder_ = make_embedder(doc.at("embedder").get<std::string>());
        m.index_ = VectorIndex::from_json(doc.at("index"));
        m.log_model_ = LogScoreModel::from_json(doc.at("log_model"));
        m.feature_names_ = doc.at("feature_names").get<std::vector<std::string>>();
        for (const auto& r : doc.at("selected")) {
            m.selected_.push_back(
                {r.at("name").get<std::string>(), r.at("mi_bits").get<double>(), r.at("column").get<std::size_t>()});
        }
        m.classifier_ = classifier_from_json(doc.at("classifier"));
        if (m.log_model_.k != m.config_.K) throw StructuralInputError("log model K differs from config");
        if (m.classifier_->input_width() != m.selected_.size()) {
            throw StructuralInputError("classifier width differs from selected features");
        }
        for (const auto& r : m.selected_) {
            if (r.column >= m.feature_names_.size() || m.feature_names_[r.column] != r.name) {
                throw StructuralInputError("selected feature " + r.name + " not in feature names");
            }
        }
        for (const auto& e : m.index_.entries()) {
            if (e.embedding.size() != m.embedder_->dimension()) {
                throw StructuralInputError("index dimension differs from embedder");
            }
        }
        return m;
    } catch (const json::exception& e) {
        throw StructuralInputError(std::string("malformed detector model: ") + e.what());
    } catch (const ContractError& e) {
        throw StructuralInputError(std::string("invalid detector model: ") + e.what());
    }
}

}  // namespace flaky
