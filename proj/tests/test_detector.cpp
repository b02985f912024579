#include "flaky/detector.hpp"
#include "flaky/error.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace flaky;

namespace {

const char* kEmbedder = "hashed-tf-v1:256";

const std::vector<std::string> kFlakyLogs = {
    "Error: connect ECONNRESET while downloading artifact from cache server",
    "java.net.SocketTimeoutException: Read timed out after 30000 ms contacting repository",
    "Error: The operation was canceled. Runner lost communication with the server",
    "fatal: unable to access remote repository: Could not resolve host during fetch",
};

const std::vector<std::string> kSafeLogs = {
    "[ERROR] WidgetTest.resize:42 expected:<3> but was:<4> AssertionFailedError",
    "[ERROR] COMPILATION ERROR cannot find symbol method resize(long) in class Widget",
    "Checkstyle violation: Line is longer than 120 characters in Widget.java",
    "error: package org.acme.missing does not exist import failed compile",
};

struct Fixture {
    std::vector<std::string> names;
    std::vector<TrainingJob> jobs;
    std::vector<std::string> logs;
};

// Flaky logs talk about networks and runners, safe ones about assertions and
// compilers. Feature 0 carries a weak label signal; the rest are noise.
Fixture make_fixture(std::uint64_t seed, int n = 80) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    const auto embedder = make_embedder(kEmbedder);
    Fixture f;
    f.names = {"signal", "noise_a", "noise_b", "noise_c", "noise_d"};
    for (int i = 0; i < n; ++i) {
        const int y = i % 3 == 0 ? 1 : 0;
        const auto& pool = y ? kFlakyLogs : kSafeLogs;
        const std::string raw = pool[rng() % pool.size()] + " run " + std::to_string(i) + "\n";
        TrainingJob j;
        j.job_ref = "acme/widget/" + std::to_string(100 + i) + "/build";
        j.timestamp = Timestamp{} + std::chrono::hours(i);
        j.embedding = LogDocument::make(j.job_ref, raw, *embedder).embedding;
        j.features = {y + 0.8 * z(rng), z(rng), z(rng), z(rng), z(rng)};
        j.label = y;
        f.jobs.push_back(std::move(j));
        f.logs.push_back(raw);
    }
    return f;
}

DetectorConfig config(double alpha, int k = 5, int features = 3) {
    DetectorConfig c;
    c.K = k;
    c.F = features;
    c.alpha = alpha;
    c.beta = 0.5;
    return c;
}

}  // namespace

TEST(Fuse, BoundariesAndArithmetic) {
    EXPECT_EQ(fuse(0.8, 0.4, 1.0), 0.8);
    EXPECT_EQ(fuse(0.8, 0.4, 0.0), 0.4);
    EXPECT_NEAR(fuse(0.8, 0.4, 0.5), 0.6, 1e-15);
    EXPECT_THROW(fuse(1.1, 0.4, 0.5), ContractError);
    EXPECT_THROW(fuse(0.5, -0.1, 0.5), ContractError);
    EXPECT_THROW(fuse(0.5, 0.5, 1.5), ContractError);
}

TEST(Fuse, AffineInAlphaAndMonotoneInScores) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double pl = u(rng);
        const double ps = u(rng);
        const double f0 = fuse(pl, ps, 0.0);
        const double f1 = fuse(pl, ps, 1.0);
        for (int i = 0; i <= 10; ++i) {
            const double a = i / 10.0;
            const double f = fuse(pl, ps, a);
            ASSERT_NEAR(f, f0 + a * (f1 - f0), 1e-12);
            ASSERT_GE(f, 0.0);
            ASSERT_LE(f, 1.0);
            const double bump = u(rng) * (1.0 - std::max(pl, ps));
            ASSERT_LE(f, fuse(pl + bump, ps, a) + 1e-15);
            ASSERT_LE(f, fuse(pl, ps + bump, a) + 1e-15);
        }
    }
}

TEST(Decide, StrictThreshold) {
    EXPECT_EQ(decide(0.9, 0.5), Verdict::flaky);
    EXPECT_EQ(decide(0.5, 0.5), Verdict::safe);
    EXPECT_EQ(decide(0.0, 0.1), Verdict::safe);
    EXPECT_EQ(to_string(Verdict::flaky), "Flaky");
    EXPECT_EQ(to_string(Verdict::safe), "Safe");
}

TEST(Decide, FlakySetShrinksAsBetaGrows) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> scores(300);
    for (auto& s : scores) s = u(rng);
    std::size_t previous = scores.size() + 1;
    for (int i = 1; i < 100; ++i) {
        const double beta = i / 100.0;
        std::size_t flaky = 0;
        for (double s : scores) flaky += decide(s, beta) == Verdict::flaky;
        ASSERT_LE(flaky, previous);
        previous = flaky;
    }
}

TEST(Config, ValidateAndRoundTrip) {
    EXPECT_NO_THROW(config(0.5).validate());
    auto c = config(0.5);
    c.K = 0;
    EXPECT_THROW(c.validate(), ContractError);
    c = config(1.2);
    EXPECT_THROW(c.validate(), ContractError);
    c = config(0.5);
    c.beta = 0.0;
    EXPECT_THROW(c.validate(), ContractError);
    c.beta = 1.0;
    EXPECT_THROW(c.validate(), ContractError);
    c = config(0.3, 7, 2);
    EXPECT_EQ(DetectorConfig::from_json(c.to_json()), c);
}

TEST(LogChannel, MissingQueryGetsPaddedNeighbors) {
    const auto f = make_fixture(3, 12);
    std::vector<IndexEntry> entries;
    for (const auto& j : f.jobs) entries.push_back({j.embedding, j.label, j.job_ref});
    VectorIndex index(entries, kEmbedder);
    const std::vector<double> padded = {0, 0, 0, 0.5, 0.5, 0.5};
    EXPECT_EQ(log_channel_features(index, nullptr, 3), padded);
    const Embedding zero(256, 0.0);
    EXPECT_EQ(log_channel_features(index, &zero, 3), padded);
    const auto real = log_channel_features(index, &f.jobs[0].embedding, 3);
    EXPECT_NEAR(real[0], 1.0, 1e-12);
    const auto excluded = log_channel_features(index, &f.jobs[0].embedding, 3, &f.jobs[0].job_ref);
    EXPECT_LT(excluded[0], 1.0);
}

TEST(Model, DuplicateOfFlakyTrainingJobScoresHighOnLogChannel) {
    const auto f = make_fixture(4);
    const auto m = DetectorModel::train(f.jobs, f.names, config(1.0), "lr", kEmbedder, 7);
    const auto dup = LogDocument::make("new/job", f.logs[0], m.embedder());  // job 0 is flaky
    ASSERT_EQ(f.jobs[0].label, 1);
    const auto p = m.predict(&dup, f.jobs[0].features);
    EXPECT_EQ(p.p_final, p.p_log);
    EXPECT_GT(p.p_final, 0.5);
    EXPECT_EQ(p.label, Verdict::flaky);
    const auto other = LogDocument::make("new/safe", "lorem ipsum dolor sit amet consectetur\n", m.embedder());
    EXPECT_GT(p.p_final, m.predict(&other, f.jobs[0].features).p_final);
    const auto safe = LogDocument::make("new/safe2", f.logs[1], m.embedder());
    ASSERT_EQ(f.jobs[1].label, 0);
    EXPECT_LT(m.predict(&safe, f.jobs[1].features).p_log, 0.5);
}

TEST(Model, AlphaZeroIsTheStructuredClassifier) {
    const auto f = make_fixture(5);
    const auto m = DetectorModel::train(f.jobs, f.names, config(0.0), "rf", kEmbedder, 9);
    ASSERT_EQ(m.selected().size(), 3u);
    EXPECT_EQ(m.selected()[0].name, "signal");
    for (std::size_t i = 0; i < 10; ++i) {
        const auto doc = LogDocument::make("q", f.logs[i], m.embedder());
        const auto p = m.predict(&doc, f.jobs[i].features);
        std::vector<double> row;
        for (const auto& r : m.selected()) row.push_back(f.jobs[i].features[r.column]);
        EXPECT_EQ(p.p_final, m.classifier().predict_proba(row));
        EXPECT_EQ(p.p_final, p.p_struct);
        EXPECT_GE(p.p_log, 0.0);  // still reported
    }
}

TEST(Model, MissingLogIsPaddedWithDiagnostic) {
    const auto f = make_fixture(6);
    const auto m = DetectorModel::train(f.jobs, f.names, config(0.5), "lr", kEmbedder, 1);
    const auto none = m.predict(nullptr, f.jobs[0].features);
    EXPECT_EQ(none.diagnostics.size(), 1u);
    const auto blank = LogDocument::make("blank", "", m.embedder());
    const auto empty = m.predict(&blank, f.jobs[0].features);
    EXPECT_EQ(empty.diagnostics.size(), 1u);
    EXPECT_EQ(none.p_log, empty.p_log);
    const auto doc = LogDocument::make("q", f.logs[0], m.embedder());
    EXPECT_TRUE(m.predict(&doc, f.jobs[0].features).diagnostics.empty());
}

TEST(Model, JsonRoundTripGivesIdenticalPredictions) {
    const auto f = make_fixture(7);
    for (const char* kind : {"lr", "rf", "mlp"}) {
        const auto m = DetectorModel::train(f.jobs, f.names, config(0.4), kind, kEmbedder, 3);
        const auto back = DetectorModel::from_json(nlohmann::json::parse(m.to_json().dump()));
        EXPECT_EQ(back.config(), m.config());
        EXPECT_EQ(back.seed(), 3u);
        for (std::size_t i = 0; i < f.jobs.size(); i += 7) {
            const auto doc = LogDocument::make("q", f.logs[i], m.embedder());
            const auto a = m.predict(&doc, f.jobs[i].features);
            const auto b = back.predict(&doc, f.jobs[i].features);
            ASSERT_EQ(a.p_log, b.p_log) << kind;
            ASSERT_EQ(a.p_struct, b.p_struct) << kind;
            ASSERT_EQ(a.p_final, b.p_final) << kind;
            ASSERT_EQ(a.to_json(), b.to_json());
        }
    }
}

TEST(Model, TrainingIsDeterministicPerSeed) {
    const auto f = make_fixture(8);
    const auto a = DetectorModel::train(f.jobs, f.names, config(0.5), "rf", kEmbedder, 11);
    const auto b = DetectorModel::train(f.jobs, f.names, config(0.5), "rf", kEmbedder, 11);
    EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(Model, RejectsInconsistentDocumentsAndInputs) {
    const auto f = make_fixture(9);
    const auto m = DetectorModel::train(f.jobs, f.names, config(0.5), "lr", kEmbedder, 1);
    auto doc = m.to_json();
    doc["schema_version"] = 2;
    EXPECT_THROW(DetectorModel::from_json(doc), StructuralInputError);
    doc = m.to_json();
    doc["selected"][0]["name"] = "renamed";
    EXPECT_THROW(DetectorModel::from_json(doc), StructuralInputError);
    doc = m.to_json();
    doc["config"]["K"] = 6;
    EXPECT_THROW(DetectorModel::from_json(doc), StructuralInputError);
    doc = m.to_json();
    doc.erase("classifier");
    EXPECT_THROW(DetectorModel::from_json(doc), StructuralInputError);
    const std::vector<double> short_row(2, 0.0);
    EXPECT_THROW(m.predict(nullptr, short_row), ContractError);
    auto bad = f.jobs;
    bad[3].features.pop_back();
    EXPECT_THROW(DetectorModel::train(bad, f.names, config(0.5), "lr", kEmbedder, 1), ContractError);
}

TEST(Prediction, DocumentCarriesAllFourFields) {
    const auto f = make_fixture(10);
    const auto m = DetectorModel::train(f.jobs, f.names, config(0.5), "lr", kEmbedder, 1);
    const auto j = m.predict(nullptr, f.jobs[0].features).to_json();
    for (const char* k : {"p_log", "p_struct", "p_final", "label", "diagnostics"}) EXPECT_TRUE(j.contains(k)) << k;
}
