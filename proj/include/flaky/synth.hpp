#pragma once

// Synthetic corpora with a planted, tunable flakiness signal. Flaky and
// non-flaky failures differ in four structured quantities (job duration,
// source churn, failed test count, modified method bodies), each drawn as
// N(+-1.5 s, 1) in standard units, and in which pool of failure templates
// their logs lean towards. Strength 0 makes both classes identically
// distributed.

#include "flaky/ingestion.hpp"
#include "flaky/labeler.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace flaky {

struct SynthSpec {
    std::size_t n = 200;  // labeled failed jobs
    double flaky_ratio = 0.3;
    double signal = 1.0;
    std::size_t projects = 1;
    double success_builds = 0.5;  // expected passing builds per failed one

    // "none" 0, "weak" 0.5, "medium" 1, "strong" 2, or a number >= 0.
    static double parse_signal(const std::string& text);
    // Throws ContractError unless 0 < ratio < 1, n >= projects >= 1 and the
    // signal is finite and nonnegative.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct SynthBuild {
    RerunSequence seq;
    std::map<std::int64_t, std::string> logs;  // job_id -> text
    nlohmann::json change;
};

struct PlantedJob {
    std::string job_ref;
    int label = 0;
    // Standard-unit draws behind the structured signals; their sum is the
    // cheat classifier's score.
    double duration = 0;
    double churn = 0;
    double tests_failed = 0;
    double body_modified = 0;
    bool log_from_flaky_pool = false;

    [[nodiscard]] double cheat_score() const { return duration + churn + tests_failed + body_modified; }
};

struct SynthCorpus {
    SynthSpec spec;
    std::uint64_t seed = 0;
    std::vector<SynthBuild> builds;
    std::vector<FlakyLabel> labels;
    std::vector<PlantedJob> truth;
    nlohmann::json oracle_script;  // FixtureOracle document reproducing labels
};

// Exactly round(n * ratio) flaky labels. Deterministic per (spec, seed).
SynthCorpus generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed);

// Corpus layout plus labels.json, oracle.json, truth.json and synth.json at
// the root.
void write_synthetic_corpus(const std::filesystem::path& root, const SynthCorpus& corpus);

}  // namespace flaky
