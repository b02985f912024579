#pragma once

// Waiting-time / computational-time costs of rerun sequences and the
// rerun vs. non-rerun comparison.

#include "flaky/diagnostics.hpp"
#include "flaky/model.hpp"

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flaky {

// End of the final attempt (its updated_at) minus the start of the first
// attempt (run_started_at). Negative spans (clock skew) clamp to zero and add
// a diagnostic when diags is given.
Millis waiting_time(const RerunSequence& seq, Diagnostics* diags = nullptr);

// Sum over every job of every attempt of completed_at - started_at. A job
// with a negative span contributes zero.
Millis computational_time(const RerunSequence& seq, Diagnostics* diags = nullptr);

struct CostReport {
    Millis waiting_time{0};
    Millis computational_time{0};
    std::vector<std::pair<int, Millis>> per_attempt_breakdown;  // (attempt, summed job time)
    Diagnostics diagnostics;
};

CostReport cost_report(const RerunSequence& seq);

struct GroupStats {
    std::size_t count = 0;
    double mean = 0.0;
    double median = 0.0;
};

GroupStats describe(std::span<const double> values);

struct MannWhitneyResult {
    double u = 0.0;  // U statistic of the first sample
    double p_value = 1.0;
    bool exact = false;
};

// Two-sided Mann-Whitney U. For n + m <= kExactLimit the p-value comes from
// the exact permutation distribution of the (mid)rank sum, so ties are
// handled exactly; larger samples use the normal approximation with tie and
// continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);
inline constexpr std::size_t kExactLimit = 50;

struct CostComparison {
    GroupStats group_a;
    GroupStats group_b;
    double u_statistic = 0.0;
    double p_value = 1.0;
    std::string test_name;
};

// Throws StatisticsUndefined when either group has fewer than two values.
CostComparison compare_costs(std::span<const double> rerun, std::span<const double> non_rerun);

}  // namespace flaky
