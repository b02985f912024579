#include "flaky/cost.hpp"

#include "flaky/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace flaky {

Millis waiting_time(const RerunSequence& seq, Diagnostics* diags) {
    const auto span = seq.last().updated_at - seq.first().started_at;
    if (span < Millis::zero()) {
        if (diags) {
            diags->push_back({seq.repo() + "#" + std::to_string(seq.build_id()),
                              "final attempt ends before the initial start; waiting time clamped to 0"});
        }
        return Millis::zero();
    }
    return span;
}

Millis computational_time(const RerunSequence& seq, Diagnostics* diags) {
    Millis total{0};
    for (const auto& attempt : seq.attempts()) {
        for (const auto& job : attempt.jobs) {
            const auto d = job.duration();
            if (d < Millis::zero()) {
                if (diags) {
                    diags->push_back({seq.repo() + "#" + std::to_string(seq.build_id()) + "/" + std::to_string(job.job_id),
                                      "job completes before it starts; contributes 0"});
                }
                continue;
            }
            total += d;
        }
    }
    return total;
}

CostReport cost_report(const RerunSequence& seq) {
    CostReport r;
    r.waiting_time = waiting_time(seq, &r.diagnostics);
    r.computational_time = computational_time(seq, &r.diagnostics);
    for (const auto& attempt : seq.attempts()) {
        Millis sum{0};
        for (const auto& job : attempt.jobs) sum += std::max(job.duration(), Millis::zero());
        r.per_attempt_breakdown.emplace_back(attempt.run_attempt, sum);
    }
    return r;
}

GroupStats describe(std::span<const double> values) {
    GroupStats s;
    s.count = values.size();
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    s.median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return s;
}

namespace {

struct Ranked {
    std::vector<std::int64_t> doubled_ranks;  // 2 * midrank, so always integral
    double tie_term = 0.0;                    // sum over tie groups of t^3 - t
};

Ranked doubled_midranks(std::span<const double> pooled) {
    const auto n = pooled.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });
    Ranked r;
    r.doubled_ranks.assign(n, 0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        // positions i..j (0-based) share midrank ((i+1)+(j+1))/2
        const auto doubled = static_cast<std::int64_t>(i + j + 2);
        for (std::size_t k = i; k <= j; ++k) r.doubled_ranks[order[k]] = doubled;
        const double t = static_cast<double>(j - i + 1);
        r.tie_term += t * t * t - t;
        i = j + 1;
    }
    return r;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    const auto n = a.size();
    const auto m = b.size();
    if (n == 0 || m == 0) throw StatisticsUndefined("Mann-Whitney U needs two nonempty samples");
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto ranked = doubled_midranks(pooled);
    const auto total = n + m;

    std::int64_t w2 = 0;  // doubled rank sum of sample a
    for (std::size_t i = 0; i < n; ++i) w2 += ranked.doubled_ranks[i];
    MannWhitneyResult res;
    res.u = static_cast<double>(w2) / 2.0 - static_cast<double>(n * (n + 1)) / 2.0;

    // E[2W] = n (N + 1)
    const auto center = static_cast<std::int64_t>(n * (total + 1));
    const auto observed_dev = std::llabs(w2 - center);

    if (total <= kExactLimit) {
        // ways[k][s]: number of k-subsets of the items seen so far with doubled rank sum s.
        std::int64_t max_sum = 0;
        for (auto r : ranked.doubled_ranks) max_sum += r;
        std::vector<std::vector<double>> ways(n + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
        ways[0][0] = 1.0;
        std::int64_t reach = 0;
        for (std::size_t item = 0; item < total; ++item) {
            const auto r = ranked.doubled_ranks[item];
            reach += r;
            for (std::size_t k = std::min(n, item + 1); k >= 1; --k) {
                auto& dst = ways[k];
                const auto& src = ways[k - 1];
                for (std::int64_t s = reach; s >= r; --s) {
                    dst[static_cast<std::size_t>(s)] += src[static_cast<std::size_t>(s - r)];
                }
            }
        }
        double extreme = 0.0;
        double all = 0.0;
        for (std::int64_t s = 0; s <= max_sum; ++s) {
            const double c = ways[n][static_cast<std::size_t>(s)];
            if (c == 0.0) continue;
            all += c;
            if (std::llabs(s - center) >= observed_dev) extreme += c;
        }
        res.p_value = std::min(1.0, extreme / all);
        res.exact = true;
        return res;
    }

    const double nd = static_cast<double>(n);
    const double md = static_cast<double>(m);
    const double td = static_cast<double>(total);
    const double mean_u = nd * md / 2.0;
    const double var_u = nd * md / 12.0 * ((td + 1.0) - ranked.tie_term / (td * (td - 1.0)));
    if (var_u <= 0.0) {
        res.p_value = 1.0;
        return res;
    }
    const double dev = std::max(0.0, std::abs(res.u - mean_u) - 0.5);
    res.p_value = std::min(1.0, 2.0 * normal_sf(dev / std::sqrt(var_u)));
    return res;
}

CostComparison compare_costs(std::span<const double> rerun, std::span<const double> non_rerun) {
    if (rerun.size() < 2 || non_rerun.size() < 2) {
        throw StatisticsUndefined("cost comparison needs at least two values per group");
    }
    CostComparison c;
    c.group_a = describe(rerun);
    c.group_b = describe(non_rerun);
    const auto mw = mann_whitney_u(rerun, non_rerun);
    c.u_statistic = mw.u;
    c.p_value = mw.p_value;
    c.test_name = mw.exact ? "mann-whitney-u (two-sided, exact)" : "mann-whitney-u (two-sided, normal approx.)";
    return c;
}

}  // namespace flaky
