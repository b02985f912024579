#include "flaky/error.hpp"
#include "flaky/learners.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <set>

using namespace flaky;

namespace {

Dataset make_dataset(std::vector<std::vector<double>> rows, std::vector<int> labels) {
    Dataset ds;
    ds.rows = std::move(rows);
    ds.labels = std::move(labels);
    for (std::size_t c = 0; c < (ds.rows.empty() ? 0 : ds.rows[0].size()); ++c) {
        ds.feature_names.push_back("f" + std::to_string(c));
    }
    return ds;
}

Dataset random_dataset(std::mt19937_64& rng, std::size_t n, std::size_t width) {
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> rows(n, std::vector<double>(width));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : rows[i]) v = z(rng);
        labels[i] = static_cast<int>(i % 2);
    }
    std::shuffle(labels.begin(), labels.end(), rng);
    return make_dataset(std::move(rows), std::move(labels));
}

// Well separated along the first coordinate.
Dataset separable(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        const int y = i % 2;
        rows.push_back({(y ? 3.0 : -3.0) + 0.5 * z(rng), z(rng), z(rng)});
        labels.push_back(y);
    }
    return make_dataset(rows, labels);
}

Dataset xor_points() {
    return make_dataset({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, {0, 1, 1, 0});
}

// Bin oracle: rank of the first occurrence, counted directly.
std::vector<int> oracle_bins(const std::vector<double>& column, int bins) {
    const auto n = column.size();
    std::vector<int> out;
    for (double v : column) {
        std::size_t below = 0;
        for (double u : column) below += u < v ? 1 : 0;
        out.push_back(static_cast<int>(below * static_cast<std::size_t>(bins) / n));
    }
    return out;
}

double oracle_mi(const std::vector<int>& x, const std::vector<int>& y) {
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> px;
    std::map<int, double> py;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        joint[{x[i], y[i]}] += 1;
        px[x[i]] += 1;
        py[y[i]] += 1;
    }
    double mi = 0;
    for (const auto& [key, c] : joint) {
        const double pxy = c / n;
        mi += pxy * std::log2(pxy / ((px[key.first] / n) * (py[key.second] / n)));
    }
    return mi;
}

double oracle_entropy(const std::vector<int>& x) {
    std::map<int, double> c;
    for (int v : x) c[v] += 1;
    double h = 0;
    for (const auto& [v, k] : c) {
        const double p = k / static_cast<double>(x.size());
        h -= p * std::log2(p);
    }
    return h;
}

double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / scale;
}

// Standalone CART with all features and no bootstrap. Sets ambiguous when
// two different features reach the same best impurity, since the forest
// breaks such ties by its shuffled feature order.
struct CartOracle {
    const Dataset& ds;
    int max_depth;
    std::size_t min_leaf;
    bool ambiguous = false;
    std::vector<double> prediction;

    explicit CartOracle(const Dataset& d, int depth, std::size_t leaf)
        : ds(d), max_depth(depth), min_leaf(leaf), prediction(d.size(), -1.0) {
        std::vector<std::size_t> all(d.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        grow(all, 0);
    }

    static double gini(double pos, double n) { return n == 0 ? 0 : 2 * (pos / n) * (1 - pos / n); }

    void grow(const std::vector<std::size_t>& idx, int depth) {
        double pos = 0;
        for (auto i : idx) pos += ds.labels[i];
        const double n = static_cast<double>(idx.size());
        const auto leaf = [&] {
            for (auto i : idx) prediction[i] = pos / n;
        };
        if (pos == 0 || pos == n || depth >= max_depth || idx.size() < 2 * min_leaf) return leaf();

        std::optional<double> best;
        std::size_t best_f = 0;
        double best_t = 0;
        std::size_t winners = 0;
        for (std::size_t f = 0; f < ds.width(); ++f) {
            // candidate thresholds between consecutive distinct values, lowest first
            std::set<double> values;
            for (auto i : idx) values.insert(ds.rows[i][f]);
            std::optional<double> feature_best;
            double feature_t = 0;
            for (auto it = values.begin(); std::next(it) != values.end(); ++it) {
                const double t = *it + (*std::next(it) - *it) / 2;
                double nl = 0;
                double pl = 0;
                for (auto i : idx) {
                    if (ds.rows[i][f] <= *it) {
                        nl += 1;
                        pl += ds.labels[i];
                    }
                }
                if (nl < static_cast<double>(min_leaf) || n - nl < static_cast<double>(min_leaf)) continue;
                const double imp = (nl * gini(pl, nl) + (n - nl) * gini(pos - pl, n - nl)) / n;
                if (!feature_best || imp < *feature_best) {
                    feature_best = imp;
                    feature_t = t;
                }
            }
            if (!feature_best) continue;
            if (!best || *feature_best < *best - 1e-12) {
                best = feature_best;
                best_f = f;
                best_t = feature_t;
                winners = 1;
            } else if (std::abs(*feature_best - *best) <= 1e-12) {
                ++winners;
            }
        }
        if (!best) return leaf();
        if (winners > 1) ambiguous = true;
        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto i : idx) (ds.rows[i][best_f] <= best_t ? left : right).push_back(i);
        grow(left, depth + 1);
        grow(right, depth + 1);
    }
};

std::vector<std::unique_ptr<Classifier>> all_classifiers() {
    std::vector<std::unique_ptr<Classifier>> out;
    out.push_back(make_classifier("lr"));
    out.push_back(std::make_unique<RandomForest>(ForestOptions{.trees = 20}));
    out.push_back(std::make_unique<Mlp>(MlpOptions{.hidden = 8, .epochs = 100}));
    return out;
}

}  // namespace

TEST(Dataset, ValidateRejectsMalformedShapes) {
    auto ds = make_dataset({{1, 2}, {3, 4}}, {0, 1});
    EXPECT_NO_THROW(ds.validate());
    auto ragged = ds;
    ragged.rows[1].pop_back();
    EXPECT_THROW(ragged.validate(), ContractError);
    auto bad_label = ds;
    bad_label.labels[0] = 2;
    EXPECT_THROW(bad_label.validate(), ContractError);
    auto names = ds;
    names.feature_names.pop_back();
    EXPECT_THROW(names.validate(), ContractError);
}

TEST(Bins, EqualFrequencyMatchesRankOracle) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> column(5 + rng() % 200);
        for (auto& v : column) v = static_cast<double>(rng() % (trial % 2 ? 7 : 100000));
        for (int bins : {2, 5, 10}) {
            ASSERT_EQ(equal_frequency_bins(column, bins), oracle_bins(column, bins));
        }
    }
}

TEST(Bins, ConstantColumnIsOneBinAndSortedColumnIsEven) {
    const std::vector<double> constant(17, 4.2);
    for (int b : equal_frequency_bins(constant, 10)) EXPECT_EQ(b, 0);
    std::vector<double> sorted(100);
    for (std::size_t i = 0; i < sorted.size(); ++i) sorted[i] = static_cast<double>(i);
    const auto bins = equal_frequency_bins(sorted, 10);
    std::map<int, int> counts;
    for (int b : bins) ++counts[b];
    EXPECT_EQ(counts.size(), 10u);
    for (const auto& [b, c] : counts) EXPECT_EQ(c, 10);
}

TEST(MutualInformation, MatchesContingencyOracleOnRandomData) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> column(200);
        std::vector<int> labels(200);
        for (std::size_t i = 0; i < column.size(); ++i) {
            labels[i] = static_cast<int>(rng() % 2);
            // mix of independent and dependent columns, some with heavy ties
            column[i] = (trial % 3 == 0 ? labels[i] : 0) + z(rng);
            if (trial % 5 == 0) column[i] = std::round(column[i]);
        }
        const double expected = oracle_mi(oracle_bins(column, 10), labels);
        ASSERT_NEAR(mutual_information(column, labels, 10), expected, 1e-9) << trial;
    }
}

TEST(MutualInformation, IdentityAndConstantExtremes) {
    std::vector<int> labels(100);
    std::vector<double> column(100);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<int>(i % 2);
        column[i] = labels[i];
    }
    EXPECT_NEAR(mutual_information(column, labels), 1.0, 1e-9);
    EXPECT_NEAR(entropy_bits(labels), 1.0, 1e-12);
    const std::vector<double> constant(100, 3.0);
    EXPECT_NEAR(mutual_information(constant, labels), 0.0, 1e-12);
}

TEST(MutualInformation, ContractErrors) {
    const std::vector<double> col{1, 2, 3};
    const std::vector<int> two{0, 1};
    EXPECT_THROW(mutual_information(col, two), ContractError);
    const std::vector<double> one{1};
    const std::vector<int> y1{1};
    EXPECT_THROW(mutual_information(one, y1), ContractError);
}

TEST(MutualInformation, SymmetricNonNegativeAndBoundedByEntropies) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 150;
        std::vector<int> a(n);
        std::vector<int> b(n);
        const unsigned ka = 1 + static_cast<unsigned>(rng() % 6);
        const unsigned kb = 1 + static_cast<unsigned>(rng() % 3);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<int>(rng() % ka);
            b[i] = trial % 4 == 0 ? a[i] % 2 : static_cast<int>(rng() % kb);
        }
        const double ab = mutual_information_discrete(a, b);
        ASSERT_NEAR(ab, mutual_information_discrete(b, a), 1e-12);
        ASSERT_GE(ab, 0.0);
        ASSERT_LE(ab, std::min(oracle_entropy(a), oracle_entropy(b)) + 1e-12);
        ASSERT_NEAR(entropy_bits(a), oracle_entropy(a), 1e-12);
    }
}

TEST(Ranking, LabelCopyRanksFirstAndZeroTiesAreLexicographic) {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        labels.push_back(i % 2);
        rows.push_back({1.0, static_cast<double>(i % 2), 1.0, static_cast<double>((i / 2) % 2)});
    }
    Dataset ds = make_dataset(rows, labels);
    ds.feature_names = {"zeta", "copy", "alpha", "mixed"};
    const auto ranking = rank_features(ds);
    ASSERT_EQ(ranking.size(), 4u);
    EXPECT_EQ(ranking[0].name, "copy");
    EXPECT_EQ(ranking[0].column, 1u);
    EXPECT_NEAR(ranking[0].mi_bits, 1.0, 1e-9);
    // "mixed" is independent of the label by construction, so three zeros tie
    EXPECT_EQ(ranking[1].name, "alpha");
    EXPECT_EQ(ranking[2].name, "mixed");
    EXPECT_EQ(ranking[3].name, "zeta");
    for (std::size_t i = 1; i < ranking.size(); ++i) EXPECT_GE(ranking[i - 1].mi_bits, ranking[i].mi_bits);
}

TEST(Ranking, SelectProjectsTopColumnsInRankOrder) {
    std::mt19937_64 rng(9);
    auto ds = random_dataset(rng, 120, 6);
    for (std::size_t i = 0; i < ds.size(); ++i) ds.rows[i][4] = ds.labels[i] + 0.01 * static_cast<double>(i % 3);
    const auto sel = select_top_features(ds, 3);
    ASSERT_EQ(sel.projected.width(), 3u);
    EXPECT_EQ(sel.ranking.size(), 6u);
    EXPECT_EQ(sel.ranking[0].column, 4u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(sel.projected.feature_names[k], sel.ranking[k].name);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            ASSERT_EQ(sel.projected.rows[i][k], ds.rows[i][sel.ranking[k].column]);
        }
    }
    EXPECT_EQ(sel.projected.labels, ds.labels);

    const auto full = select_top_features(ds, 6);
    std::multiset<std::string> names(full.projected.feature_names.begin(), full.projected.feature_names.end());
    EXPECT_EQ(names, std::multiset<std::string>(ds.feature_names.begin(), ds.feature_names.end()));

    EXPECT_THROW(select_top_features(ds, 0), ContractError);
    EXPECT_THROW(select_top_features(ds, 7), ContractError);
}

TEST(Oversample, BalancesToOneToOneKeepingOriginals) {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 12; ++i) {
        rows.push_back({static_cast<double>(i)});
        labels.push_back(i < 9 ? 0 : 1);
    }
    const auto ds = make_dataset(rows, labels);
    const auto out = oversample(ds, 7);
    ASSERT_EQ(out.size(), 18u);
    EXPECT_EQ(out.positives(), 9u);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(out.rows[i], ds.rows[i]);
        EXPECT_EQ(out.labels[i], ds.labels[i]);
    }
    for (std::size_t i = ds.size(); i < out.size(); ++i) {
        EXPECT_EQ(out.labels[i], 1);
        EXPECT_GE(out.rows[i][0], 9.0);
    }
    const auto again = oversample(ds, 7);
    EXPECT_EQ(again.rows, out.rows);
}

TEST(Oversample, BalancedIsUnchangedAndSingleClassThrows) {
    const auto ds = make_dataset({{1}, {2}, {3}, {4}}, {0, 1, 1, 0});
    const auto out = oversample(ds, 1);
    EXPECT_EQ(out.rows, ds.rows);
    EXPECT_EQ(out.labels, ds.labels);
    EXPECT_THROW(oversample(make_dataset({{1}, {2}}, {1, 1}), 1), BalanceImpossible);
}

TEST(Logistic, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> z;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t width = 1 + rng() % 6;
        auto ds = random_dataset(rng, 10 + rng() % 30, width);
        std::vector<double> w(width);
        for (auto& v : w) v = z(rng);
        const double b = z(rng);
        const double lambda = trial % 2 ? 1e-2 : 0.0;
        const auto g = logistic::gradient(w, b, ds.rows, ds.labels, lambda);
        ASSERT_EQ(g.size(), width + 1);
        const double h = 1e-6;
        for (std::size_t k = 0; k <= width; ++k) {
            auto wp = w;
            auto wm = w;
            double bp = b;
            double bm = b;
            (k < width ? wp[k] : bp) += h;
            (k < width ? wm[k] : bm) -= h;
            const double fd = (logistic::loss(wp, bp, ds.rows, ds.labels, lambda) -
                               logistic::loss(wm, bm, ds.rows, ds.labels, lambda)) /
                              (2 * h);
            ASSERT_LT(relative_error(g[k], fd), 1e-5) << "trial " << trial << " k " << k;
        }
    }
}

TEST(Logistic, LossDecreasesAndSeparableDataIsFit) {
    const auto ds = separable(2);
    const auto fit = logistic::train(ds.rows, ds.labels, ds.width());
    ASSERT_GE(fit.loss_history.size(), 2u);
    EXPECT_LT(fit.loss_history.back(), fit.loss_history.front());
    LogisticRegression lr;
    lr.fit(ds, 1);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(lr.predict_proba(ds.rows[i]) > 0.5, ds.labels[i] == 1) << i;
    }
}

TEST(Forest, SolvesXorAtDepthTwo) {
    ForestOptions o;
    o.trees = 1;
    o.max_depth = 2;
    o.min_leaf = 1;
    o.bootstrap = false;
    o.max_features = 2;
    RandomForest rf(o);
    const auto ds = xor_points();
    rf.fit(ds, 3);
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(rf.predict_proba(ds.rows[i]), ds.labels[i]);
    o.max_depth = 1;
    RandomForest shallow(o);
    shallow.fit(ds, 3);
    int correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += (shallow.predict_proba(ds.rows[i]) > 0.5) == ds.labels[i];
    EXPECT_LT(correct, 4);
}

TEST(Forest, PureRegionGivesCertainty) {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) {
        rows.push_back({static_cast<double>(i)});
        labels.push_back(i >= 10);
    }
    RandomForest rf;
    rf.fit(make_dataset(rows, labels), 8);
    EXPECT_EQ(rf.predict_proba(std::vector<double>{19.0}), 1.0);
    EXPECT_EQ(rf.predict_proba(std::vector<double>{0.0}), 0.0);
}

TEST(Forest, IdenticalRowsGivePrior) {
    RandomForest rf;
    rf.fit(make_dataset({{1, 1}, {1, 1}, {1, 1}, {1, 1}}, {1, 0, 0, 0}), 1);
    EXPECT_DOUBLE_EQ(rf.predict_proba(std::vector<double>{1, 1}), 0.25);
    EXPECT_DOUBLE_EQ(rf.predict_proba(std::vector<double>{9, -9}), 0.25);
}

TEST(Forest, SingleFullTreeMatchesCartOracle) {
    std::mt19937_64 rng(17);
    int checked = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const auto ds = random_dataset(rng, 30 + rng() % 40, 2 + rng() % 3);
        ForestOptions o;
        o.trees = 1;
        o.max_depth = 4;
        o.bootstrap = false;
        o.max_features = static_cast<int>(ds.width());
        RandomForest rf(o);
        rf.fit(ds, static_cast<std::uint64_t>(trial));
        CartOracle cart(ds, o.max_depth, static_cast<std::size_t>(o.min_leaf));
        if (cart.ambiguous) continue;
        ++checked;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            ASSERT_NEAR(rf.predict_proba(ds.rows[i]), cart.prediction[i], 1e-12) << trial << " row " << i;
        }
    }
    EXPECT_GE(checked, 20);
}

TEST(Mlp, GradientMatchesCentralDifferences) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t width = 1 + rng() % 4;
        const std::size_t hidden = 1 + rng() % 5;
        const auto ds = random_dataset(rng, 8 + rng() % 20, width);
        const auto p = Mlp::init(width, hidden, static_cast<std::uint64_t>(trial));
        ASSERT_EQ(p.values.size(), hidden * width + hidden + hidden + 1);
        const double lambda = trial % 2 ? 1e-2 : 0.0;
        const auto g = Mlp::gradient(p, ds.rows, ds.labels, lambda);
        ASSERT_EQ(g.size(), p.values.size());
        const double h = 1e-6;
        for (std::size_t k = 0; k < p.values.size(); ++k) {
            auto plus = p;
            auto minus = p;
            plus.values[k] += h;
            minus.values[k] -= h;
            const double fd =
                (Mlp::loss(plus, ds.rows, ds.labels, lambda) - Mlp::loss(minus, ds.rows, ds.labels, lambda)) / (2 * h);
            ASSERT_LT(relative_error(g[k], fd), 1e-4) << "trial " << trial << " k " << k;
        }
    }
}

TEST(Mlp, FitsSeparableDataLikeLogisticRegression) {
    const auto ds = separable(4);
    LogisticRegression lr;
    lr.fit(ds, 1);
    Mlp mlp;
    mlp.fit(ds, 1);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        ASSERT_EQ(lr.predict_proba(ds.rows[i]) > 0.5, ds.labels[i] == 1);
        EXPECT_EQ(mlp.predict_proba(ds.rows[i]) > 0.5, ds.labels[i] == 1) << i;
    }
}

TEST(Mlp, ZeroEpochsDependsOnlyOnSeed) {
    const auto ds = separable(5);
    const auto predictions = [&](std::uint64_t seed) {
        Mlp m(MlpOptions{.hidden = 6, .epochs = 0});
        m.fit(ds, seed);
        std::vector<double> out;
        for (const auto& r : ds.rows) out.push_back(m.predict_proba(r));
        return out;
    };
    EXPECT_EQ(predictions(1), predictions(1));
    EXPECT_NE(predictions(1), predictions(2));
}

TEST(Classifiers, DeterministicBoundedAndRoundTripThroughJson) {
    std::mt19937_64 rng(29);
    auto ds = random_dataset(rng, 80, 4);
    for (std::size_t i = 0; i < ds.size(); ++i) ds.rows[i][0] += 1.5 * ds.labels[i];
    std::vector<std::vector<double>> probes = ds.rows;
    probes.push_back({100, -100, 0, 5});
    for (const auto& c : all_classifiers()) {
        c->fit(ds, 42);
        auto twin = classifier_from_json(c->to_json());
        auto again = classifier_from_json(nlohmann::json::parse(c->to_json().dump()));
        auto refit = classifier_from_json(c->to_json());
        refit->fit(ds, 42);
        EXPECT_EQ(twin->kind(), c->kind());
        EXPECT_EQ(twin->input_width(), 4u);
        for (const auto& x : probes) {
            const double p = c->predict_proba(x);
            ASSERT_GE(p, 0.0);
            ASSERT_LE(p, 1.0);
            ASSERT_EQ(twin->predict_proba(x), p) << c->kind();
            ASSERT_EQ(again->predict_proba(x), p) << c->kind();
            ASSERT_EQ(refit->predict_proba(x), p) << c->kind();
        }
    }
}

TEST(Classifiers, RejectUntrainableDataAndUnknownKinds) {
    for (const auto& c : all_classifiers()) {
        EXPECT_THROW(c->fit(make_dataset({{1}}, {1}), 1), ContractError);
        EXPECT_THROW(c->fit(make_dataset({{1}, {2}}, {0, 0}), 1), ContractError);
    }
    EXPECT_THROW(make_classifier("svm"), ContractError);
    EXPECT_THROW(classifier_from_json(nlohmann::json{{"kind", "svm"}}), Error);
}
