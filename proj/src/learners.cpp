#include "flaky/learners.hpp"

#include "flaky/error.hpp"
#include "flaky/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace flaky {

using nlohmann::json;

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void require_trainable(const Dataset& ds) {
    ds.validate();
    if (ds.size() < 2) throw ContractError("training needs at least two rows");
    const auto pos = ds.positives();
    if (pos == 0 || pos == ds.size()) throw ContractError("training needs both classes");
}

void check_width(std::span<const double> x, std::size_t width) {
    if (x.size() != width) {
        throw ContractError("feature vector has " + std::to_string(x.size()) + " values, model expects " +
                            std::to_string(width));
    }
}

void check_kind(const json& doc, std::string_view kind) {
    if (doc.value("schema_version", 0) != 1 || doc.value("kind", "") != kind) {
        throw ContractError("not a version-1 " + std::string(kind) + " model document");
    }
}

}  // namespace

// --- dataset -----------------------------------------------------------------

std::size_t Dataset::positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

void Dataset::validate() const {
    if (labels.size() != rows.size()) throw ContractError("label count differs from row count");
    if (!timestamps.empty() && timestamps.size() != rows.size()) {
        throw ContractError("timestamp count differs from row count");
    }
    for (const auto& r : rows) {
        if (r.size() != feature_names.size()) throw ContractError("row width differs from feature_names");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError("labels must be 0 or 1");
    }
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.feature_names = feature_names;
    for (auto i : idx) {
        out.rows.push_back(rows.at(i));
        out.labels.push_back(labels.at(i));
        if (!timestamps.empty()) out.timestamps.push_back(timestamps.at(i));
    }
    return out;
}

Dataset Dataset::project(std::span<const std::size_t> idx) const {
    Dataset out;
    out.labels = labels;
    out.timestamps = timestamps;
    for (auto c : idx) out.feature_names.push_back(feature_names.at(c));
    out.rows.reserve(rows.size());
    for (const auto& r : rows) {
        std::vector<double> p;
        p.reserve(idx.size());
        for (auto c : idx) p.push_back(r.at(c));
        out.rows.push_back(std::move(p));
    }
    return out;
}

// --- mutual information ------------------------------------------------------

std::vector<int> equal_frequency_bins(std::span<const double> column, int bins) {
    if (bins < 1) throw ContractError("bins must be positive");
    const auto n = column.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return column[a] < column[b]; });
    std::vector<int> out(n, 0);
    std::size_t first = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (r > 0 && column[order[r]] != column[order[r - 1]]) first = r;
        out[order[r]] = static_cast<int>(first * static_cast<std::size_t>(bins) / n);
    }
    return out;
}

double entropy_bits(std::span<const int> values) {
    std::map<int, std::size_t> counts;
    for (int v : values) ++counts[v];
    const double n = static_cast<double>(values.size());
    double h = 0.0;
    for (const auto& [v, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

double mutual_information_discrete(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) throw ContractError("mutual information inputs differ in length");
    if (a.empty()) return 0.0;
    std::map<std::pair<int, int>, std::size_t> joint;
    std::map<int, std::size_t> pa;
    std::map<int, std::size_t> pb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[{a[i], b[i]}];
        ++pa[a[i]];
        ++pb[b[i]];
    }
    const double n = static_cast<double>(a.size());
    double mi = 0.0;
    for (const auto& [k, c] : joint) {
        const double pxy = static_cast<double>(c) / n;
        const double px = static_cast<double>(pa[k.first]) / n;
        const double py = static_cast<double>(pb[k.second]) / n;
        mi += pxy * std::log2(pxy / (px * py));
    }
    return std::max(0.0, mi);
}

double mutual_information(std::span<const double> column, std::span<const int> labels, int bins) {
    if (column.size() != labels.size()) throw ContractError("column and labels differ in length");
    if (column.size() < 2) throw ContractError("mutual information needs at least two rows");
    const auto binned = equal_frequency_bins(column, bins);
    return mutual_information_discrete(binned, labels);
}

FeatureRanking rank_features(const Dataset& ds, int bins) {
    ds.validate();
    FeatureRanking ranking;
    std::vector<double> col(ds.size());
    for (std::size_t c = 0; c < ds.width(); ++c) {
        for (std::size_t r = 0; r < ds.size(); ++r) col[r] = ds.rows[r][c];
        ranking.push_back({ds.feature_names[c], mutual_information(col, ds.labels, bins), c});
    }
    // Summation order can leave equal MI values a few ulps apart.
    std::stable_sort(ranking.begin(), ranking.end(), [](const RankedFeature& a, const RankedFeature& b) {
        if (std::abs(a.mi_bits - b.mi_bits) > 1e-12) return a.mi_bits > b.mi_bits;
        return a.name < b.name;
    });
    return ranking;
}

Selection select_top_features(const Dataset& ds, std::size_t n, int bins) {
    if (n < 1 || n > ds.width()) {
        throw ContractError("cannot select " + std::to_string(n) + " of " + std::to_string(ds.width()) +
                            " features");
    }
    Selection sel;
    sel.ranking = rank_features(ds, bins);
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < n; ++i) cols.push_back(sel.ranking[i].column);
    sel.projected = ds.project(cols);
    return sel;
}

Dataset oversample(const Dataset& ds, std::uint64_t seed) {
    ds.validate();
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < ds.size(); ++i) (ds.labels[i] == 1 ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) throw BalanceImpossible("oversampling needs both classes");
    Dataset out = ds;
    const auto& minority = pos.size() < neg.size() ? pos : neg;
    const auto deficit = std::max(pos.size(), neg.size()) - minority.size();
    Rng rng(seed);
    for (std::size_t k = 0; k < deficit; ++k) {
        const auto i = minority[rng.below(minority.size())];
        out.rows.push_back(ds.rows[i]);
        out.labels.push_back(ds.labels[i]);
        if (!ds.timestamps.empty()) out.timestamps.push_back(ds.timestamps[i]);
    }
    return out;
}

// --- logistic core -----------------------------------------------------------

namespace logistic {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {
double dot(std::span<const double> w, std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
    return s;
}
}  // namespace

double loss(std::span<const double> w, double b, const std::vector<std::vector<double>>& x, std::span<const int> y,
            double lambda) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = dot(w, x[i]) + b;
        total += softplus(z) - y[i] * z;
    }
    double reg = 0.0;
    for (double v : w) reg += v * v;
    return (x.empty() ? 0.0 : total / static_cast<double>(x.size())) + 0.5 * lambda * reg;
}

std::vector<double> gradient(std::span<const double> w, double b, const std::vector<std::vector<double>>& x,
                             std::span<const int> y, double lambda) {
    std::vector<double> g(w.size() + 1, 0.0);
    const double inv_n = x.empty() ? 0.0 : 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = (sigmoid(dot(w, x[i]) + b) - y[i]) * inv_n;
        for (std::size_t j = 0; j < w.size(); ++j) g[j] += r * x[i][j];
        g.back() += r;
    }
    for (std::size_t j = 0; j < w.size(); ++j) g[j] += lambda * w[j];
    return g;
}

Fit train(const std::vector<std::vector<double>>& x, std::span<const int> y, std::size_t width,
          const Options& options) {
    if (x.size() != y.size()) throw ContractError("training rows and labels differ in length");
    Fit fit;
    fit.weights.assign(width, 0.0);
    for (; fit.epochs < options.max_epochs; ++fit.epochs) {
        const auto g = gradient(fit.weights, fit.bias, x, y, options.lambda);
        double norm = 0.0;
        for (double v : g) norm += v * v;
        if (std::sqrt(norm) < options.gradient_tolerance) break;
        fit.loss_history.push_back(loss(fit.weights, fit.bias, x, y, options.lambda));
        for (std::size_t j = 0; j < width; ++j) fit.weights[j] -= options.learning_rate * g[j];
        fit.bias -= options.learning_rate * g.back();
    }
    return fit;
}

}  // namespace logistic

// --- standardizer ------------------------------------------------------------

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& rows, std::size_t width) {
    Standardizer s;
    s.mean.assign(width, 0.0);
    s.scale.assign(width, 1.0);
    if (rows.empty()) return s;
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < width; ++j) s.mean[j] += r[j] / n;
    }
    for (std::size_t j = 0; j < width; ++j) {
        double var = 0.0;
        for (const auto& r : rows) var += (r[j] - s.mean[j]) * (r[j] - s.mean[j]) / n;
        s.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
    check_width(x, mean.size());
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
    return out;
}

json Standardizer::to_json() const { return {{"mean", mean}, {"scale", scale}}; }

Standardizer Standardizer::from_json(const json& doc) {
    Standardizer s;
    s.mean = doc.at("mean").get<std::vector<double>>();
    s.scale = doc.at("scale").get<std::vector<double>>();
    if (s.mean.size() != s.scale.size()) throw ContractError("standardizer mean/scale length mismatch");
    return s;
}

// --- logistic regression -----------------------------------------------------

void LogisticRegression::fit(const Dataset& ds, std::uint64_t) {
    require_trainable(ds);
    scaler_ = Standardizer::fit(ds.rows, ds.width());
    std::vector<std::vector<double>> z;
    z.reserve(ds.size());
    for (const auto& r : ds.rows) z.push_back(scaler_.apply(r));
    auto f = logistic::train(z, ds.labels, ds.width(), options_);
    weights_ = std::move(f.weights);
    bias_ = f.bias;
}

double LogisticRegression::predict_proba(std::span<const double> x) const {
    const auto z = scaler_.apply(x);
    double s = bias_;
    for (std::size_t j = 0; j < z.size(); ++j) s += weights_[j] * z[j];
    return logistic::sigmoid(s);
}

json LogisticRegression::to_json() const {
    return {{"schema_version", 1},
            {"kind", "lr"},
            {"options",
             {{"learning_rate", options_.learning_rate},
              {"lambda", options_.lambda},
              {"max_epochs", options_.max_epochs},
              {"gradient_tolerance", options_.gradient_tolerance}}},
            {"scaler", scaler_.to_json()},
            {"weights", weights_},
            {"bias", bias_}};
}

LogisticRegression LogisticRegression::from_json(const json& doc) {
    check_kind(doc, "lr");
    const auto& o = doc.at("options");
    LogisticRegression m({o.at("learning_rate"), o.at("lambda"), o.at("max_epochs"), o.at("gradient_tolerance")});
    m.scaler_ = Standardizer::from_json(doc.at("scaler"));
    m.weights_ = doc.at("weights").get<std::vector<double>>();
    m.bias_ = doc.at("bias").get<double>();
    if (m.weights_.size() != m.scaler_.mean.size()) throw ContractError("lr weight length mismatch");
    return m;
}

// --- random forest -----------------------------------------------------------

namespace {

struct TreeBuilder {
    const Dataset& ds;
    const ForestOptions& opt;
    std::size_t max_features;
    Rng& rng;
    RandomForest::Tree nodes;

    static double gini(double pos, double n) {
        if (n <= 0) return 0.0;
        const double p = pos / n;
        return 2.0 * p * (1.0 - p);
    }

    int build(std::vector<std::size_t> idx, int depth) {
        const double n = static_cast<double>(idx.size());
        double pos = 0.0;
        for (auto i : idx) pos += ds.labels[i];
        const int id = static_cast<int>(nodes.size());
        nodes.push_back({-1, 0.0, -1, -1, pos / n});

        const bool pure = pos == 0.0 || pos == n;
        if (pure || depth >= opt.max_depth || idx.size() < 2 * static_cast<std::size_t>(opt.min_leaf)) return id;

        std::vector<std::size_t> features(ds.width());
        std::iota(features.begin(), features.end(), 0);
        rng.shuffle(features);

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = 0.0;
        std::vector<std::size_t> order = idx;
        for (std::size_t k = 0; k < features.size(); ++k) {
            // Past max_features keep looking only until some valid split exists.
            if (k >= max_features && best_feature >= 0) break;
            const auto f = features[k];
            std::sort(order.begin(), order.end(), [&](auto a, auto b) {
                const double va = ds.rows[a][f];
                const double vb = ds.rows[b][f];
                return va < vb || (va == vb && a < b);
            });
            double left_pos = 0.0;
            for (std::size_t s = 1; s < order.size(); ++s) {
                left_pos += ds.labels[order[s - 1]];
                const double lo = ds.rows[order[s - 1]][f];
                const double hi = ds.rows[order[s]][f];
                if (lo == hi) continue;
                if (s < static_cast<std::size_t>(opt.min_leaf) ||
                    order.size() - s < static_cast<std::size_t>(opt.min_leaf)) {
                    continue;
                }
                const double nl = static_cast<double>(s);
                const double nr = n - nl;
                const double impurity = (nl * gini(left_pos, nl) + nr * gini(pos - left_pos, nr)) / n;
                if (best_feature < 0 || impurity < best_impurity) {
                    best_feature = static_cast<int>(f);
                    best_impurity = impurity;
                    best_threshold = lo + (hi - lo) / 2.0;
                    if (!(best_threshold < hi)) best_threshold = lo;
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left;
        std::vector<std::size_t> right;
        for (auto i : idx) {
            (ds.rows[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
        }
        idx.clear();
        idx.shrink_to_fit();
        const int l = build(std::move(left), depth + 1);
        const int r = build(std::move(right), depth + 1);
        nodes[static_cast<std::size_t>(id)].feature = best_feature;
        nodes[static_cast<std::size_t>(id)].threshold = best_threshold;
        nodes[static_cast<std::size_t>(id)].left = l;
        nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }
};

json tree_to_json(const RandomForest::Tree& t, int id) {
    const auto& n = t[static_cast<std::size_t>(id)];
    if (n.feature < 0) return {{"value", n.value}};
    return {{"feature", n.feature},
            {"threshold", n.threshold},
            {"value", n.value},
            {"left", tree_to_json(t, n.left)},
            {"right", tree_to_json(t, n.right)}};
}

int tree_from_json(const json& j, RandomForest::Tree& t, std::size_t width) {
    const int id = static_cast<int>(t.size());
    t.push_back({-1, 0.0, -1, -1, j.at("value").get<double>()});
    if (j.contains("feature")) {
        const int f = j.at("feature").get<int>();
        if (f < 0 || static_cast<std::size_t>(f) >= width) throw ContractError("tree feature index out of range");
        const double th = j.at("threshold").get<double>();
        const int l = tree_from_json(j.at("left"), t, width);
        const int r = tree_from_json(j.at("right"), t, width);
        t[static_cast<std::size_t>(id)] = {f, th, l, r, t[static_cast<std::size_t>(id)].value};
    }
    return id;
}

}  // namespace

void RandomForest::fit(const Dataset& ds, std::uint64_t seed) {
    require_trainable(ds);
    if (options_.trees < 1 || options_.max_depth < 0 || options_.min_leaf < 1) {
        throw ContractError("invalid forest options");
    }
    width_ = ds.width();
    trees_.clear();
    const std::size_t mf = options_.max_features > 0
                               ? std::min<std::size_t>(static_cast<std::size_t>(options_.max_features), width_)
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(double(width_))));

    bool varies = false;
    for (std::size_t c = 0; c < width_ && !varies; ++c) {
        for (std::size_t r = 1; r < ds.size() && !varies; ++r) varies = ds.rows[r][c] != ds.rows[0][c];
    }
    if (!varies) {
        const double prior = static_cast<double>(ds.positives()) / static_cast<double>(ds.size());
        trees_.assign(static_cast<std::size_t>(options_.trees), Tree{{-1, 0.0, -1, -1, prior}});
        return;
    }

    for (int t = 0; t < options_.trees; ++t) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> idx(ds.size());
        if (options_.bootstrap) {
            for (auto& i : idx) i = rng.below(ds.size());
        } else {
            std::iota(idx.begin(), idx.end(), 0);
        }
        TreeBuilder b{ds, options_, mf, rng, {}};
        b.build(std::move(idx), 0);
        trees_.push_back(std::move(b.nodes));
    }
}

double RandomForest::predict_proba(std::span<const double> x) const {
    check_width(x, width_);
    if (trees_.empty()) throw ContractError("forest is not fitted");
    double sum = 0.0;
    for (const auto& t : trees_) {
        std::size_t id = 0;
        while (t[id].feature >= 0) {
            id = static_cast<std::size_t>(x[static_cast<std::size_t>(t[id].feature)] <= t[id].threshold ? t[id].left
                                                                                                        : t[id].right);
        }
        sum += t[id].value;
    }
    return sum / static_cast<double>(trees_.size());
}

json RandomForest::to_json() const {
    json trees = json::array();
    for (const auto& t : trees_) trees.push_back(tree_to_json(t, 0));
    return {{"schema_version", 1},
            {"kind", "rf"},
            {"options",
             {{"trees", options_.trees},
              {"max_depth", options_.max_depth},
              {"max_features", options_.max_features},
              {"min_leaf", options_.min_leaf},
              {"bootstrap", options_.bootstrap}}},
            {"width", width_},
            {"trees", std::move(trees)}};
}

RandomForest RandomForest::from_json(const json& doc) {
    check_kind(doc, "rf");
    const auto& o = doc.at("options");
    RandomForest f({o.at("trees"), o.at("max_depth"), o.at("max_features"), o.at("min_leaf"), o.at("bootstrap")});
    f.width_ = doc.at("width").get<std::size_t>();
    for (const auto& t : doc.at("trees")) {
        Tree tree;
        tree_from_json(t, tree, f.width_);
        f.trees_.push_back(std::move(tree));
    }
    return f;
}

// --- mlp ---------------------------------------------------------------------

Mlp::Params Mlp::init(std::size_t width, std::size_t hidden, std::uint64_t seed) {
    Params p{width, hidden, {}};
    p.values.assign(hidden * width + hidden + hidden + 1, 0.0);
    Rng rng(seed);
    const double s1 = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(1, width)));
    const double s2 = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(1, hidden)));
    for (std::size_t i = 0; i < hidden * width; ++i) p.values[i] = s1 * rng.normal();
    for (std::size_t i = 0; i < hidden; ++i) p.values[hidden * width + hidden + i] = s2 * rng.normal();
    return p;
}

namespace {

struct MlpView {
    const Mlp::Params& p;
    [[nodiscard]] double w1(std::size_t h, std::size_t j) const { return p.values[h * p.width + j]; }
    [[nodiscard]] double b1(std::size_t h) const { return p.values[p.hidden * p.width + h]; }
    [[nodiscard]] double w2(std::size_t h) const { return p.values[p.hidden * p.width + p.hidden + h]; }
    [[nodiscard]] double b2() const { return p.values.back(); }
};

// Hidden activations and output logit.
double mlp_logit(const Mlp::Params& p, std::span<const double> x, std::vector<double>& hidden) {
    MlpView v{p};
    hidden.assign(p.hidden, 0.0);
    double z = v.b2();
    for (std::size_t h = 0; h < p.hidden; ++h) {
        double a = v.b1(h);
        for (std::size_t j = 0; j < p.width; ++j) a += v.w1(h, j) * x[j];
        hidden[h] = a > 0 ? a : 0.0;
        z += v.w2(h) * hidden[h];
    }
    return z;
}

double weight_norm2(const Mlp::Params& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.hidden * p.width; ++i) s += p.values[i] * p.values[i];
    for (std::size_t h = 0; h < p.hidden; ++h) {
        const double w = p.values[p.hidden * p.width + p.hidden + h];
        s += w * w;
    }
    return s;
}

}  // namespace

double Mlp::forward(const Params& p, std::span<const double> x) {
    check_width(x, p.width);
    std::vector<double> hidden;
    return logistic::sigmoid(mlp_logit(p, x, hidden));
}

double Mlp::loss(const Params& p, const std::vector<std::vector<double>>& x, std::span<const int> y, double lambda) {
    std::vector<double> hidden;
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = mlp_logit(p, x[i], hidden);
        total += softplus(z) - y[i] * z;
    }
    return (x.empty() ? 0.0 : total / static_cast<double>(x.size())) + 0.5 * lambda * weight_norm2(p);
}

std::vector<double> Mlp::gradient(const Params& p, const std::vector<std::vector<double>>& x, std::span<const int> y,
                                  double lambda) {
    MlpView v{p};
    const std::size_t w2_off = p.hidden * p.width + p.hidden;
    std::vector<double> g(p.values.size(), 0.0);
    std::vector<double> hidden;
    const double inv_n = x.empty() ? 0.0 : 1.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = mlp_logit(p, x[i], hidden);
        const double dz = (logistic::sigmoid(z) - y[i]) * inv_n;
        g.back() += dz;
        for (std::size_t h = 0; h < p.hidden; ++h) {
            g[w2_off + h] += dz * hidden[h];
            if (hidden[h] <= 0.0) continue;
            const double da = dz * v.w2(h);
            g[p.hidden * p.width + h] += da;
            for (std::size_t j = 0; j < p.width; ++j) g[h * p.width + j] += da * x[i][j];
        }
    }
    for (std::size_t k = 0; k < p.hidden * p.width; ++k) g[k] += lambda * p.values[k];
    for (std::size_t h = 0; h < p.hidden; ++h) g[w2_off + h] += lambda * p.values[w2_off + h];
    return g;
}

void Mlp::fit(const Dataset& ds, std::uint64_t seed) {
    require_trainable(ds);
    if (options_.hidden < 1 || options_.epochs < 0) throw ContractError("invalid mlp options");
    scaler_ = Standardizer::fit(ds.rows, ds.width());
    std::vector<std::vector<double>> z;
    z.reserve(ds.size());
    for (const auto& r : ds.rows) z.push_back(scaler_.apply(r));
    params_ = init(ds.width(), static_cast<std::size_t>(options_.hidden), seed);
    for (int e = 0; e < options_.epochs; ++e) {
        const auto g = gradient(params_, z, ds.labels, options_.lambda);
        for (std::size_t k = 0; k < g.size(); ++k) params_.values[k] -= options_.learning_rate * g[k];
    }
}

double Mlp::predict_proba(std::span<const double> x) const {
    if (params_.values.empty()) throw ContractError("mlp is not fitted");
    return forward(params_, scaler_.apply(x));
}

json Mlp::to_json() const {
    MlpView v{params_};
    json w1 = json::array();
    json b1 = json::array();
    json w2 = json::array();
    for (std::size_t h = 0; h < params_.hidden; ++h) {
        std::vector<double> row(params_.width);
        for (std::size_t j = 0; j < params_.width; ++j) row[j] = v.w1(h, j);
        w1.push_back(row);
        b1.push_back(v.b1(h));
        w2.push_back(v.w2(h));
    }
    return {{"schema_version", 1},
            {"kind", "mlp"},
            {"options",
             {{"hidden", options_.hidden},
              {"epochs", options_.epochs},
              {"learning_rate", options_.learning_rate},
              {"lambda", options_.lambda}}},
            {"scaler", scaler_.to_json()},
            {"W1", std::move(w1)},
            {"b1", std::move(b1)},
            {"w2", std::move(w2)},
            {"b2", params_.values.empty() ? 0.0 : v.b2()}};
}

Mlp Mlp::from_json(const json& doc) {
    check_kind(doc, "mlp");
    const auto& o = doc.at("options");
    Mlp m({o.at("hidden"), o.at("epochs"), o.at("learning_rate"), o.at("lambda")});
    m.scaler_ = Standardizer::from_json(doc.at("scaler"));
    const auto w1 = doc.at("W1").get<std::vector<std::vector<double>>>();
    const auto b1 = doc.at("b1").get<std::vector<double>>();
    const auto w2 = doc.at("w2").get<std::vector<double>>();
    const std::size_t hidden = w1.size();
    const std::size_t width = m.scaler_.mean.size();
    if (b1.size() != hidden || w2.size() != hidden) throw ContractError("mlp layer size mismatch");
    m.params_ = {width, hidden, {}};
    for (const auto& row : w1) {
        if (row.size() != width) throw ContractError("mlp W1 row width mismatch");
        m.params_.values.insert(m.params_.values.end(), row.begin(), row.end());
    }
    m.params_.values.insert(m.params_.values.end(), b1.begin(), b1.end());
    m.params_.values.insert(m.params_.values.end(), w2.begin(), w2.end());
    m.params_.values.push_back(doc.at("b2").get<double>());
    return m;
}

// --- factory -----------------------------------------------------------------

std::unique_ptr<Classifier> make_classifier(std::string_view kind) {
    if (kind == "lr") return std::make_unique<LogisticRegression>();
    if (kind == "rf") return std::make_unique<RandomForest>();
    if (kind == "mlp") return std::make_unique<Mlp>();
    throw ContractError("unknown classifier kind: " + std::string(kind));
}

std::unique_ptr<Classifier> classifier_from_json(const json& doc) {
    try {
        const auto kind = doc.at("kind").get<std::string>();
        if (kind == "lr") return std::make_unique<LogisticRegression>(LogisticRegression::from_json(doc));
        if (kind == "rf") return std::make_unique<RandomForest>(RandomForest::from_json(doc));
        if (kind == "mlp") return std::make_unique<Mlp>(Mlp::from_json(doc));
        throw ContractError("unknown classifier kind: " + kind);
    } catch (const json::exception& e) {
        throw ContractError(std::string("malformed classifier document: ") + e.what());
    }
}

}  // namespace flaky
