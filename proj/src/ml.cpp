#include "aptd/ml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aptd/util.hpp"

namespace aptd {

void Dataset::check() const {
    if (X.empty()) throw Error(ErrorCode::EmptyDataset, "dataset has no rows");
    if (X.size() != y.size()) throw Error(ErrorCode::SchemaError, "row count and label count differ");
    const auto width = X.front().size();
    for (const auto& r : X)
        if (r.size() != width) throw Error(ErrorCode::SchemaError, "ragged feature matrix");
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.feature_names = feature_names;
    out.X.reserve(idx.size());
    out.y.reserve(idx.size());
    for (auto i : idx) {
        out.X.push_back(X[i]);
        out.y.push_back(y[i]);
    }
    return out;
}

Dataset Dataset::select_columns(const std::vector<std::size_t>& cols) const {
    Dataset out;
    out.y = y;
    for (auto c : cols) out.feature_names.push_back(c < feature_names.size() ? feature_names[c] : "f" + std::to_string(c));
    out.X.reserve(X.size());
    for (const auto& r : X) {
        std::vector<double> row;
        row.reserve(cols.size());
        for (auto c : cols) row.push_back(r[c]);
        out.X.push_back(std::move(row));
    }
    return out;
}

Dataset dataset_from_features(const std::vector<FeatureVector>& rows) {
    Dataset D;
    if (!rows.empty()) D.feature_names = feature_names(rows.front().stage);
    for (const auto& r : rows) {
        if (!r.label) throw Error(ErrorCode::SchemaError, "unlabelled feature row in training data");
        D.X.push_back(r.values);
        D.y.push_back(*r.label == WindowLabel::SCANNING ? 1 : 0);
    }
    return D;
}

Scaler fit_scaler(const std::vector<std::vector<double>>& X) {
    if (X.empty()) throw Error(ErrorCode::EmptyDataset, "cannot fit a scaler on no rows");
    Scaler s{X.front(), X.front()};
    for (const auto& r : X)
        for (std::size_t j = 0; j < r.size(); ++j) {
            s.min[j] = std::min(s.min[j], r[j]);
            s.max[j] = std::max(s.max[j], r[j]);
        }
    return s;
}

std::vector<double> apply_scaler(const Scaler& s, const std::vector<double>& row) {
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        const double range = s.max[j] - s.min[j];
        out[j] = range > 0 ? (row[j] - s.min[j]) / range : 0.0;
    }
    return out;
}

std::vector<std::vector<double>> apply_scaler(const Scaler& s, const std::vector<std::vector<double>>& X) {
    std::vector<std::vector<double>> out;
    out.reserve(X.size());
    for (const auto& r : X) out.push_back(apply_scaler(s, r));
    return out;
}

std::vector<double> chi2_scores(const Dataset& D) {
    D.check();
    const std::size_t d = D.cols();
    std::vector<double> obs0(d, 0.0), obs1(d, 0.0);
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < D.rows(); ++i) {
        auto& obs = D.y[i] == 1 ? obs1 : obs0;
        n1 += D.y[i] == 1;
        for (std::size_t j = 0; j < d; ++j) {
            if (D.X[i][j] < 0)
                throw Error(ErrorCode::NegativeFeature, "feature " + std::to_string(j) + " is negative in row " +
                                                            std::to_string(i));
            obs[j] += D.X[i][j];
        }
    }
    const double p1 = double(n1) / double(D.rows());
    const double p0 = 1.0 - p1;
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        const double total = obs0[j] + obs1[j];
        const double e0 = p0 * total, e1 = p1 * total;
        double chi = 0.0;
        if (e0 > 0) chi += (obs0[j] - e0) * (obs0[j] - e0) / e0;
        if (e1 > 0) chi += (obs1[j] - e1) * (obs1[j] - e1) / e1;
        out[j] = chi;
    }
    return out;
}

std::vector<std::size_t> chi2_select(const Dataset& D, double threshold) {
    const auto scores = chi2_scores(D);
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (scores[j] >= threshold) keep.push_back(j);
    if (keep.empty() && !scores.empty())
        keep.push_back(static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin()));
    return keep;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double DecisionTree::predict_proba(const std::vector<double>& x) const {
    int at = 0;
    while (nodes[at].feature >= 0) {
        const auto& nd = nodes[at];
        at = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[at].value;
}

double RandomForest::predict_proba(const std::vector<double>& x) const {
    double sum = 0;
    for (const auto& t : trees) sum += t.predict_proba(x);
    return trees.empty() ? 0.0 : sum / double(trees.size());
}

double LinearSvm::decision(const std::vector<double>& x) const {
    double s = b;
    for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
    return s;
}

int Classifier::predict(const std::vector<double>& x) const {
    if (const auto* rf = std::get_if<RandomForest>(&impl)) return rf->predict_proba(x) >= 0.5 ? 1 : 0;
    return std::get<LinearSvm>(impl).decision(x) >= 0.0 ? 1 : 0;
}

namespace {

void require_two_classes(const Dataset& D) {
    D.check();
    const bool has0 = std::find(D.y.begin(), D.y.end(), 0) != D.y.end();
    const bool has1 = std::find(D.y.begin(), D.y.end(), 1) != D.y.end();
    if (!has0 || !has1) throw Error(ErrorCode::SingleClass, "training data holds a single class");
}

class TreeBuilder {
public:
    TreeBuilder(const Dataset& D, const ForestParams& hp, Rng rng) : D_(D), hp_(hp), rng_(std::move(rng)) {
        const auto d = D.cols();
        mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(double(d)))));
    }

    DecisionTree build(std::vector<std::size_t> rows) {
        DecisionTree tree;
        grow(tree, rows, 0);
        return tree;
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0;
        double impurity = 0;
    };

    int grow(DecisionTree& tree, std::vector<std::size_t>& rows, int depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        std::size_t pos = 0;
        for (auto r : rows) pos += D_.y[r] == 1;
        const double frac = double(pos) / double(rows.size());
        tree.nodes[id].value = frac;
        const bool pure = pos == 0 || pos == rows.size();
        if (pure || depth >= hp_.max_depth || rows.size() < 2 * std::size_t(hp_.min_leaf)) return id;

        const double parent = gini(pos, rows.size());
        const auto split = best_split(rows, parent);
        if (split.feature < 0) return id;

        std::vector<std::size_t> left, right;
        for (auto r : rows) (D_.X[r][split.feature] <= split.threshold ? left : right).push_back(r);
        rows.clear();
        rows.shrink_to_fit();
        tree.nodes[id].feature = split.feature;
        tree.nodes[id].threshold = split.threshold;
        const int l = grow(tree, left, depth + 1);
        const int r = grow(tree, right, depth + 1);
        tree.nodes[id].left = l;
        tree.nodes[id].right = r;
        return id;
    }

    static double gini(std::size_t pos, std::size_t n) {
        if (n == 0) return 0.0;
        const double p = double(pos) / double(n);
        return 2.0 * p * (1.0 - p);
    }

    Split best_split(const std::vector<std::size_t>& rows, double parent) {
        const auto d = D_.cols();
        std::vector<std::size_t> order(d);
        std::iota(order.begin(), order.end(), 0);
        // partial Fisher-Yates: features are visited in random order, mtry at a time
        Split best;
        best.impurity = parent;
        std::vector<std::pair<double, int>> vals(rows.size());
        for (std::size_t i = 0; i < d; ++i) {
            const auto j = static_cast<std::size_t>(rng_.integer(std::int64_t(i), std::int64_t(d - 1)));
            std::swap(order[i], order[j]);
            const auto f = order[i];
            for (std::size_t k = 0; k < rows.size(); ++k) vals[k] = {D_.X[rows[k]][f], D_.y[rows[k]]};
            std::sort(vals.begin(), vals.end());
            std::size_t total_pos = 0;
            for (const auto& v : vals) total_pos += v.second;
            std::size_t left_pos = 0;
            const std::size_t n = vals.size();
            const auto min_leaf = std::size_t(hp_.min_leaf);
            for (std::size_t k = 0; k + 1 < n; ++k) {
                left_pos += vals[k].second;
                if (vals[k].first == vals[k + 1].first) continue;
                const std::size_t nl = k + 1, nr = n - nl;
                if (nl < min_leaf || nr < min_leaf) continue;
                const double imp = (double(nl) * gini(left_pos, nl) + double(nr) * gini(total_pos - left_pos, nr)) / double(n);
                if (imp < best.impurity - 1e-12) {
                    best.impurity = imp;
                    best.feature = static_cast<int>(f);
                    best.threshold = 0.5 * (vals[k].first + vals[k + 1].first);
                }
            }
            // stop after mtry features once something useful turned up
            if (i + 1 >= mtry_ && best.feature >= 0) break;
        }
        return best;
    }

    const Dataset& D_;
    const ForestParams& hp_;
    Rng rng_;
    std::size_t mtry_ = 1;
};

}  // namespace

RandomForest fit_forest(const Dataset& D, const ForestParams& hp) {
    require_two_classes(D);
    if (hp.n_trees < 1 || hp.max_depth < 1 || hp.min_leaf < 1)
        throw Error(ErrorCode::InvalidArgument, "forest parameters must be positive");
    RandomForest rf;
    const auto n = D.rows();
    for (int t = 0; t < hp.n_trees; ++t) {
        Rng rng(Rng::mix(hp.seed * 0x9e3779b97f4a7c15ULL + std::uint64_t(t)));
        std::vector<std::size_t> boot(n);
        for (auto& b : boot) b = static_cast<std::size_t>(rng.integer(0, std::int64_t(n) - 1));
        TreeBuilder builder(D, hp, rng.fork(1));
        rf.trees.push_back(builder.build(std::move(boot)));
    }
    return rf;
}

LinearSvm fit_svm(const Dataset& D, const SvmParams& hp) {
    require_two_classes(D);
    if (!(hp.C > 0) || hp.epochs < 1) throw Error(ErrorCode::InvalidArgument, "SVM parameters must be positive");
    const auto n = D.rows();
    const auto d = D.cols();
    // Pegasos on the augmented vector (x, 1); the averaged iterate of the last epoch is returned.
    const double lambda = 1.0 / (hp.C * double(n));
    std::vector<double> w(d + 1, 0.0), avg(d + 1, 0.0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(hp.seed ^ 0x5356'4dULL));
    std::uint64_t t = 0;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        rng.shuffle(order);
        const bool last = epoch + 1 == hp.epochs;
        for (auto i : order) {
            ++t;
            const double eta = 1.0 / (lambda * double(t));
            const double yi = D.y[i] == 1 ? 1.0 : -1.0;
            double margin = w[d];
            for (std::size_t j = 0; j < d; ++j) margin += w[j] * D.X[i][j];
            margin *= yi;
            const double shrink = 1.0 - eta * lambda;
            for (auto& v : w) v *= shrink;
            if (margin < 1.0) {
                for (std::size_t j = 0; j < d; ++j) w[j] += eta * yi * D.X[i][j];
                w[d] += eta * yi;
            }
            if (last)
                for (std::size_t j = 0; j <= d; ++j) avg[j] += w[j];
        }
    }
    LinearSvm svm;
    svm.w.assign(avg.begin(), avg.begin() + static_cast<std::ptrdiff_t>(d));
    for (auto& v : svm.w) v /= double(n);
    svm.b = avg[d] / double(n);
    return svm;
}

Classifier fit_classifier(const Dataset& D, const HyperParams& hp) {
    if (const auto* f = std::get_if<ForestParams>(&hp)) return Classifier{fit_forest(D, *f)};
    return Classifier{fit_svm(D, std::get<SvmParams>(hp))};
}

int TrainedModel::predict(const std::vector<double>& raw) const {
    if (raw.size() != scaler.min.size())
        throw Error(ErrorCode::SchemaError, "model expects " + std::to_string(scaler.min.size()) + " features, got " +
                                                std::to_string(raw.size()));
    const auto scaled = apply_scaler(scaler, raw);
    std::vector<double> x;
    x.reserve(selected.size());
    for (auto j : selected) x.push_back(scaled[j]);
    return Classifier{params}.predict(x);
}

WindowLabel TrainedModel::classify(const FeatureVector& fv) const {
    return predict(fv.values) == 1 ? WindowLabel::SCANNING : WindowLabel::NORMAL;
}

namespace {

FeatureStage guess_stage(const Dataset& D) {
    return D.cols() == feature_count(FeatureStage::FIELDBUS) ? FeatureStage::FIELDBUS : FeatureStage::DISCOVERY;
}

std::string describe(const HyperParams& hp) {
    std::ostringstream os;
    if (const auto* f = std::get_if<ForestParams>(&hp))
        os << "n_trees=" << f->n_trees << ";max_depth=" << f->max_depth << ";min_leaf=" << f->min_leaf
           << ";seed=" << f->seed;
    else {
        const auto& s = std::get<SvmParams>(hp);
        os << "C=" << fmt_double(s.C) << ";epochs=" << s.epochs << ";seed=" << s.seed;
    }
    return os.str();
}

TrainedModel train_any(const Dataset& D, const HyperParams& hp, std::optional<double> threshold) {
    require_two_classes(D);
    TrainedModel m;
    m.kind = std::holds_alternative<ForestParams>(hp) ? ModelKind::RANDOM_FOREST : ModelKind::LINEAR_SVM;
    m.stage = guess_stage(D);
    m.feature_names = D.feature_names;
    m.scaler = fit_scaler(D.X);
    Dataset scaled = D;
    scaled.X = apply_scaler(m.scaler, D.X);
    if (threshold) {
        m.selected = chi2_select(scaled, *threshold);
        m.metadata["chi2_threshold"] = fmt_double(*threshold);
    } else {
        m.selected.resize(D.cols());
        std::iota(m.selected.begin(), m.selected.end(), 0);
    }
    const auto reduced = scaled.select_columns(m.selected);
    m.params = fit_classifier(reduced, hp).impl;
    m.metadata["hyperparameters"] = describe(hp);
    m.metadata["training_rows"] = std::to_string(D.rows());
    return m;
}

}  // namespace

TrainedModel train_random_forest(const Dataset& D, const ForestParams& hp, std::optional<double> chi2_threshold) {
    return train_any(D, hp, chi2_threshold);
}

TrainedModel train_linear_svm(const Dataset& D, const SvmParams& hp, std::optional<double> chi2_threshold) {
    return train_any(D, hp, chi2_threshold);
}

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& y, std::size_t k, std::uint64_t seed) {
    if (k < 2 || y.size() < k)
        throw Error(ErrorCode::TooFewRows, std::to_string(y.size()) + " rows cannot fill " + std::to_string(k) + " folds");
    Rng rng(Rng::mix(seed ^ 0xf01dULL));
    std::vector<std::vector<std::size_t>> folds(k);
    std::size_t next = 0;
    for (int cls : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] == cls) idx.push_back(i);
        rng.shuffle(idx);
        for (auto i : idx) folds[next++ % k].push_back(i);
    }
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

CvResult kfold_cv(const Dataset& D, std::size_t k, const std::vector<HyperParams>& grid, ModelKind kind,
                  std::uint64_t seed) {
    D.check();
    if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "empty hyperparameter grid");
    for (const auto& hp : grid) {
        const bool forest = std::holds_alternative<ForestParams>(hp);
        if (forest != (kind == ModelKind::RANDOM_FOREST))
            throw Error(ErrorCode::InvalidArgument, "grid point does not match model kind");
    }
    const auto folds = stratified_folds(D.y, k, seed);
    CvResult res;
    res.best = grid.front();
    res.mean_score = -1.0;
    for (const auto& hp : grid) {
        double total = 0.0;
        for (std::size_t f = 0; f < k; ++f) {
            std::vector<std::size_t> train;
            for (std::size_t g = 0; g < k; ++g)
                if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
            const auto tr = D.subset(train);
            const auto va = D.subset(folds[f]);
            const auto positives = std::count(tr.y.begin(), tr.y.end(), 1);
            std::size_t correct = 0;
            if (positives == 0 || positives == std::ptrdiff_t(tr.rows())) {
                const int only = positives == 0 ? 0 : 1;
                correct = static_cast<std::size_t>(std::count(va.y.begin(), va.y.end(), only));
            } else {
                const auto clf = fit_classifier(tr, hp);
                for (std::size_t i = 0; i < va.rows(); ++i) correct += clf.predict(va.X[i]) == va.y[i];
            }
            total += va.rows() ? double(correct) / double(va.rows()) : 0.0;
        }
        const double score = total / double(k);
        res.grid_scores.push_back(score);
        if (score > res.mean_score) {
            res.mean_score = score;
            res.best = hp;
        }
    }
    return res;
}

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size()) throw Error(ErrorCode::InvalidArgument, "label vectors differ in length");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const bool t = y_true[i] == 1, p = y_pred[i] == 1;
        if (t && p)
            ++cm.tp;
        else if (!t && p)
            ++cm.fp;
        else if (t && !p)
            ++cm.fn;
        else
            ++cm.tn;
    }
    return cm;
}

Ratio2 precision_recall(const ConfusionMatrix& cm) {
    Ratio2 r;
    const auto pd = cm.tp + cm.fp, rd = cm.tp + cm.fn;
    if (pd) r.first = double(cm.tp) / double(pd);
    if (rd) r.second = double(cm.tp) / double(rd);
    r.degenerate = pd == 0 || rd == 0;
    return r;
}

Ratio2 detection_rates(const ConfusionMatrix& cm) {
    Ratio2 r;
    const auto pos = cm.tp + cm.fn;
    if (pos == 0) {
        r.degenerate = true;
        return r;
    }
    r.first = double(cm.tp) / double(pos);
    r.second = double(cm.fn) / double(pos);
    return r;
}

WindowLabel majority(const std::vector<WindowLabel>& labels) {
    if (labels.empty()) throw Error(ErrorCode::EmptyInput, "no labels to vote on");
    const auto s = std::count(labels.begin(), labels.end(), WindowLabel::SCANNING);
    return 2 * std::size_t(s) > labels.size() ? WindowLabel::SCANNING : WindowLabel::NORMAL;
}

WindowLabel classify_with_mode(const TrainedModel& model, const std::vector<FeatureVector>& windows, int n) {
    if (n < 1 || n % 2 == 0) throw Error(ErrorCode::InvalidArgument, "vote size must be a positive odd number");
    if (windows.empty()) throw Error(ErrorCode::EmptyInput, "no windows to classify");
    std::vector<WindowLabel> labels;
    for (std::size_t i = 0; i < windows.size() && i < std::size_t(n); ++i) labels.push_back(model.classify(windows[i]));
    return majority(labels);
}

std::vector<WindowLabel> smooth_labels(const std::vector<WindowLabel>& labels, int n) {
    if (n < 1 || n % 2 == 0) throw Error(ErrorCode::InvalidArgument, "vote size must be a positive odd number");
    std::vector<WindowLabel> out(labels.size());
    const auto size = labels.size();
    const auto width = std::min<std::size_t>(size, std::size_t(n));
    for (std::size_t i = 0; i < size; ++i) {
        const std::size_t half = std::size_t(n) / 2;
        std::size_t start = i >= half ? i - half : 0;
        start = std::min(start, size - width);
        std::vector<WindowLabel> block(labels.begin() + std::ptrdiff_t(start),
                                       labels.begin() + std::ptrdiff_t(start + width));
        out[i] = majority(block);
    }
    return out;
}

SplitIndices train_test_split(const std::vector<int>& y, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw Error(ErrorCode::InvalidArgument, "test fraction must lie in (0,1)");
    Rng rng(Rng::mix(seed ^ 0x5117ULL));
    SplitIndices s;
    for (int cls : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < y.size(); ++i)
            if (y[i] == cls) idx.push_back(i);
        rng.shuffle(idx);
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(idx.size())));
        s.test.insert(s.test.end(), idx.begin(), idx.begin() + std::ptrdiff_t(n_test));
        s.train.insert(s.train.end(), idx.begin() + std::ptrdiff_t(n_test), idx.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

std::vector<HyperParams> default_grid(ModelKind kind, std::uint64_t seed) {
    std::vector<HyperParams> grid;
    if (kind == ModelKind::RANDOM_FOREST) {
        for (int depth : {8, 16})
            for (int leaf : {1, 4}) grid.emplace_back(ForestParams{30, depth, leaf, seed});
    } else {
        for (double C : {0.1, 1.0, 10.0, 100.0}) grid.emplace_back(SvmParams{C, 40, seed});
    }
    return grid;
}

PipelineReport run_training_pipeline(const Dataset& D, ModelKind kind, const std::vector<HyperParams>& grid,
                                     std::uint64_t seed, std::size_t folds, double test_fraction) {
    require_two_classes(D);
    const auto split = train_test_split(D.y, test_fraction, seed);
    const auto train = D.subset(split.train);
    const auto test = D.subset(split.test);

    PipelineReport rep;
    const auto scaler = fit_scaler(train.X);
    Dataset scaled = train;
    scaled.X = apply_scaler(scaler, train.X);
    const double threshold = median(chi2_scores(scaled));
    const auto selected = chi2_select(scaled, threshold);
    const auto reduced = scaled.select_columns(selected);

    rep.cv = kfold_cv(reduced, folds, grid, kind, seed);

    auto& m = rep.model;
    m.kind = kind;
    m.stage = guess_stage(D);
    m.feature_names = D.feature_names;
    m.scaler = scaler;
    m.selected = selected;
    m.params = fit_classifier(reduced, rep.cv.best).impl;
    m.metadata["hyperparameters"] = describe(rep.cv.best);
    m.metadata["chi2_threshold"] = fmt_double(threshold);
    m.metadata["cv_folds"] = std::to_string(folds);
    m.metadata["cv_accuracy"] = fmt_double(rep.cv.mean_score);
    m.metadata["seed"] = std::to_string(seed);
    m.metadata["training_rows"] = std::to_string(train.rows());

    std::vector<int> pred;
    for (const auto& row : test.X) pred.push_back(m.predict(row));
    rep.test_cm = confusion(test.y, pred);
    const auto pr = precision_recall(rep.test_cm);
    rep.precision = pr.first;
    rep.recall = pr.second;
    return rep;
}

std::string_view to_string(ModelKind k) { return k == ModelKind::RANDOM_FOREST ? "random_forest" : "linear_svm"; }

std::string save_model_text(const TrainedModel& m) {
    std::ostringstream os;
    auto vec = [&](const char* tag, const auto& v) {
        os << tag << ' ' << v.size();
        for (const auto& x : v) {
            if constexpr (std::is_floating_point_v<std::decay_t<decltype(x)>>)
                os << ' ' << fmt_double(x);
            else
                os << ' ' << x;
        }
        os << '\n';
    };
    os << "aptd-model 1\n";
    os << "kind " << to_string(m.kind) << '\n';
    os << "stage " << to_string(m.stage) << '\n';
    vec("features", m.feature_names);
    vec("selected", m.selected);
    vec("scaler_min", m.scaler.min);
    vec("scaler_max", m.scaler.max);
    for (const auto& [k, v] : m.metadata) os << "meta " << k << ' ' << v << '\n';
    if (const auto* rf = std::get_if<RandomForest>(&m.params)) {
        os << "forest " << rf->trees.size() << '\n';
        for (const auto& t : rf->trees) {
            os << "tree " << t.nodes.size() << '\n';
            for (const auto& nd : t.nodes)
                os << nd.feature << ' ' << fmt_double(nd.threshold) << ' ' << nd.left << ' ' << nd.right << ' '
                   << fmt_double(nd.value) << '\n';
        }
    } else {
        const auto& svm = std::get<LinearSvm>(m.params);
        vec("svm", svm.w);
        os << "bias " << fmt_double(svm.b) << '\n';
    }
    os << "end\n";
    return os.str();
}

namespace {

[[noreturn]] void bad_model(const std::string& why) { throw Error(ErrorCode::ModelFormat, why); }

template <class T>
std::vector<T> read_vec(std::istringstream& in, const std::string& tag) {
    std::string got;
    std::size_t n = 0;
    if (!(in >> got) || got != tag || !(in >> n)) bad_model("expected '" + tag + "'");
    std::vector<T> v(n);
    for (auto& x : v) {
        if constexpr (std::is_same_v<T, double>) {
            std::string tok;
            if (!(in >> tok) || !parse_double(tok, x)) bad_model("bad number in '" + tag + "'");
        } else if (!(in >> x)) {
            bad_model("short '" + tag + "' list");
        }
    }
    return v;
}

}  // namespace

TrainedModel load_model_text(const std::string& text) {
    std::istringstream in(text);
    std::string tag, value;
    int version = 0;
    if (!(in >> tag >> version) || tag != "aptd-model") bad_model("not a model file");
    if (version != 1) bad_model("unsupported model version " + std::to_string(version));
    TrainedModel m;
    if (!(in >> tag >> value) || tag != "kind") bad_model("missing kind");
    if (value == "random_forest")
        m.kind = ModelKind::RANDOM_FOREST;
    else if (value == "linear_svm")
        m.kind = ModelKind::LINEAR_SVM;
    else
        bad_model("unknown model kind " + value);
    if (!(in >> tag >> value) || tag != "stage") bad_model("missing stage");
    auto st = parse_feature_stage(value);
    if (!st) bad_model("unknown stage " + value);
    m.stage = *st;
    m.feature_names = read_vec<std::string>(in, "features");
    m.selected = read_vec<std::size_t>(in, "selected");
    m.scaler.min = read_vec<double>(in, "scaler_min");
    m.scaler.max = read_vec<double>(in, "scaler_max");
    if (m.scaler.min.size() != m.scaler.max.size()) bad_model("scaler bounds differ in length");
    for (auto j : m.selected)
        if (j >= m.scaler.min.size()) bad_model("selected index out of range");

    while (in >> tag) {
        if (tag == "meta") {
            std::string key, rest;
            in >> key;
            std::getline(in, rest);
            m.metadata[key] = trim(rest);
        } else if (tag == "forest") {
            std::size_t n_trees = 0;
            in >> n_trees;
            RandomForest rf;
            for (std::size_t t = 0; t < n_trees; ++t) {
                std::size_t n_nodes = 0;
                if (!(in >> tag >> n_nodes) || tag != "tree") bad_model("expected tree");
                DecisionTree tree;
                tree.nodes.resize(n_nodes);
                for (auto& nd : tree.nodes) {
                    std::string th, val;
                    if (!(in >> nd.feature >> th >> nd.left >> nd.right >> val) || !parse_double(th, nd.threshold) ||
                        !parse_double(val, nd.value))
                        bad_model("bad tree node");
                    const int count = static_cast<int>(n_nodes);
                    if (nd.feature >= 0 && (nd.left <= 0 || nd.right <= 0 || nd.left >= count || nd.right >= count ||
                                            std::size_t(nd.feature) >= m.selected.size()))
                        bad_model("tree node points outside the tree");
                }
                rf.trees.push_back(std::move(tree));
            }
            m.params = std::move(rf);
        } else if (tag == "svm") {
            std::size_t n = 0;
            in >> n;
            LinearSvm svm;
            svm.w.resize(n);
            for (auto& w : svm.w) {
                std::string tok;
                if (!(in >> tok) || !parse_double(tok, w)) bad_model("bad SVM weight");
            }
            std::string tok;
            if (!(in >> tag >> tok) || tag != "bias" || !parse_double(tok, svm.b)) bad_model("missing SVM bias");
            if (svm.w.size() != m.selected.size()) bad_model("SVM width does not match selection");
            m.params = std::move(svm);
        } else if (tag == "end") {
            const bool forest = std::holds_alternative<RandomForest>(m.params);
            if (forest != (m.kind == ModelKind::RANDOM_FOREST)) bad_model("parameters do not match model kind");
            return m;
        } else {
            bad_model("unexpected token '" + tag + "'");
        }
    }
    bad_model("missing end marker");
}

void save_model(const std::filesystem::path& path, const TrainedModel& m) { write_text_file(path, save_model_text(m)); }

TrainedModel load_model(const std::filesystem::path& path) {
    try {
        return load_model_text(read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ModelFormat) throw Error(ErrorCode::ModelFormat, path.string() + ": " + e.detail());
        throw;
    }
}

}  // namespace aptd
