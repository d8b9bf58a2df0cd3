#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "aptd/ml.hpp"
#include "support.hpp"

using namespace aptd;
using namespace aptd::test;

namespace {

Dataset blobs(std::size_t n, std::uint64_t seed, double gap = 3.0) {
    Rng rng(seed);
    Dataset D;
    D.feature_names = {"x", "y"};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = int(i % 2);
        D.X.push_back({rng.normal(c * gap, 0.5) + 5, rng.normal(c * gap, 0.5) + 5});
        D.y.push_back(c);
    }
    return D;
}

double accuracy(const TrainedModel& m, const Dataset& D) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < D.rows(); ++i) ok += m.predict(D.X[i]) == D.y[i];
    return double(ok) / double(D.rows());
}

Dataset random_dataset(Rng& rng, std::size_t rows, std::size_t cols) {
    Dataset D;
    for (std::size_t j = 0; j < cols; ++j) D.feature_names.push_back("f" + std::to_string(j));
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<double> r(cols);
        for (auto& v : r) v = rng.chance(0.2) ? 0.0 : rng.uniform(0, 10);
        D.X.push_back(r);
        D.y.push_back(int(i % 2));
    }
    return D;
}

}  // namespace

TEST_CASE("min-max scaling") {
    const std::vector<std::vector<double>> X{{0, 3}, {5, 3}, {10, 3}};
    const auto s = fit_scaler(X);
    const auto Y = apply_scaler(s, X);
    CHECK(Y[0] == std::vector<double>{0, 0});
    CHECK(Y[1] == std::vector<double>{0.5, 0});
    CHECK(Y[2] == std::vector<double>{1, 0});
    CHECK(apply_scaler(s, std::vector<double>{20, 3})[0] == 2.0);
    try {
        fit_scaler({});
        FAIL("empty accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyDataset);
    }
}

TEST_CASE("property: scaled training data spans [0,1] per non-constant feature") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        auto D = random_dataset(rng, std::size_t(rng.integer(2, 60)), std::size_t(rng.integer(1, 8)));
        const auto Y = apply_scaler(fit_scaler(D.X), D.X);
        for (std::size_t j = 0; j < D.cols(); ++j) {
            double lo = 1e300, hi = -1e300, rlo = 1e300, rhi = -1e300;
            for (std::size_t i = 0; i < D.rows(); ++i) {
                lo = std::min(lo, Y[i][j]), hi = std::max(hi, Y[i][j]);
                rlo = std::min(rlo, D.X[i][j]), rhi = std::max(rhi, D.X[i][j]);
            }
            if (rhi > rlo) {
                CHECK(lo == doctest::Approx(0.0));
                CHECK(hi == doctest::Approx(1.0));
            } else {
                CHECK(lo == 0.0);
                CHECK(hi == 0.0);
            }
        }
    }
}

TEST_CASE("chi-squared selection examples") {
    Dataset D;
    D.feature_names = {"label_x10", "constant", "same"};
    for (int i = 0; i < 10; ++i) {
        D.X.push_back({10.0 * (i % 2), 1.0, 0.5});
        D.y.push_back(i % 2);
    }
    const auto s = chi2_scores(D);
    // feature 0: class sums 0 and 50; expected 25 each -> 25 + 25
    CHECK(s[0] == doctest::Approx(50.0));
    CHECK(s[1] == 0.0);
    CHECK(s[2] == 0.0);
    CHECK(chi2_select(D, 1e-9) == std::vector<std::size_t>{0});
    CHECK(chi2_select(D, 1e9) == std::vector<std::size_t>{0});
    CHECK(chi2_select(D, 0.0).size() == 3);

    D.X[0][1] = -1;
    try {
        chi2_scores(D);
        FAIL("negative accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NegativeFeature);
    }
}

TEST_CASE("property: chi-squared matches the contingency-table oracle and selection is monotone") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        auto D = random_dataset(rng, std::size_t(rng.integer(4, 40)), std::size_t(rng.integer(1, 10)));
        const auto got = chi2_scores(D);
        const auto ref = brute_chi2(D.X, D.y);
        for (std::size_t j = 0; j < got.size(); ++j) CHECK(rel_err(got[j], ref[j]) <= 1e-9);

        CHECK(chi2_select(D, 0.0).size() == D.cols());
        std::size_t prev = D.cols() + 1;
        auto sorted = got;
        std::sort(sorted.begin(), sorted.end());
        for (double t : sorted) {
            const auto keep = chi2_select(D, t);
            CHECK(keep.size() <= prev);
            prev = keep.size();
        }
    }
}

TEST_CASE("random forest on separable blobs") {
    const auto D = blobs(200, 1);
    const auto m = train_random_forest(D, {20, 8, 1, 1});
    CHECK(accuracy(m, D) == 1.0);
    const auto again = train_random_forest(D, {20, 8, 1, 1});
    CHECK(std::get<RandomForest>(m.params) == std::get<RandomForest>(again.params));

    Dataset one = D;
    std::fill(one.y.begin(), one.y.end(), 1);
    try {
        train_random_forest(one, {});
        FAIL("single class accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SingleClass);
    }
}

TEST_CASE("linear SVM examples") {
    Dataset D;
    D.feature_names = {"x"};
    D.X = {{0.0}, {0.1}, {0.9}, {1.0}};
    D.y = {0, 0, 1, 1};
    const auto m = train_linear_svm(D, {10.0, 200, 3});
    CHECK(accuracy(m, D) == 1.0);
    const auto& svm = std::get<LinearSvm>(m.params);
    // boundary where w * x + b crosses zero, in scaled space (identical here since x spans [0,1])
    const double boundary = -svm.b / svm.w[0];
    CHECK(boundary > 0.1);
    CHECK(boundary < 0.9);
    CHECK(std::get<LinearSvm>(train_linear_svm(D, {10.0, 200, 3}).params) == svm);

    Dataset x;
    x.feature_names = {"a", "b"};
    x.X = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
    x.y = {0, 0, 1, 1};
    TrainedModel xm;
    CHECK_NOTHROW(xm = train_linear_svm(x, {1.0, 50, 1}));
    CHECK(accuracy(xm, x) <= 0.75);

    Dataset one = D;
    one.y = {0, 0, 0, 0};
    CHECK_THROWS_AS(train_linear_svm(one, {}), Error);
}

TEST_CASE("cross-validation") {
    const auto D = blobs(60, 4);
    std::vector<HyperParams> single{ForestParams{5, 4, 1, 1}};
    CHECK(std::get<ForestParams>(kfold_cv(D, 5, single, ModelKind::RANDOM_FOREST).best).n_trees == 5);

    // a depth-1 stump cannot separate an XOR pattern, a deeper tree can
    Dataset x;
    x.feature_names = {"a", "b"};
    Rng rng(9);
    for (int i = 0; i < 80; ++i) {
        const double a = rng.uniform(0, 1), b = rng.uniform(0, 1);
        x.X.push_back({a, b});
        x.y.push_back((a > 0.5) != (b > 0.5));
    }
    std::vector<HyperParams> grid{ForestParams{1, 1, 1, 1}, ForestParams{15, 6, 1, 1}};
    const auto cv = kfold_cv(x, 4, grid, ModelKind::RANDOM_FOREST);
    CHECK(std::get<ForestParams>(cv.best).max_depth == 6);
    REQUIRE(cv.grid_scores.size() == 2);
    CHECK(cv.grid_scores[1] > cv.grid_scores[0]);

    auto ten = blobs(10, 2);
    const auto loo = kfold_cv(ten, 10, single, ModelKind::RANDOM_FOREST);
    CHECK(loo.grid_scores.size() == 1);
    for (const auto& f : stratified_folds(ten.y, 10, 1)) CHECK(f.size() == 1);

    try {
        kfold_cv(ten, 11, single, ModelKind::RANDOM_FOREST);
        FAIL("too many folds accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::TooFewRows);
    }
}

TEST_CASE("property: stratified folds partition the rows") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        std::vector<int> y(std::size_t(rng.integer(10, 200)));
        for (auto& v : y) v = rng.chance(0.4);
        y[0] = 0, y[1] = 1;
        const auto k = std::size_t(rng.integer(2, 10));
        const auto folds = stratified_folds(y, k, seed);
        std::vector<std::size_t> all;
        for (const auto& f : folds) all.insert(all.end(), f.begin(), f.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> want(y.size());
        std::iota(want.begin(), want.end(), 0);
        CHECK(all == want);
    }
}

TEST_CASE("metrics") {
    auto pr = precision_recall({3, 1, 0, 0});
    CHECK(pr.first == 0.75);
    CHECK(pr.second == 1.0);
    CHECK_FALSE(pr.degenerate);
    pr = precision_recall({0, 0, 2, 5});
    CHECK(pr.first == 0.0);
    CHECK(pr.degenerate);
    const auto dr = detection_rates({1000, 0, 0, 0});
    CHECK(dr.first == 1.0);
    CHECK(dr.second == 0.0);
    CHECK(confusion({1, 0, 1, 0}, {1, 1, 0, 0}) == ConfusionMatrix{1, 1, 1, 1});
}

TEST_CASE("property: metrics agree with brute-force counting") {
    for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
        Rng rng(seed);
        const auto n = std::size_t(rng.integer(0, 60));
        std::vector<int> t(n), p(n);
        const double bias = rng.uniform();
        for (std::size_t i = 0; i < n; ++i) t[i] = rng.chance(bias), p[i] = rng.chance(bias);
        const auto cm = confusion(t, p);
        const auto c = brute_counts(t, p);
        CHECK(cm.tp == c.tp);
        CHECK(cm.fp == c.fp);
        CHECK(cm.fn == c.fn);
        CHECK(cm.tn == c.tn);
        CHECK(cm.total() == n);
        const auto pr = precision_recall(cm);
        const auto dr = detection_rates(cm);
        CHECK(pr.first == (c.tp + c.fp ? double(c.tp) / double(c.tp + c.fp) : 0.0));
        CHECK(pr.second == (c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0));
        CHECK(dr.first == (c.tp + c.fn ? double(c.tp) / double(c.tp + c.fn) : 0.0));
        CHECK(dr.second == (c.tp + c.fn ? double(c.fn) / double(c.tp + c.fn) : 0.0));
    }
}

TEST_CASE("mode voting") {
    using L = WindowLabel;
    CHECK(majority({L::SCANNING, L::NORMAL, L::SCANNING}) == L::SCANNING);
    CHECK(majority({L::SCANNING, L::NORMAL}) == L::NORMAL);
    CHECK_THROWS_AS(majority({}), Error);
    const std::vector<L> five{L::SCANNING, L::SCANNING, L::NORMAL, L::SCANNING, L::SCANNING};
    CHECK(smooth_labels(five, 5) == std::vector<L>(5, L::SCANNING));
    CHECK(smooth_labels(five, 1) == five);
    const std::vector<L> spike{L::NORMAL, L::NORMAL, L::SCANNING, L::NORMAL, L::NORMAL, L::NORMAL};
    CHECK(smooth_labels(spike, 5) == std::vector<L>(6, L::NORMAL));
    CHECK_THROWS_AS(smooth_labels(five, 4), Error);

    // a model that flags any window with more than 5 in its only feature
    Dataset D;
    D.feature_names = feature_names(FeatureStage::DISCOVERY);
    for (int i = 0; i < 40; ++i) {
        std::vector<double> r(12, 0.0);
        r[0] = i % 2 ? 10.0 + i : double(i % 5);
        D.X.push_back(r);
        D.y.push_back(i % 2);
    }
    const auto m = train_random_forest(D, {10, 4, 1, 1});
    auto fv = [](double v) {
        FeatureVector f;
        f.values.assign(12, 0.0);
        f.values[0] = v;
        return f;
    };
    CHECK(classify_with_mode(m, {fv(30)}, 1) == L::SCANNING);
    CHECK(classify_with_mode(m, {fv(30), fv(0), fv(25), fv(30), fv(30)}, 5) == L::SCANNING);
    CHECK(classify_with_mode(m, {fv(0), fv(0), fv(30)}, 3) == L::NORMAL);
    try {
        classify_with_mode(m, {}, 3);
        FAIL("empty accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::EmptyInput);
    }
}

TEST_CASE("property: seeded pipelines ignore the order rows arrive in") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        auto D = blobs(40, seed, 1.5);
        // canonical order: sort rows before fitting
        auto canon = [](Dataset d) {
            std::vector<std::size_t> idx(d.rows());
            std::iota(idx.begin(), idx.end(), 0);
            std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
                return std::tie(d.X[a], d.y[a]) < std::tie(d.X[b], d.y[b]);
            });
            return d.subset(idx);
        };
        auto P = D;
        Rng rng(seed * 7);
        std::vector<std::size_t> perm(P.rows());
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        P = P.subset(perm);
        const auto a = train_random_forest(canon(D), {5, 6, 1, seed});
        const auto b = train_random_forest(canon(P), {5, 6, 1, seed});
        CHECK(std::get<RandomForest>(a.params) == std::get<RandomForest>(b.params));
        const auto sa = train_linear_svm(canon(D), {1.0, 20, seed});
        const auto sb = train_linear_svm(canon(P), {1.0, 20, seed});
        CHECK(std::get<LinearSvm>(sa.params) == std::get<LinearSvm>(sb.params));
    }
}

TEST_CASE("train/test split is stratified and disjoint") {
    std::vector<int> y(100);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = i < 30;
    const auto s = train_test_split(y, 0.2, 5);
    CHECK(s.test.size() == 20);
    CHECK(s.train.size() == 80);
    std::size_t pos = 0;
    for (auto i : s.test) pos += y[i];
    CHECK(pos == 6);
    std::vector<std::size_t> both;
    std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(both));
    CHECK(both.empty());
}

TEST_CASE("training pipeline and model files") {
    const auto D = blobs(200, 3);
    const auto rep = run_training_pipeline(D, ModelKind::RANDOM_FOREST, default_grid(ModelKind::RANDOM_FOREST, 1), 1,
                                           5);
    CHECK(rep.precision >= 0.95);
    CHECK(rep.recall >= 0.95);
    CHECK(rep.test_cm.total() == 40);

    const auto text = save_model_text(rep.model);
    const auto back = load_model_text(text);
    CHECK(save_model_text(back) == text);
    for (const auto& x : D.X) CHECK(back.predict(x) == rep.model.predict(x));

    const auto svm = run_training_pipeline(D, ModelKind::LINEAR_SVM, default_grid(ModelKind::LINEAR_SVM, 1), 1, 5);
    const auto sback = load_model_text(save_model_text(svm.model));
    for (const auto& x : D.X) CHECK(sback.predict(x) == svm.model.predict(x));

    try {
        load_model_text("not a model\n");
        FAIL("garbage accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ModelFormat);
    }
}
