#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "aptd/features.hpp"

namespace aptd {

struct Dataset {
    std::vector<std::vector<double>> X;
    std::vector<int> y;  // 0 = NORMAL, 1 = SCANNING
    std::vector<std::string> feature_names;

    std::size_t rows() const { return X.size(); }
    std::size_t cols() const { return X.empty() ? feature_names.size() : X.front().size(); }
    void check() const;
    Dataset subset(const std::vector<std::size_t>& rows) const;
    Dataset select_columns(const std::vector<std::size_t>& cols) const;
};

Dataset dataset_from_features(const std::vector<FeatureVector>& rows);

struct Scaler {
    std::vector<double> min;
    std::vector<double> max;
};

Scaler fit_scaler(const std::vector<std::vector<double>>& X);
std::vector<double> apply_scaler(const Scaler& s, const std::vector<double>& row);
std::vector<std::vector<double>> apply_scaler(const Scaler& s, const std::vector<std::vector<double>>& X);

std::vector<double> chi2_scores(const Dataset& D);
std::vector<std::size_t> chi2_select(const Dataset& D, double threshold);
double median(std::vector<double> v);

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;  // leaf: fraction of class 1
    bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;
    double predict_proba(const std::vector<double>& x) const;
    bool operator==(const DecisionTree&) const = default;
};

struct ForestParams {
    int n_trees = 50;
    int max_depth = 12;
    int min_leaf = 1;
    std::uint64_t seed = 1;
};

struct SvmParams {
    double C = 1.0;
    int epochs = 50;
    std::uint64_t seed = 1;
};

using HyperParams = std::variant<ForestParams, SvmParams>;

enum class ModelKind { RANDOM_FOREST, LINEAR_SVM };

struct RandomForest {
    std::vector<DecisionTree> trees;
    double predict_proba(const std::vector<double>& x) const;
    bool operator==(const RandomForest&) const = default;
};

struct LinearSvm {
    std::vector<double> w;
    double b = 0.0;
    double decision(const std::vector<double>& x) const;
    bool operator==(const LinearSvm&) const = default;
};

// Classifier over an already scaled and selected feature space.
struct Classifier {
    std::variant<RandomForest, LinearSvm> impl;
    int predict(const std::vector<double>& x) const;
};

RandomForest fit_forest(const Dataset& D, const ForestParams& hp);
LinearSvm fit_svm(const Dataset& D, const SvmParams& hp);
Classifier fit_classifier(const Dataset& D, const HyperParams& hp);

struct TrainedModel {
    ModelKind kind = ModelKind::RANDOM_FOREST;
    FeatureStage stage = FeatureStage::DISCOVERY;
    std::variant<RandomForest, LinearSvm> params;
    Scaler scaler;
    std::vector<std::size_t> selected;
    std::vector<std::string> feature_names;
    std::map<std::string, std::string> metadata;

    // raw (unscaled, full-width) feature values in
    int predict(const std::vector<double>& raw) const;
    WindowLabel classify(const FeatureVector& fv) const;
};

// The scaler is fitted on D. Without a threshold every feature is kept; otherwise
// chi2_select runs on the scaled data.
TrainedModel train_random_forest(const Dataset& D, const ForestParams& hp,
                                 std::optional<double> chi2_threshold = std::nullopt);
TrainedModel train_linear_svm(const Dataset& D, const SvmParams& hp,
                              std::optional<double> chi2_threshold = std::nullopt);

struct CvResult {
    HyperParams best;
    double mean_score = 0.0;
    std::vector<double> grid_scores;
};

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& y, std::size_t k, std::uint64_t seed);
CvResult kfold_cv(const Dataset& D, std::size_t k, const std::vector<HyperParams>& grid, ModelKind kind,
                  std::uint64_t seed = 1);

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred);

struct Ratio2 {
    double first = 0.0;
    double second = 0.0;
    bool degenerate = false;
};

// (PR, RC)
Ratio2 precision_recall(const ConfusionMatrix& cm);
// (DR, MDR)
Ratio2 detection_rates(const ConfusionMatrix& cm);

// ties go to NORMAL
WindowLabel majority(const std::vector<WindowLabel>& labels);
WindowLabel classify_with_mode(const TrainedModel& model, const std::vector<FeatureVector>& windows, int n);
// Per-position vote over a centred block of n labels, shifted inward at the ends.
std::vector<WindowLabel> smooth_labels(const std::vector<WindowLabel>& labels, int n);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};
// stratified seeded split; test_fraction of each class goes to test
SplitIndices train_test_split(const std::vector<int>& y, double test_fraction, std::uint64_t seed);

struct PipelineReport {
    TrainedModel model;
    CvResult cv;
    ConfusionMatrix test_cm;
    double precision = 0.0;
    double recall = 0.0;
};

// scale -> chi2 -> k-fold CV over grid -> fit -> held-out PR/RC
PipelineReport run_training_pipeline(const Dataset& D, ModelKind kind, const std::vector<HyperParams>& grid,
                                     std::uint64_t seed, std::size_t folds = 10, double test_fraction = 0.2);
std::vector<HyperParams> default_grid(ModelKind kind, std::uint64_t seed);

std::string save_model_text(const TrainedModel& m);
TrainedModel load_model_text(const std::string& text);
void save_model(const std::filesystem::path& path, const TrainedModel& m);
TrainedModel load_model(const std::filesystem::path& path);

std::string_view to_string(ModelKind k);

}  // namespace aptd
