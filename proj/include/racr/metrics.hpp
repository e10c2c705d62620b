#pragma once

#include <string>
#include <vector>

#include "racr/bag.hpp"
#include "racr/common.hpp"

namespace racr {

struct MacroMetrics {
    VectorXd precision, recall, f1, accuracy;  // per class
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
    std::vector<int> zero_support;  // classes contributing 0 with a warning
};

// One-vs-rest per class, unweighted mean. Throws on an empty confusion.
MacroMetrics macro_metrics(const MatrixXd& confusion);

MatrixXd confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted,
                          int num_classes);

struct ScalarMetric {
    double value = 0;
    bool degenerate = false;
};

// kappa = 1 - sum(w.*O)/sum(w.*E), w_ij = (i-j)^2/(C-1)^2, E from marginals.
// Single observed class on both axes -> 0, flagged.
ScalarMetric quadratic_weighted_kappa(const MatrixXd& confusion);

// Multiclass correlation coefficient; 0 (flagged) when a denominator term vanishes.
ScalarMetric mcc(const MatrixXd& confusion);

struct AucResult {
    double value = 0;
    bool defined = false;
};

// Low- vs high-risk AUC: positives are the top two grades, score is the
// softmax mass they receive; normal bags (class 0 of a 4-class problem) are
// excluded. Rank statistic with midrank tie correction. Undefined when either
// side is empty.
AucResult auc_low_high(const std::vector<VectorXd>& bag_scores, const std::vector<int>& labels,
                       int num_classes);

struct Heatmap {
    VectorXd a;              // in [0,1]
    bool degenerate = false;  // constant input -> all zeros
};

Heatmap heatmap(const VectorXd& w);

// ceil(N/4) highest-attention patches whose non-normal class probability
// exceeds the threshold. With use_predicted_class, the filter reads the
// argmax class's probability instead of the max over non-normal classes.
std::vector<int> roi_select(const VectorXd& w, const MatrixXd& patch_probs,
                            double prob_threshold = 0.5, bool use_predicted_class = false);

struct LocalizationGroup {
    int regions = 0;
    int covered = 0;
    double sensitivity = 0;
    double saliency = 0;  // mean over regions of mean annotated-grade probability
};

struct LocalizationReport {
    bool present = false;
    LocalizationGroup correct, incorrect;  // by region-level predicted grade
};

// A region is covered when it shares >= 1 patch with the ROI and the shared
// fraction reaches min_overlap_fraction. Region-level prediction = majority
// patch argmax.
LocalizationReport localization(const std::vector<int>& roi,
                                const std::vector<RegionAnnotation>& annotations,
                                const MatrixXd& patch_probs,
                                double min_overlap_fraction = 0.0);

struct PrPoint {
    double recall = 0, precision = 0;
};

struct PrCurve {
    std::vector<PrPoint> points;
    double average_precision = 0;
};

// One-vs-rest precision/recall sweep over descending score thresholds.
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& binary_labels);

std::string pr_curves_to_csv(const std::vector<PrCurve>& per_class);

}  // namespace racr
