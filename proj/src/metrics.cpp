#include "racr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace racr {

MatrixXd confusion_matrix(const std::vector<int>& truth, const std::vector<int>& predicted,
                          int num_classes) {
    if (truth.size() != predicted.size())
        throw ValidationError("confusion: label/prediction length mismatch");
    MatrixXd confusion = MatrixXd::Zero(num_classes, num_classes);
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
            predicted[i] >= num_classes)
            throw ValidationError("confusion: class code out of range");
        confusion(truth[i], predicted[i]) += 1;
    }
    return confusion;
}

MacroMetrics macro_metrics(const MatrixXd& confusion) {
    const int c = static_cast<int>(confusion.rows());
    if (c == 0 || confusion.cols() != c) throw ValidationError("macro_metrics: empty confusion");
    if (confusion.minCoeff() < 0) throw ValidationError("macro_metrics: negative counts");
    double total = confusion.sum();
    if (total == 0) throw ValidationError("macro_metrics: confusion sums to zero");

    MacroMetrics m;
    m.precision = m.recall = m.f1 = m.accuracy = VectorXd::Zero(c);
    for (int k = 0; k < c; ++k) {
        double tp = confusion(k, k);
        double support = confusion.row(k).sum();
        double predicted = confusion.col(k).sum();
        if (support == 0) {
            m.zero_support.push_back(k);
            std::cerr << "warning: class " << k << " has zero support; metrics count as 0\n";
        }
        m.precision(k) = predicted > 0 ? tp / predicted : 0.0;
        m.recall(k) = support > 0 ? tp / support : 0.0;
        double pr = m.precision(k) + m.recall(k);
        m.f1(k) = pr > 0 ? 2 * m.precision(k) * m.recall(k) / pr : 0.0;
        double tn = total - support - predicted + tp;
        m.accuracy(k) = (tp + tn) / total;
    }
    m.macro_precision = m.precision.mean();
    m.macro_recall = m.recall.mean();
    m.macro_f1 = m.f1.mean();
    return m;
}

ScalarMetric quadratic_weighted_kappa(const MatrixXd& confusion) {
    const int c = static_cast<int>(confusion.rows());
    if (c < 2) throw ValidationError("kappa: need >= 2 classes");
    double total = confusion.sum();
    if (total == 0) throw ValidationError("kappa: confusion sums to zero");
    VectorXd row_marginal = confusion.rowwise().sum();
    VectorXd col_marginal = confusion.colwise().sum().transpose();

    int observed_rows = (row_marginal.array() > 0).count();
    int observed_cols = (col_marginal.array() > 0).count();
    if (observed_rows <= 1 && observed_cols <= 1) return {0.0, true};

    double weighted_observed = 0, weighted_expected = 0;
    double denom = double(c - 1) * (c - 1);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double w = double(i - j) * (i - j) / denom;
            weighted_observed += w * confusion(i, j);
            weighted_expected += w * row_marginal(i) * col_marginal(j) / total;
        }
    if (weighted_expected == 0) return {0.0, true};
    return {1.0 - weighted_observed / weighted_expected, false};
}

ScalarMetric mcc(const MatrixXd& confusion) {
    const int c = static_cast<int>(confusion.rows());
    double total = confusion.sum();
    if (c == 0 || total == 0) throw ValidationError("mcc: empty confusion");
    VectorXd t = confusion.rowwise().sum();            // truth counts
    VectorXd p = confusion.colwise().sum().transpose();  // prediction counts
    double correct = confusion.trace();

    double numerator = correct * total - t.dot(p);
    double denom_p = total * total - p.squaredNorm();
    double denom_t = total * total - t.squaredNorm();
    if (denom_p <= 0 || denom_t <= 0) return {0.0, true};
    return {numerator / std::sqrt(denom_p * denom_t), false};
}

AucResult auc_low_high(const std::vector<VectorXd>& bag_scores, const std::vector<int>& labels,
                       int num_classes) {
    if (bag_scores.size() != labels.size())
        throw ValidationError("auc: score/label length mismatch");
    const int high_start = num_classes - 2;  // top two grades are high risk
    const bool has_normal = num_classes >= 4;

    std::vector<double> scores;
    std::vector<int> positives;
    for (size_t b = 0; b < bag_scores.size(); ++b) {
        if (has_normal && labels[b] == 0) continue;
        const VectorXd& raw = bag_scores[b];
        VectorXd shifted = (raw.array() - raw.maxCoeff()).exp();
        VectorXd probs = shifted / shifted.sum();
        double high_mass = probs.tail(2).sum();
        scores.push_back(high_mass);
        positives.push_back(labels[b] >= high_start ? 1 : 0);
    }
    size_t n_pos = std::count(positives.begin(), positives.end(), 1);
    size_t n_neg = positives.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return {0.0, false};

    // Midrank statistic: AUC = (R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg).
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        double midrank = (double(i + 1) + double(j)) / 2.0;
        for (size_t k = i; k < j; ++k) rank[order[k]] = midrank;
        i = j;
    }
    double rank_sum = 0;
    for (size_t i = 0; i < rank.size(); ++i)
        if (positives[i]) rank_sum += rank[i];
    double auc = (rank_sum - double(n_pos) * (n_pos + 1) / 2.0) / (double(n_pos) * n_neg);
    return {auc, true};
}

Heatmap heatmap(const VectorXd& w) {
    if (w.size() < 1) throw ValidationError("heatmap: empty attention vector");
    double lo = w.minCoeff(), hi = w.maxCoeff();
    Heatmap h;
    if (hi == lo) {
        h.a = VectorXd::Zero(w.size());
        h.degenerate = true;
        return h;
    }
    h.a = (w.array() - lo) / (hi - lo);
    return h;
}

std::vector<int> roi_select(const VectorXd& w, const MatrixXd& patch_probs,
                            double prob_threshold, bool use_predicted_class) {
    const int n = static_cast<int>(w.size());
    if (patch_probs.rows() != n) throw ValidationError("roi_select: shape mismatch");
    int take = static_cast<int>((n + 3) / 4);  // ceil(N/4)
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (w(a) != w(b)) return w(a) > w(b);
        return a < b;
    });
    std::vector<int> roi;
    for (int k = 0; k < take; ++k) {
        int idx = order[k];
        double prob;
        if (use_predicted_class) {
            int best;
            prob = patch_probs.row(idx).maxCoeff(&best);
        } else {
            // max over non-normal classes (all classes when no normal column)
            int start = patch_probs.cols() >= 4 ? 1 : 0;
            prob = patch_probs.row(idx).tail(patch_probs.cols() - start).maxCoeff();
        }
        if (prob > prob_threshold) roi.push_back(idx);
    }
    std::sort(roi.begin(), roi.end());
    return roi;
}

LocalizationReport localization(const std::vector<int>& roi,
                                const std::vector<RegionAnnotation>& annotations,
                                const MatrixXd& patch_probs, double min_overlap_fraction) {
    LocalizationReport report;
    if (annotations.empty()) return report;
    report.present = true;

    std::vector<char> in_roi(patch_probs.rows(), 0);
    for (int idx : roi)
        if (idx >= 0 && idx < patch_probs.rows()) in_roi[idx] = 1;

    double saliency_sum[2] = {0, 0};
    for (const auto& region : annotations) {
        if (region.patch_indices.empty()) continue;
        std::vector<int> votes(patch_probs.cols(), 0);
        int shared = 0;
        double grade_prob_sum = 0;
        for (int p : region.patch_indices) {
            if (p < 0 || p >= patch_probs.rows())
                throw ValidationError("localization: annotation index out of range");
            if (in_roi[p]) ++shared;
            int best;
            patch_probs.row(p).maxCoeff(&best);
            ++votes[best];
            grade_prob_sum += patch_probs(p, region.region_grade.value);
        }
        int majority = static_cast<int>(
            std::max_element(votes.begin(), votes.end()) - votes.begin());
        bool correct = majority == region.region_grade.value;
        LocalizationGroup& group = correct ? report.correct : report.incorrect;
        ++group.regions;
        double fraction = double(shared) / region.patch_indices.size();
        if (shared >= 1 && fraction >= min_overlap_fraction) ++group.covered;
        saliency_sum[correct ? 0 : 1] += grade_prob_sum / region.patch_indices.size();
    }
    auto finish = [](LocalizationGroup& g, double saliency_total) {
        if (g.regions > 0) {
            g.sensitivity = double(g.covered) / g.regions;
            g.saliency = saliency_total / g.regions;
        }
    };
    finish(report.correct, saliency_sum[0]);
    finish(report.incorrect, saliency_sum[1]);
    return report;
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& binary_labels) {
    if (scores.size() != binary_labels.size())
        throw ValidationError("pr_curve: score/label length mismatch");
    size_t n_pos = std::count(binary_labels.begin(), binary_labels.end(), 1);
    PrCurve curve;
    if (n_pos == 0) return curve;

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    double tp = 0, fp = 0, prev_recall = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (binary_labels[order[k]]) ++tp; else ++fp;
        // emit a point per threshold (after the last of a tied-score run)
        if (k + 1 < order.size() && scores[order[k + 1]] == scores[order[k]]) continue;
        double recall = tp / double(n_pos);
        double precision = tp / (tp + fp);
        curve.points.push_back({recall, precision});
        curve.average_precision += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return curve;
}

std::string pr_curves_to_csv(const std::vector<PrCurve>& per_class) {
    std::ostringstream out;
    out << "class,recall,precision,average_precision\n";
    for (size_t c = 0; c < per_class.size(); ++c)
        for (const auto& point : per_class[c].points) {
            char line[128];
            std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f\n", c, point.recall,
                          point.precision, per_class[c].average_precision);
            out << line;
        }
    return out.str();
}

}  // namespace racr
