#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "racr/metrics.hpp"

using namespace racr;

namespace {

MatrixXd random_confusion(int c, Rng& rng) {
    MatrixXd m(c, c);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = double(rng() % 20);
    if (m.sum() == 0) m(0, 0) = 1;
    return m;
}

}  // namespace

TEST_CASE("macro metrics") {
    SUBCASE("identity confusion scores 1 everywhere") {
        MatrixXd identity = MatrixXd::Identity(4, 4) * 7;
        MacroMetrics m = macro_metrics(identity);
        CHECK(m.macro_precision == doctest::Approx(1.0));
        CHECK(m.macro_recall == doctest::Approx(1.0));
        CHECK(m.macro_f1 == doctest::Approx(1.0));
        for (int c = 0; c < 4; ++c) CHECK(m.accuracy(c) == doctest::Approx(1.0));
    }
    SUBCASE("collapsed predictions on balanced truth: macro recall 1/C") {
        MatrixXd confusion = MatrixXd::Zero(4, 4);
        for (int c = 0; c < 4; ++c) confusion(c, 0) = 10;
        MacroMetrics m = macro_metrics(confusion);
        CHECK(m.macro_recall == doctest::Approx(0.25));
    }
    SUBCASE("random confusion matches independent per-class arithmetic") {
        Rng rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            MatrixXd confusion = random_confusion(4, rng);
            MacroMetrics m = macro_metrics(confusion);
            for (int k = 0; k < 4; ++k) {
                double tp = confusion(k, k);
                double fp = confusion.col(k).sum() - tp;
                double fn = confusion.row(k).sum() - tp;
                double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
                double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
                CHECK(m.precision(k) == doctest::Approx(precision).epsilon(1e-12));
                CHECK(m.recall(k) == doctest::Approx(recall).epsilon(1e-12));
                double f1 = precision + recall > 0
                                ? 2 * precision * recall / (precision + recall)
                                : 0.0;
                CHECK(m.f1(k) == doctest::Approx(f1).epsilon(1e-12));
            }
        }
    }
    SUBCASE("empty confusion is rejected") {
        CHECK_THROWS_AS(macro_metrics(MatrixXd::Zero(0, 0)), ValidationError);
        CHECK_THROWS_AS(macro_metrics(MatrixXd::Zero(3, 3)), ValidationError);
    }
}

TEST_CASE("quadratic-weighted kappa") {
    SUBCASE("perfect agreement") {
        CHECK(quadratic_weighted_kappa(MatrixXd::Identity(4, 4) * 5).value ==
              doctest::Approx(1.0));
    }
    SUBCASE("observed equal to expected gives zero") {
        // O = outer product of marginals / total -> independence
        VectorXd row(3), col(3);
        row << 10, 20, 30;
        col << 30, 20, 10;
        MatrixXd o = row * col.transpose() / 60.0;
        CHECK(quadratic_weighted_kappa(o).value == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("hand 3x3 confusion against the direct formula") {
        MatrixXd o(3, 3);
        o << 12, 3, 1, 4, 10, 2, 0, 5, 9;
        double total = o.sum();
        double num = 0, den = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double w = double(i - j) * (i - j) / 4.0;
                num += w * o(i, j);
                den += w * o.row(i).sum() * o.col(j).sum() / total;
            }
        CHECK(quadratic_weighted_kappa(o).value ==
              doctest::Approx(1.0 - num / den).epsilon(1e-12));
    }
    SUBCASE("single observed class on both axes is degenerate") {
        MatrixXd o = MatrixXd::Zero(4, 4);
        o(2, 2) = 11;
        ScalarMetric k = quadratic_weighted_kappa(o);
        CHECK(k.value == 0.0);
        CHECK(k.degenerate);
    }
    SUBCASE("invariant under order-preserving relabeling (reversal)") {
        Rng rng(5);
        MatrixXd o = random_confusion(4, rng);
        MatrixXd reversed = o.reverse();  // both axes flipped
        CHECK(quadratic_weighted_kappa(o).value ==
              doctest::Approx(quadratic_weighted_kappa(reversed).value).epsilon(1e-12));
    }
}

TEST_CASE("multiclass correlation coefficient") {
    SUBCASE("identity gives 1") {
        CHECK(mcc(MatrixXd::Identity(4, 4) * 3).value == doctest::Approx(1.0));
    }
    SUBCASE("collapsed predictions are degenerate zero") {
        MatrixXd o = MatrixXd::Zero(3, 3);
        o(0, 1) = 5;
        o(1, 1) = 5;
        o(2, 1) = 5;
        ScalarMetric m = mcc(o);
        CHECK(m.value == 0.0);
        CHECK(m.degenerate);
    }
    SUBCASE("random confusion matches the R_k correlation oracle") {
        Rng rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            MatrixXd o = random_confusion(4, rng);
            // independent oracle: covariance form over indicator vectors
            double total = o.sum();
            double correct = o.trace();
            double tp_dot = 0, t_sq = 0, p_sq = 0;
            for (int k = 0; k < 4; ++k) {
                double t = o.row(k).sum(), p = o.col(k).sum();
                tp_dot += t * p;
                t_sq += t * t;
                p_sq += p * p;
            }
            double denom = std::sqrt(total * total - p_sq) * std::sqrt(total * total - t_sq);
            if (denom == 0) continue;
            double expected = (correct * total - tp_dot) / denom;
            CHECK(mcc(o).value == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("low- vs high-risk AUC") {
    auto raw = [](double well, double moderate, double poor) {
        VectorXd v(4);
        v << 0.0, well, moderate, poor;
        return v;
    };
    SUBCASE("perfect separation") {
        std::vector<VectorXd> scores{raw(5, 0, 0), raw(4, 0, 0), raw(0, 5, 0), raw(0, 0, 6)};
        std::vector<int> labels{1, 1, 2, 3};
        AucResult auc = auc_low_high(scores, labels, 4);
        REQUIRE(auc.defined);
        CHECK(auc.value == doctest::Approx(1.0));
    }
    SUBCASE("all scores equal gives one half") {
        std::vector<VectorXd> scores(6, VectorXd::Zero(4));
        std::vector<int> labels{1, 1, 1, 2, 3, 2};
        AucResult auc = auc_low_high(scores, labels, 4);
        REQUIRE(auc.defined);
        CHECK(auc.value == doctest::Approx(0.5));
    }
    SUBCASE("random scores match the pairwise oracle within 1e-12") {
        Rng rng(11);
        std::normal_distribution<double> g;
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<VectorXd> scores;
            std::vector<int> labels;
            for (int b = 0; b < 20; ++b) {
                VectorXd v(4);
                for (int c = 0; c < 4; ++c) v(c) = std::round(g(rng) * 2) / 2.0;  // force ties
                scores.push_back(v);
                labels.push_back(int(rng() % 4));
            }
            AucResult auc = auc_low_high(scores, labels, 4);
            if (!auc.defined) continue;
            // O(n^2) oracle over softmax high-risk mass, normal bags excluded
            std::vector<double> mass;
            std::vector<int> pos;
            for (size_t b = 0; b < scores.size(); ++b) {
                if (labels[b] == 0) continue;
                VectorXd e = (scores[b].array() - scores[b].maxCoeff()).exp();
                VectorXd p = e / e.sum();
                mass.push_back(p.tail(2).sum());
                pos.push_back(labels[b] >= 2 ? 1 : 0);
            }
            double wins = 0, pairs = 0;
            for (size_t i = 0; i < mass.size(); ++i)
                for (size_t j = 0; j < mass.size(); ++j) {
                    if (!(pos[i] == 1 && pos[j] == 0)) continue;
                    pairs += 1;
                    if (mass[i] > mass[j]) wins += 1;
                    else if (mass[i] == mass[j]) wins += 0.5;
                }
            CHECK(std::abs(auc.value - wins / pairs) <= 1e-12);
        }
    }
    SUBCASE("missing side is reported undefined") {
        std::vector<VectorXd> scores{raw(1, 0, 0), raw(2, 0, 0)};
        std::vector<int> labels{1, 1};
        CHECK(!auc_low_high(scores, labels, 4).defined);
    }
    SUBCASE("shifting all logits leaves the ranking unchanged") {
        std::vector<VectorXd> scores{raw(3, 1, 0), raw(1, 2, 2), raw(0, 1, 4), raw(2, 2, 0)};
        std::vector<int> labels{1, 2, 3, 1};
        double base = auc_low_high(scores, labels, 4).value;
        for (auto& v : scores) v.array() += 13.5;
        CHECK(auc_low_high(scores, labels, 4).value == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("attention heatmap normalization") {
    VectorXd w(3);
    w << 1, 2, 3;
    Heatmap h = heatmap(w);
    CHECK(!h.degenerate);
    CHECK(h.a(0) == doctest::Approx(0.0));
    CHECK(h.a(1) == doctest::Approx(0.5));
    CHECK(h.a(2) == doctest::Approx(1.0));

    Heatmap flat = heatmap(VectorXd::Constant(4, 0.25));
    CHECK(flat.degenerate);
    CHECK(flat.a.cwiseAbs().maxCoeff() == 0.0);

    Rng rng(3);
    std::normal_distribution<double> g;
    VectorXd random(10);
    for (int i = 0; i < 10; ++i) random(i) = g(rng);
    Heatmap hr = heatmap(random);
    CHECK(hr.a.minCoeff() == doctest::Approx(0.0));
    CHECK(hr.a.maxCoeff() == doctest::Approx(1.0));
}

TEST_CASE("ROI selection") {
    SUBCASE("quarter rule before the probability filter") {
        VectorXd w(8);
        w << 8, 7, 6, 5, 4, 3, 2, 1;
        MatrixXd probs = MatrixXd::Constant(8, 4, 0.9);  // every patch passes
        auto roi = roi_select(w, probs);
        CHECK(roi == std::vector<int>{0, 1});  // ceil(8/4) = 2 attention candidates
    }
    SUBCASE("no confident patch leaves the ROI empty") {
        VectorXd w = VectorXd::LinSpaced(8, 1, 8);
        MatrixXd probs = MatrixXd::Constant(8, 4, 0.25);
        CHECK(roi_select(w, probs).empty());
    }
    SUBCASE("random instances match a sort-and-filter oracle") {
        Rng rng(5);
        std::uniform_real_distribution<double> u(0, 1);
        for (int trial = 0; trial < 10; ++trial) {
            int n = 5 + int(rng() % 20);
            VectorXd w(n);
            MatrixXd probs(n, 4);
            for (int p = 0; p < n; ++p) {
                w(p) = u(rng);
                for (int c = 0; c < 4; ++c) probs(p, c) = u(rng);
            }
            auto roi = roi_select(w, probs);
            CHECK(roi.size() <= size_t((n + 3) / 4));
            std::vector<int> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(),
                      [&](int a, int b) { return w(a) > w(b); });
            std::vector<int> expected;
            for (int k = 0; k < (n + 3) / 4; ++k)
                if (probs.row(order[k]).tail(3).maxCoeff() > 0.5)
                    expected.push_back(order[k]);
            std::sort(expected.begin(), expected.end());
            CHECK(roi == expected);
        }
    }
}

TEST_CASE("localization report") {
    MatrixXd probs = MatrixXd::Constant(10, 4, 0.1);
    for (int p = 0; p < 5; ++p) probs(p, 2) = 0.7;   // region A predicted class 2
    for (int p = 5; p < 10; ++p) probs(p, 1) = 0.7;  // region B predicted class 1
    std::vector<RegionAnnotation> annotations{
        {"A", {0, 1, 2}, GradeLabel{2}},   // correctly predicted
        {"B", {5, 6, 7}, GradeLabel{3}}};  // incorrectly predicted

    SUBCASE("full coverage") {
        auto report = localization({0, 1, 2, 5, 6, 7}, annotations, probs);
        REQUIRE(report.present);
        CHECK(report.correct.regions == 1);
        CHECK(report.correct.sensitivity == doctest::Approx(1.0));
        CHECK(report.incorrect.sensitivity == doctest::Approx(1.0));
        CHECK(report.correct.saliency == doctest::Approx(0.7));      // grade-2 probability
        CHECK(report.incorrect.saliency == doctest::Approx(0.1));    // annotated grade 3
    }
    SUBCASE("empty ROI has zero sensitivity") {
        auto report = localization({}, annotations, probs);
        CHECK(report.correct.sensitivity == 0.0);
        CHECK(report.incorrect.sensitivity == 0.0);
    }
    SUBCASE("single shared patch counts as covered") {
        auto report = localization({2}, annotations, probs);
        CHECK(report.correct.covered == 1);
        CHECK(report.incorrect.covered == 0);
    }
    SUBCASE("no annotations omits the report") {
        CHECK(!localization({0, 1}, {}, probs).present);
    }
}

TEST_CASE("precision-recall curve") {
    std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
    std::vector<int> labels{1, 0, 1, 0};
    PrCurve curve = pr_curve(scores, labels);
    REQUIRE(curve.points.size() == 4);
    CHECK(curve.points[0].precision == doctest::Approx(1.0));
    CHECK(curve.points[0].recall == doctest::Approx(0.5));
    CHECK(curve.points.back().recall == doctest::Approx(1.0));
    // AP = 0.5*1.0 + 0.5*(2/3)
    CHECK(curve.average_precision == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-12));
}
