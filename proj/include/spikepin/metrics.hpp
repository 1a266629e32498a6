#pragma once

// Confusion matrix, per-class metrics and precision-recall sweep.
// PinOut is the positive class throughout.

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "spikepin/errors.hpp"
#include "spikepin/image.hpp"

namespace spikepin::metrics {

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }

    void add(Label truth, Label predicted) {
        const bool pos = truth == Label::PinOut, pred_pos = predicted == Label::PinOut;
        if (pos && pred_pos) ++tp;
        else if (pos) ++fn;
        else if (pred_pos) ++fp;
        else ++tn;
    }

    bool operator==(const ConfusionMatrix&) const = default;
};

struct ClassMetrics {
    double precision = 0, recall = 0, f1 = 0;
    std::size_t support = 0;
};

struct Metrics {
    double accuracy = 0;
    ClassMetrics out;  // positive class
    ClassMetrics ok;
};

inline double safe_div(double a, double b) { return b > 0 ? a / b : 0.0; }

inline double f1_score(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline Metrics compute_metrics(const ConfusionMatrix& m) {
    Metrics r;
    r.accuracy = safe_div(static_cast<double>(m.tp + m.tn), static_cast<double>(m.total()));
    r.out.precision = safe_div(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fp));
    r.out.recall = safe_div(static_cast<double>(m.tp), static_cast<double>(m.tp + m.fn));
    r.out.f1 = f1_score(r.out.precision, r.out.recall);
    r.out.support = m.tp + m.fn;
    r.ok.precision = safe_div(static_cast<double>(m.tn), static_cast<double>(m.tn + m.fn));
    r.ok.recall = safe_div(static_cast<double>(m.tn), static_cast<double>(m.tn + m.fp));
    r.ok.f1 = f1_score(r.ok.precision, r.ok.recall);
    r.ok.support = m.tn + m.fp;
    return r;
}

inline ConfusionMatrix confusion(std::span<const Label> truth, std::span<const Label> predicted) {
    if (truth.size() != predicted.size()) throw InvalidInput("confusion: label arrays differ in length");
    ConfusionMatrix m;
    for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
    return m;
}

struct PrPoint {
    double threshold = 0;  // predict PinOut when score >= threshold
    double precision = 0;
    double recall = 0;
};

struct PrCurve {
    std::vector<PrPoint> points;  // thresholds descending, so recall is non-decreasing along the list
    double average_precision = 0;
};

// Sweeps every distinct score as a threshold. AP = sum (R_i - R_{i-1}) P_i.
inline PrCurve pr_curve(std::span<const double> scores, std::span<const Label> truth) {
    if (scores.size() != truth.size()) throw InvalidInput("pr_curve: scores and labels differ in length");
    const auto positives = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), Label::PinOut));
    if (positives == 0 || positives == truth.size())
        throw InvalidInput("pr_curve: average precision is undefined for single-class input");

    std::vector<std::size_t> idx(scores.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    PrCurve curve;
    std::size_t tp = 0, fp = 0;
    double prev_recall = 0;
    for (std::size_t i = 0; i < idx.size();) {
        const double thr = scores[idx[i]];
        for (; i < idx.size() && scores[idx[i]] == thr; ++i) (truth[idx[i]] == Label::PinOut ? tp : fp) += 1;
        PrPoint p;
        p.threshold = thr;
        p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        p.recall = static_cast<double>(tp) / static_cast<double>(positives);
        curve.average_precision += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
        curve.points.push_back(p);
    }
    return curve;
}

}  // namespace spikepin::metrics
