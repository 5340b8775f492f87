#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "geodiff/errors.hpp"
#include "geodiff/hsi.hpp"

namespace geodiff {

// C x C confusion counts, rows = truth, columns = prediction. Truth label 0
// (unlabeled) is excluded at construction.
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}

    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (auto v : counts) n += v;
        return n;
    }

    std::uint64_t row_sum(std::size_t i) const {
        std::uint64_t n = 0;
        for (std::size_t j = 0; j < classes; ++j) n += at(i, j);
        return n;
    }

    std::uint64_t col_sum(std::size_t j) const {
        std::uint64_t n = 0;
        for (std::size_t i = 0; i < classes; ++i) n += at(i, j);
        return n;
    }
};

inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth) {
    if (pred.h != truth.h || pred.w != truth.w)
        throw DimensionError("confusion: prediction and truth extents differ");
    const std::size_t classes = std::max(pred.classes, truth.classes);
    ConfusionMatrix m(classes);
    for (std::size_t p = 0; p < truth.labels.size(); ++p) {
        const std::uint16_t t = truth.labels[p];
        if (t == 0) continue;  // unlabeled pixels never score
        const std::uint16_t y = pred.labels[p];
        if (t > classes || y == 0 || y > classes)
            throw DataError("confusion: class id out of range");
        m.at(t - 1, y - 1) += 1;
    }
    return m;
}

namespace metric_detail {

inline void require_counts(const ConfusionMatrix& m) {
    if (m.classes == 0 || m.total() == 0)
        throw DataError("metric over an empty evaluation (no labeled pixels)");
}

}  // namespace metric_detail

// Overall accuracy: trace / total.
inline double oa(const ConfusionMatrix& m) {
    metric_detail::require_counts(m);
    std::uint64_t diag = 0;
    for (std::size_t i = 0; i < m.classes; ++i) diag += m.at(i, i);
    return double(diag) / double(m.total());
}

// Per-class recall; empty for classes absent from the truth.
inline std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& m) {
    std::vector<std::optional<double>> r(m.classes);
    for (std::size_t i = 0; i < m.classes; ++i) {
        const std::uint64_t row = m.row_sum(i);
        if (row > 0) r[i] = double(m.at(i, i)) / double(row);
    }
    return r;
}

// Average accuracy: mean recall over classes present in truth or prediction.
// A class predicted but absent from truth contributes zero recall; classes
// absent from both are excluded from the mean.
inline double aa(const ConfusionMatrix& m) {
    metric_detail::require_counts(m);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.classes; ++i) {
        const std::uint64_t row = m.row_sum(i), col = m.col_sum(i);
        if (row == 0 && col == 0) continue;
        ++n;
        if (row > 0) sum += double(m.at(i, i)) / double(row);
    }
    return sum / double(n);
}

// Cohen's kappa. When chance agreement is total (p_e = 1) the score is 1 for
// a perfect prediction and 0 otherwise.
inline double kappa(const ConfusionMatrix& m) {
    metric_detail::require_counts(m);
    const double n = double(m.total());
    std::uint64_t diag = 0;
    double pe = 0;
    for (std::size_t i = 0; i < m.classes; ++i) {
        diag += m.at(i, i);
        pe += double(m.row_sum(i)) * double(m.col_sum(i));
    }
    pe /= n * n;
    const double po = double(diag) / n;
    if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;
    return (po - pe) / (1.0 - pe);
}

// Mean intersection-over-union over classes present in truth or prediction.
inline double mean_iou(const ConfusionMatrix& m) {
    metric_detail::require_counts(m);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.classes; ++i) {
        const std::uint64_t row = m.row_sum(i), col = m.col_sum(i);
        if (row == 0 && col == 0) continue;
        ++n;
        const std::uint64_t uni = row + col - m.at(i, i);
        sum += double(m.at(i, i)) / double(uni);
    }
    return sum / double(n);
}

// Mean F1 over classes present in truth or prediction.
inline double mean_f1(const ConfusionMatrix& m) {
    metric_detail::require_counts(m);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < m.classes; ++i) {
        const std::uint64_t row = m.row_sum(i), col = m.col_sum(i);
        if (row == 0 && col == 0) continue;
        ++n;
        sum += 2.0 * double(m.at(i, i)) / double(row + col);
    }
    return sum / double(n);
}

struct MetricsSummary {
    std::vector<std::optional<double>> recall;
    double oa = 0, aa = 0, kappa = 0, mean_iou = 0, mean_f1 = 0;
};

inline MetricsSummary summarize(const ConfusionMatrix& m) {
    MetricsSummary s;
    s.recall = per_class_recall(m);
    s.oa = oa(m);
    s.aa = aa(m);
    s.kappa = kappa(m);
    s.mean_iou = mean_iou(m);
    s.mean_f1 = mean_f1(m);
    return s;
}

}  // namespace geodiff
