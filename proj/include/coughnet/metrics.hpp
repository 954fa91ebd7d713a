#pragma once

// Confusion matrices and one-vs-rest classification metrics.

#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "coughnet/error.hpp"

namespace coughnet {

/// Rows are actual classes, columns predicted.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::uint64_t> counts;
    std::vector<std::string> label_names;

    std::uint64_t operator()(std::size_t actual, std::size_t predicted) const { return counts[actual * k + predicted]; }
    std::uint64_t& operator()(std::size_t actual, std::size_t predicted) { return counts[actual * k + predicted]; }

    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (auto c : counts) t += c;
        return t;
    }
};

struct ClassMetrics {
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> precision;
    std::optional<double> f1;
};

/// Ratios in [0,1]; a ratio with a zero denominator is absent rather than 0.
struct MetricsReport {
    double accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::string> label_names;

    /// Mean F1 over classes where it is defined.
    std::optional<double> macro_f1() const {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& c : per_class) {
            if (c.f1) {
                sum += *c.f1;
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return sum / static_cast<double>(n);
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<std::pair<int, int>>& pairs, std::size_t k,
                                        std::vector<std::string> label_names = {}) {
    if (k == 0) {
        fail(ErrorCode::InvalidArgument, "confusion matrix needs at least one class");
    }
    if (label_names.empty()) {
        for (std::size_t i = 0; i < k; ++i) label_names.push_back("class" + std::to_string(i));
    }
    if (label_names.size() != k) {
        fail(ErrorCode::InvalidArgument, "label name count differs from class count");
    }
    ConfusionMatrix cm{k, std::vector<std::uint64_t>(k * k, 0), std::move(label_names)};
    for (const auto& [actual, predicted] : pairs) {
        if (actual < 0 || predicted < 0 || static_cast<std::size_t>(actual) >= k ||
            static_cast<std::size_t>(predicted) >= k) {
            fail(ErrorCode::LabelOutOfRange, "pair (" + std::to_string(actual) + "," + std::to_string(predicted) +
                                                 ") outside [0," + std::to_string(k) + ")");
        }
        cm(static_cast<std::size_t>(actual), static_cast<std::size_t>(predicted)) += 1;
    }
    return cm;
}

inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

/// Harmonic mean; absent when both inputs are zero.
inline std::optional<double> f1_score(double precision, double sensitivity) {
    if (precision + sensitivity == 0.0) return std::nullopt;
    return 2.0 * precision * sensitivity / (precision + sensitivity);
}

inline MetricsReport derive_metrics(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) {
        fail(ErrorCode::EmptyMatrix, "confusion matrix has no samples");
    }
    MetricsReport r;
    r.label_names = cm.label_names;
    std::uint64_t diag = 0;
    for (std::size_t c = 0; c < cm.k; ++c) diag += cm(c, c);
    r.accuracy = static_cast<double>(diag) / static_cast<double>(total);
    for (std::size_t c = 0; c < cm.k; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t j = 0; j < cm.k; ++j) {
            row += cm(c, j);
            col += cm(j, c);
        }
        const std::uint64_t tp = cm(c, c);
        const std::uint64_t fn = row - tp;
        const std::uint64_t fp = col - tp;
        const std::uint64_t tn = total - tp - fn - fp;
        ClassMetrics m;
        m.sensitivity = ratio(tp, tp + fn);
        m.specificity = ratio(tn, tn + fp);
        m.precision = ratio(tp, tp + fp);
        if (m.precision && m.sensitivity) m.f1 = f1_score(*m.precision, *m.sensitivity);
        r.per_class.push_back(m);
    }
    return r;
}

/// Row percentages (unrounded). Every row must have at least one sample.
inline std::vector<std::vector<double>> normalize_rows(const ConfusionMatrix& cm) {
    std::vector<std::vector<double>> out(cm.k, std::vector<double>(cm.k, 0.0));
    for (std::size_t a = 0; a < cm.k; ++a) {
        std::uint64_t row = 0;
        for (std::size_t p = 0; p < cm.k; ++p) row += cm(a, p);
        if (row == 0) {
            fail(ErrorCode::EmptyRow, "no samples with actual class '" + cm.label_names[a] + "'");
        }
        for (std::size_t p = 0; p < cm.k; ++p) {
            out[a][p] = 100.0 * static_cast<double>(cm(a, p)) / static_cast<double>(row);
        }
    }
    return out;
}

inline std::string format_percent(const std::optional<double>& v, int decimals = 2) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, *v * 100.0);
    return buf;
}

/// Plain-text report: a metrics table (binary tasks show the positive class,
/// the last label, as a single row) followed by the row-normalized matrix.
inline std::string render_report(const ConfusionMatrix& cm, const MetricsReport& m) {
    std::ostringstream os;
    auto cell = [&](const std::string& s, int w = 14) { os << std::setw(w) << s; };
    os << "Performance metrics (%)\n";
    cell("", 16);
    for (const char* h : {"F1-Score", "Sensitivity", "Specificity", "Precision", "Accuracy"}) cell(h);
    os << '\n';
    auto row = [&](const std::string& name, std::size_t c) {
        cell(name, 16);
        const auto& pc = m.per_class[c];
        cell(format_percent(pc.f1));
        cell(format_percent(pc.sensitivity));
        cell(format_percent(pc.specificity));
        cell(format_percent(pc.precision));
        cell(cm.k == 2 ? format_percent(m.accuracy) : "-");
        os << '\n';
    };
    if (cm.k == 2) {
        row(cm.label_names[1], 1);
    } else {
        cell("Overall", 16);
        for (int i = 0; i < 4; ++i) cell("-");
        cell(format_percent(m.accuracy));
        os << '\n';
        for (std::size_t c = 0; c < cm.k; ++c) row(cm.label_names[c], c);
    }

    os << "\nNormalized confusion matrix (%, rows = actual, columns = predicted)\n";
    cell("", 16);
    for (const auto& n : cm.label_names) cell(n);
    os << '\n';
    for (std::size_t a = 0; a < cm.k; ++a) {
        cell(cm.label_names[a], 16);
        std::uint64_t total = 0;
        for (std::size_t p = 0; p < cm.k; ++p) total += cm(a, p);
        for (std::size_t p = 0; p < cm.k; ++p) {
            cell(total == 0 ? "NA" : format_percent(static_cast<double>(cm(a, p)) / static_cast<double>(total), 1));
        }
        os << '\n';
    }
    return os.str();
}

/// CSV: one row per class plus an "overall" row carrying accuracy and macro F1.
inline std::string report_csv(const MetricsReport& m) {
    auto num = [](const std::optional<double>& v) {
        if (!v) return std::string{};
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", *v * 100.0);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "class,f1,sensitivity,specificity,precision,accuracy\n";
    os << "overall," << num(m.macro_f1()) << ",,,," << num(m.accuracy) << '\n';
    for (std::size_t c = 0; c < m.per_class.size(); ++c) {
        const auto& pc = m.per_class[c];
        os << m.label_names[c] << ',' << num(pc.f1) << ',' << num(pc.sensitivity) << ',' << num(pc.specificity)
           << ',' << num(pc.precision) << ",\n";
    }
    return os.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream os;
    os << "actual";
    for (const auto& n : cm.label_names) os << ',' << n;
    os << '\n';
    for (std::size_t a = 0; a < cm.k; ++a) {
        os << cm.label_names[a];
        for (std::size_t p = 0; p < cm.k; ++p) os << ',' << cm(a, p);
        os << '\n';
    }
    return os.str();
}

} // namespace coughnet
