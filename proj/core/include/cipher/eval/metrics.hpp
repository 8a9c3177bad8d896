#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <string>

namespace cipher::eval {

// Positive class is "fake" (label 1).
struct ConfusionMatrix {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> decisions);

// Exact nonnegative rational, kept in lowest terms.
struct Fraction {
    std::int64_t num = 0;
    std::int64_t den = 1;

    Fraction() = default;
    Fraction(std::int64_t n, std::int64_t d);

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Fraction&) const = default;
};

Fraction operator+(const Fraction& a, const Fraction& b);
Fraction operator*(const Fraction& a, const Fraction& b);
Fraction operator/(const Fraction& a, const Fraction& b);
std::strong_ordering operator<=>(const Fraction& a, const Fraction& b);

// Ratios in [0, 1]. A zero denominator yields 0, as does F1 when P = R = 0.
struct ExactMetrics {
    Fraction accuracy;
    Fraction precision;
    Fraction recall;
    Fraction f1;
};

ExactMetrics exact_metrics(const ConfusionMatrix& cm);

// Percentages (0..100) derived from exact_metrics.
struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

Metrics metrics(const ConfusionMatrix& cm);

// Half-up rounding to two decimals, e.g. 68.666... -> "68.67".
std::string format_percent(double v);
double round_percent(double v);

}  // namespace cipher::eval
