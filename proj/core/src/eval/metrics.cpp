#include "cipher/eval/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>

#include "cipher/error.hpp"

namespace cipher::eval {

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> decisions) {
    if (labels.size() != decisions.size()) {
        throw ShapeError(fmt::format("confusion: {} labels vs {} decisions", labels.size(), decisions.size()));
    }
    if (labels.empty()) throw DataError("confusion: no samples");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], d = decisions[i];
        if ((y != 0 && y != 1) || (d != 0 && d != 1)) throw DomainError("confusion: labels and decisions must be 0 or 1");
        if (y == 1) {
            (d == 1 ? cm.tp : cm.fn)++;
        } else {
            (d == 1 ? cm.fp : cm.tn)++;
        }
    }
    return cm;
}

Fraction::Fraction(std::int64_t n, std::int64_t d) {
    if (d == 0) throw DomainError("fraction with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    const auto g = std::gcd(n < 0 ? -n : n, d);
    num = g ? n / g : 0;
    den = g ? d / g : 1;
}

Fraction operator+(const Fraction& a, const Fraction& b) {
    const auto l = std::lcm(a.den, b.den);
    return {a.num * (l / a.den) + b.num * (l / b.den), l};
}

Fraction operator*(const Fraction& a, const Fraction& b) {
    const Fraction x(a.num, b.den), y(b.num, a.den);  // cross-reduce first
    return {x.num * y.num, x.den * y.den};
}

Fraction operator/(const Fraction& a, const Fraction& b) {
    if (b.num == 0) throw DomainError("fraction division by zero");
    return a * Fraction(b.den, b.num);
}

std::strong_ordering operator<=>(const Fraction& a, const Fraction& b) {
    return static_cast<__int128>(a.num) * b.den <=> static_cast<__int128>(b.num) * a.den;
}

ExactMetrics exact_metrics(const ConfusionMatrix& cm) {
    if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0) throw DomainError("confusion counts must be nonnegative");
    if (cm.total() == 0) throw DomainError("metrics of an empty confusion matrix");
    ExactMetrics m;
    m.accuracy = Fraction(cm.tp + cm.tn, cm.total());
    m.precision = cm.tp + cm.fp == 0 ? Fraction() : Fraction(cm.tp, cm.tp + cm.fp);
    m.recall = cm.tp + cm.fn == 0 ? Fraction() : Fraction(cm.tp, cm.tp + cm.fn);
    // 2PR / (P + R) simplifies to 2tp / (2tp + fp + fn).
    m.f1 = cm.tp == 0 ? Fraction() : Fraction(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
    return m;
}

Metrics metrics(const ConfusionMatrix& cm) {
    const auto e = exact_metrics(cm);
    return {100.0 * e.accuracy.value(), 100.0 * e.precision.value(), 100.0 * e.recall.value(), 100.0 * e.f1.value()};
}

double round_percent(double v) {
    // half-up on the decimal value; the nudge absorbs binary representation error
    const double scaled = v * 100.0;
    return std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, std::abs(scaled))) / 100.0;
}

std::string format_percent(double v) { return fmt::format("{:.2f}", round_percent(v)); }

}  // namespace cipher::eval
