#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "scsr/error.hpp"

namespace scsr {

/// Natural cubic spline basis with K knots: N1 = 1, N2 = x, and K-2 curvature
/// terms that are linear beyond the boundary knots. Degenerates gracefully to
/// [1, x] when fewer than 3 distinct knots exist.
struct NaturalSplineBasis {
    std::vector<double> knots; // strictly increasing

    static NaturalSplineBasis at_quantiles(std::vector<double> xs, int k) {
        std::sort(xs.begin(), xs.end());
        NaturalSplineBasis basis;
        for (int j = 1; j <= k; ++j) {
            const double level = static_cast<double>(j) / (k + 1);
            const double rank = level * static_cast<double>(xs.size() - 1);
            const std::size_t lo = static_cast<std::size_t>(rank);
            const double frac = rank - static_cast<double>(lo);
            const double q = lo + 1 < xs.size() ? xs[lo] * (1 - frac) + xs[lo + 1] * frac : xs[lo];
            if (basis.knots.empty() || q > basis.knots.back()) basis.knots.push_back(q);
        }
        return basis;
    }

    int size() const { return knots.size() >= 3 ? static_cast<int>(knots.size()) : 2; }

    std::vector<double> eval(double x) const {
        std::vector<double> out;
        out.push_back(1.0);
        out.push_back(x);
        const int k = static_cast<int>(knots.size());
        if (k < 3) return out;
        auto cube = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
        auto d = [&](int j) {
            return (cube(x - knots[static_cast<std::size_t>(j)]) - cube(x - knots[static_cast<std::size_t>(k - 1)])) /
                   (knots[static_cast<std::size_t>(k - 1)] - knots[static_cast<std::size_t>(j)]);
        };
        const double d_last = d(k - 2);
        for (int j = 0; j < k - 2; ++j) out.push_back(d(j) - d_last);
        return out;
    }
};

/// Cubic B-spline basis over evenly spaced knots spanning [lo, hi]; the
/// boundary-span polynomials are extrapolated outside the range (so the basis
/// keeps growing, as in a conventional regression-spline evaluation).
struct BSplineBasis {
    std::vector<double> knots; // full clamped knot vector
    int degree = 3;

    static BSplineBasis evenly_spaced(double lo, double hi, int n_knots, int degree = 3) {
        require(n_knots >= 2, ErrorKind::config, "need at least 2 knots");
        require(hi > lo, ErrorKind::config, "knot range must be non-degenerate");
        BSplineBasis basis;
        basis.degree = degree;
        for (int i = 0; i < degree; ++i) basis.knots.push_back(lo);
        for (int i = 0; i < n_knots; ++i)
            basis.knots.push_back(lo + (hi - lo) * static_cast<double>(i) / (n_knots - 1));
        for (int i = 0; i < degree; ++i) basis.knots.push_back(hi);
        return basis;
    }

    int size() const { return static_cast<int>(knots.size()) - degree - 1; }

    double range_lo() const { return knots.front(); }
    double range_hi() const { return knots.back(); }

    std::vector<double> eval(double x) const {
        const double lo = range_lo();
        const double hi = range_hi();
        if (x >= lo && x <= hi) return eval_inside(x);
        // Extrapolate the boundary-span cubics: a cubic through 4 exact
        // samples of the boundary span is the polynomial itself.
        const bool left = x < lo;
        double span_lo, span_hi;
        if (left) {
            span_lo = lo;
            span_hi = first_interior_above(lo);
        } else {
            span_lo = last_interior_below(hi);
            span_hi = hi;
        }
        std::array<double, 4> ts;
        for (int i = 0; i < 4; ++i)
            ts[static_cast<std::size_t>(i)] = span_lo + (span_hi - span_lo) * (0.15 + 0.7 * i / 3.0);
        std::array<std::vector<double>, 4> samples;
        for (int i = 0; i < 4; ++i) samples[static_cast<std::size_t>(i)] = eval_inside(ts[static_cast<std::size_t>(i)]);
        std::vector<double> out(static_cast<std::size_t>(size()));
        for (int b = 0; b < size(); ++b) {
            // Lagrange extrapolation of the cubic through the 4 samples.
            double acc = 0.0;
            for (int i = 0; i < 4; ++i) {
                double w = samples[static_cast<std::size_t>(i)][static_cast<std::size_t>(b)];
                for (int j = 0; j < 4; ++j) {
                    if (j == i) continue;
                    w *= (x - ts[static_cast<std::size_t>(j)]) /
                         (ts[static_cast<std::size_t>(i)] - ts[static_cast<std::size_t>(j)]);
                }
                acc += w;
            }
            out[static_cast<std::size_t>(b)] = acc;
        }
        return out;
    }

private:
    double first_interior_above(double lo) const {
        for (double t : knots)
            if (t > lo) return t;
        return lo;
    }
    double last_interior_below(double hi) const {
        for (auto it = knots.rbegin(); it != knots.rend(); ++it)
            if (*it < hi) return *it;
        return hi;
    }

    // Cox-de Boor recursion, valid for x within the knot range.
    std::vector<double> eval_inside(double x) const {
        const int n = size();
        std::vector<double> b(static_cast<std::size_t>(n), 0.0);
        const int m = static_cast<int>(knots.size());
        // Degree-0 seeds; the last span is right-closed.
        std::vector<double> work(static_cast<std::size_t>(m - 1), 0.0);
        for (int i = 0; i < m - 1; ++i) {
            const bool last_span = knots[static_cast<std::size_t>(i + 1)] >= range_hi();
            if ((x >= knots[static_cast<std::size_t>(i)] && x < knots[static_cast<std::size_t>(i + 1)]) ||
                (last_span && x == knots[static_cast<std::size_t>(i + 1)] &&
                 knots[static_cast<std::size_t>(i)] < knots[static_cast<std::size_t>(i + 1)]))
                work[static_cast<std::size_t>(i)] = 1.0;
        }
        for (int d = 1; d <= degree; ++d) {
            for (int i = 0; i + d < m - 1; ++i) {
                const double den1 = knots[static_cast<std::size_t>(i + d)] - knots[static_cast<std::size_t>(i)];
                const double den2 = knots[static_cast<std::size_t>(i + d + 1)] - knots[static_cast<std::size_t>(i + 1)];
                double v = 0.0;
                if (den1 > 0.0) v += (x - knots[static_cast<std::size_t>(i)]) / den1 * work[static_cast<std::size_t>(i)];
                if (den2 > 0.0)
                    v += (knots[static_cast<std::size_t>(i + d + 1)] - x) / den2 * work[static_cast<std::size_t>(i + 1)];
                work[static_cast<std::size_t>(i)] = v;
            }
        }
        for (int i = 0; i < n; ++i) b[static_cast<std::size_t>(i)] = work[static_cast<std::size_t>(i)];
        return b;
    }
};

} // namespace scsr
