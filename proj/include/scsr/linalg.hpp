#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "scsr/error.hpp"

namespace scsr {

/// Minimal dense symmetric-positive-definite helpers for the small systems in
/// the baseline fits (row-major storage).
namespace linalg {

/// Cholesky factor L (lower) of a, in place; returns false if not SPD.
inline bool cholesky(std::vector<double>& a, int n) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double sum = a[static_cast<std::size_t>(i) * n + j];
            for (int k = 0; k < j; ++k)
                sum -= a[static_cast<std::size_t>(i) * n + k] * a[static_cast<std::size_t>(j) * n + k];
            if (i == j) {
                if (sum <= 0.0 || !std::isfinite(sum)) return false;
                a[static_cast<std::size_t>(i) * n + j] = std::sqrt(sum);
            } else {
                a[static_cast<std::size_t>(i) * n + j] = sum / a[static_cast<std::size_t>(j) * n + j];
            }
        }
        for (int j = i + 1; j < n; ++j) a[static_cast<std::size_t>(i) * n + j] = 0.0;
    }
    return true;
}

/// Solves L L' x = b given the Cholesky factor.
inline std::vector<double> cholesky_solve(const std::vector<double>& l, int n,
                                          std::vector<double> b) {
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < i; ++k) b[static_cast<std::size_t>(i)] -= l[static_cast<std::size_t>(i) * n + k] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] /= l[static_cast<std::size_t>(i) * n + i];
    }
    for (int i = n - 1; i >= 0; --i) {
        for (int k = i + 1; k < n; ++k) b[static_cast<std::size_t>(i)] -= l[static_cast<std::size_t>(k) * n + i] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(i)] /= l[static_cast<std::size_t>(i) * n + i];
    }
    return b;
}

/// Inverse from the Cholesky factor (columns of the identity solved).
inline std::vector<double> cholesky_inverse(const std::vector<double>& l, int n) {
    std::vector<double> inv(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> e(static_cast<std::size_t>(n), 0.0);
    for (int c = 0; c < n; ++c) {
        std::fill(e.begin(), e.end(), 0.0);
        e[static_cast<std::size_t>(c)] = 1.0;
        const std::vector<double> col = cholesky_solve(l, n, e);
        for (int r = 0; r < n; ++r) inv[static_cast<std::size_t>(r) * n + c] = col[static_cast<std::size_t>(r)];
    }
    return inv;
}

/// Solves the SPD system a x = b; adds `ridge` to the diagonal and retries
/// (flagging via the return) when the plain factorization fails.
struct SolveResult {
    std::vector<double> x;
    bool regularized = false;
};

inline SolveResult solve_spd(std::vector<double> a, int n, const std::vector<double>& b,
                             double ridge = 1e-8) {
    std::vector<double> attempt = a;
    if (cholesky(attempt, n)) return {cholesky_solve(attempt, n, b), false};
    for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + i] += ridge;
    require(cholesky(a, n), ErrorKind::numeric, "matrix not positive definite even with ridge");
    return {cholesky_solve(a, n, b), true};
}

} // namespace linalg
} // namespace scsr
