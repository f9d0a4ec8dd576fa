#pragma once

// Evaluation statistics: rank-based AUC, Spearman correlation, Wilcoxon tests
// with exact small-sample enumeration, multiple-comparison corrections, a
// permutation median-difference test, and the normal CDF for Z -> centile
// conversion. All functions are pure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "scsr/error.hpp"
#include "scsr/geometry.hpp"
#include "scsr/rng.hpp"

namespace scsr {

inline const std::map<std::string, int>& diagnosis_ordinals() {
    static const std::map<std::string, int> m = {{"CN", 0}, {"MCI", 1}, {"AD", 2}};
    return m;
}

namespace detail {

/// Average ranks (1-based, midranks for ties).
inline std::vector<double> midranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
        i = j + 1;
    }
    return ranks;
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / 2.5066282746310005024; }

// Two-sided tail of a discrete statistic around its null mean, from a normal
// approximation with continuity correction plus the 4th-cumulant Edgeworth
// term (keeps the error against exact enumeration well under 0.01 at the
// exact-branch boundary sizes).
inline double edgeworth_two_sided(double distance, double var, double kappa4) {
    if (var <= 0.0) return 1.0;
    double num = distance - 0.5;
    if (num < 0.0) num = 0.0;
    const double z = num / std::sqrt(var);
    const double gamma2 = kappa4 / (var * var);
    const double cdf = 0.5 * std::erfc(-z / 1.4142135623730950488) -
                       normal_pdf(z) * (z * z * z - 3.0 * z) * gamma2 / 24.0;
    const double sf = std::min(1.0, std::max(0.0, 1.0 - cdf));
    return std::min(1.0, 2.0 * sf);
}

} // namespace detail

/// Standard normal CDF.
inline double z_to_centile(double z) {
    require(std::isfinite(z), ErrorKind::numeric, "z must be finite");
    return 0.5 * std::erfc(-z / 1.4142135623730950488);
}

/// ROC AUC via the Mann-Whitney statistic: P(score_pos > score_neg) + 0.5
/// P(tie). Labels are 0/1 with 1 the positive class.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), ErrorKind::shape, "scores/labels length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg) += 1;
    require(n_pos > 0 && n_neg > 0, ErrorKind::undefined_metric,
            "AUC needs both classes present");
    const std::vector<double> ranks = detail::midranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) rank_sum_pos += ranks[i];
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Unweighted mean of pairwise binary AUCs over all class pairs present; the
/// higher ordinal is the positive class of each pair.
inline double multiclass_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), ErrorKind::shape, "scores/labels length mismatch");
    std::vector<int> classes = labels;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    require(classes.size() >= 2, ErrorKind::undefined_metric, "need at least two classes");

    double acc = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < classes.size(); ++a)
        for (std::size_t b = a + 1; b < classes.size(); ++b) {
            std::vector<double> s;
            std::vector<int> l;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] == classes[a]) {
                    s.push_back(scores[i]);
                    l.push_back(0);
                } else if (labels[i] == classes[b]) {
                    s.push_back(scores[i]);
                    l.push_back(1);
                }
            }
            acc += roc_auc(s, l);
            ++pairs;
        }
    return acc / pairs;
}

/// Spearman rank correlation (midranks for ties).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size(), ErrorKind::shape, "length mismatch");
    require(x.size() >= 3, ErrorKind::insufficient_data, "need at least 3 observations");
    const std::vector<double> rx = detail::midranks(x);
    const std::vector<double> ry = detail::midranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    require(vx > 0.0 && vy > 0.0, ErrorKind::undefined_metric,
            "spearman undefined for constant input");
    return cov / std::sqrt(vx * vy);
}

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    bool exact = false;
};

enum class TestMethod { automatic, exact, approximate };

/// Mann-Whitney/Wilcoxon rank-sum test. U counts pairs where a > b (+0.5 per
/// tie). Exact enumeration of all group assignments when n_a + n_b <= 12,
/// otherwise a normal approximation with tie, continuity and 4th-cumulant
/// corrections. Two-sided p from the distance of U to its null mean.
inline TestResult wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b,
                                    TestMethod method = TestMethod::automatic) {
    require(!a.empty() && !b.empty(), ErrorKind::undefined_metric, "empty group");
    const std::size_t na = a.size(), nb = b.size(), n = na + nb;

    auto u_statistic = [](const std::vector<double>& x, const std::vector<double>& y) {
        double u = 0.0;
        for (double xv : x)
            for (double yv : y) {
                if (xv > yv)
                    u += 1.0;
                else if (xv == yv)
                    u += 0.5;
            }
        return u;
    };
    const double u_obs = u_statistic(a, b);
    const double mu = static_cast<double>(na) * static_cast<double>(nb) / 2.0;

    TestResult result;
    result.statistic = u_obs;

    const bool use_exact = method == TestMethod::exact || (method == TestMethod::automatic && n <= 12);
    if (use_exact) {
        require(n <= 20, ErrorKind::config, "exact rank-sum limited to 20 observations");
        std::vector<double> pooled(a);
        pooled.insert(pooled.end(), b.begin(), b.end());
        std::sort(pooled.begin(), pooled.end());
        std::vector<bool> pick(n, false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na), true);
        std::sort(pick.begin(), pick.end(), std::greater<bool>());
        long total = 0, extreme = 0;
        do {
            std::vector<double> ga, gb;
            for (std::size_t i = 0; i < n; ++i) (pick[i] ? ga : gb).push_back(pooled[i]);
            const double u = u_statistic(ga, gb);
            ++total;
            if (std::abs(u - mu) >= std::abs(u_obs - mu) - 1e-12) ++extreme;
        } while (std::prev_permutation(pick.begin(), pick.end()));
        result.p_value = static_cast<double>(extreme) / static_cast<double>(total);
        result.exact = true;
        return result;
    }

    // U is a shifted without-replacement sum of the pooled midranks, so its
    // tie-corrected variance and fourth cumulant follow from the population
    // moments M2 = sum (r - rbar)^2 and M4 = sum (r - rbar)^4:
    //   Var = na(N-na)/(N(N-1)) M2
    //   mu4 = na(N-na)(N^2-6N*na+N+6na^2)/(N(N-1)(N-2)(N-3)) M4
    //       + 3 na(N-na)(na-1)(N-na-1)/(N(N-1)(N-2)(N-3)) M2^2
    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    const std::vector<double> ranks = detail::midranks(pooled);
    double rbar = 0.0;
    for (double r : ranks) rbar += r;
    rbar /= static_cast<double>(n);
    double m2 = 0.0, m4 = 0.0;
    for (double r : ranks) {
        const double c = r - rbar;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    const double nn = static_cast<double>(n);
    const double ka = static_cast<double>(na);
    const double var = ka * (nn - ka) / (nn * (nn - 1.0)) * m2;
    const double denom = nn * (nn - 1.0) * (nn - 2.0) * (nn - 3.0);
    const double mu4 = ka * (nn - ka) * (nn * nn - 6.0 * nn * ka + nn + 6.0 * ka * ka) / denom * m4 +
                       3.0 * ka * (nn - ka) * (ka - 1.0) * (nn - ka - 1.0) / denom * m2 * m2;
    result.p_value = detail::edgeworth_two_sided(std::abs(u_obs - mu), var, mu4 - 3.0 * var * var);
    return result;
}

/// Wilcoxon signed-rank test on paired differences (zeros dropped, midranks
/// on |d|). W is the positive-rank sum. Exact sign enumeration when the
/// number of nonzero differences is <= 12.
inline TestResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                       TestMethod method = TestMethod::automatic) {
    std::vector<double> d;
    for (double x : diffs)
        if (x != 0.0) d.push_back(x);
    require(!d.empty(), ErrorKind::undefined_metric, "all differences are zero");
    const std::size_t n = d.size();

    std::vector<double> abs_d(n);
    for (std::size_t i = 0; i < n; ++i) abs_d[i] = std::abs(d[i]);
    const std::vector<double> ranks = detail::midranks(abs_d);

    double w_obs = 0.0, rank_total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        rank_total += ranks[i];
        if (d[i] > 0.0) w_obs += ranks[i];
    }
    const double mu = rank_total / 2.0;

    TestResult result;
    result.statistic = w_obs;

    const bool use_exact = method == TestMethod::exact || (method == TestMethod::automatic && n <= 12);
    if (use_exact) {
        require(n <= 20, ErrorKind::config, "exact signed-rank limited to 20 observations");
        long extreme = 0;
        const std::uint64_t patterns = std::uint64_t(1) << n;
        for (std::uint64_t bits = 0; bits < patterns; ++bits) {
            double w = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (bits & (std::uint64_t(1) << i)) w += ranks[i];
            if (std::abs(w - mu) >= std::abs(w_obs - mu) - 1e-12) ++extreme;
        }
        result.p_value = static_cast<double>(extreme) / static_cast<double>(patterns);
        result.exact = true;
        return result;
    }

    // W = sum r_i B_i over independent fair Bernoullis, so Var = sum(r^2)/4
    // and kappa4 = -sum(r^4)/8; both stay exact under midrank ties.
    double var = 0.0, kappa4 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        var += ranks[i] * ranks[i];
        kappa4 -= ranks[i] * ranks[i] * ranks[i] * ranks[i];
    }
    var /= 4.0;
    kappa4 /= 8.0;
    result.p_value = detail::edgeworth_two_sided(std::abs(w_obs - mu), var, kappa4);
    return result;
}

/// p_adj = min(1, p * K).
inline std::vector<double> bonferroni(const std::vector<double>& p_values) {
    const double k = static_cast<double>(p_values.size());
    std::vector<double> adj(p_values.size());
    for (std::size_t i = 0; i < p_values.size(); ++i) {
        require(p_values[i] >= 0.0 && p_values[i] <= 1.0, ErrorKind::config, "p-value outside [0, 1]");
        adj[i] = std::min(1.0, p_values[i] * k);
    }
    return adj;
}

/// Benjamini-Hochberg step-up adjustment.
inline std::vector<double> benjamini_hochberg(const std::vector<double>& p_values) {
    const std::size_t k = p_values.size();
    std::vector<std::size_t> order(k);
    for (std::size_t i = 0; i < k; ++i) {
        require(p_values[i] >= 0.0 && p_values[i] <= 1.0, ErrorKind::config, "p-value outside [0, 1]");
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
    std::vector<double> adj(k);
    double running = 1.0;
    for (std::size_t r = k; r > 0; --r) {
        const std::size_t idx = order[r - 1];
        running = std::min(running, p_values[idx] * static_cast<double>(k) / static_cast<double>(r));
        adj[idx] = running;
    }
    return adj;
}

/// Two-sided permutation test on median(A) - median(B) with the add-one
/// estimator; permutations strictly more extreme than the observed absolute
/// difference are counted. Deterministic per seed.
inline TestResult permutation_median_diff(const std::vector<double>& a, const std::vector<double>& b,
                                          int n_perm, std::uint64_t seed) {
    require(!a.empty() && !b.empty(), ErrorKind::undefined_metric, "empty group");
    require(n_perm >= 1, ErrorKind::config, "need at least one permutation");
    const double obs = detail::median_of(a) - detail::median_of(b);

    std::vector<double> pooled(a);
    pooled.insert(pooled.end(), b.begin(), b.end());
    Rng rng(mix_seed(seed, 0x9E2A117Eu));
    long extreme = 0;
    std::vector<double> ga(a.size()), gb(b.size());
    for (int perm = 0; perm < n_perm; ++perm) {
        rng.shuffle(pooled);
        ga.assign(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(a.size()));
        gb.assign(pooled.begin() + static_cast<std::ptrdiff_t>(a.size()), pooled.end());
        const double stat = detail::median_of(ga) - detail::median_of(gb);
        if (std::abs(stat) > std::abs(obs) + 1e-12) ++extreme;
    }
    TestResult result;
    result.statistic = obs;
    result.p_value = static_cast<double>(1 + extreme) / static_cast<double>(n_perm + 1);
    return result;
}

enum class ErrorLevel { vertex, parcel };

/// Mean squared reconstruction error; parcel level averages vertices within
/// each parcel first.
inline double reconstruction_mse(const std::vector<float>& y, const std::vector<double>& r,
                                 ErrorLevel level, const Parcellation* parc = nullptr) {
    require(y.size() == r.size(), ErrorKind::shape, "length mismatch");
    require(!y.empty(), ErrorKind::shape, "empty input");
    if (level == ErrorLevel::vertex) {
        double acc = 0.0;
        for (std::size_t v = 0; v < y.size(); ++v) {
            const double d = static_cast<double>(y[v]) - r[v];
            acc += d * d;
        }
        return acc / static_cast<double>(y.size());
    }
    require(parc != nullptr && parc->labels.size() == y.size(), ErrorKind::config,
            "parcel-level error needs a matching parcellation");
    const auto sizes = parc->parcel_sizes();
    std::vector<double> ym(static_cast<std::size_t>(parc->parcel_count), 0.0);
    std::vector<double> rm(static_cast<std::size_t>(parc->parcel_count), 0.0);
    for (std::size_t v = 0; v < y.size(); ++v) {
        ym[static_cast<std::size_t>(parc->labels[v])] += y[v];
        rm[static_cast<std::size_t>(parc->labels[v])] += r[v];
    }
    double acc = 0.0;
    for (int k = 0; k < parc->parcel_count; ++k) {
        const double d = (ym[static_cast<std::size_t>(k)] - rm[static_cast<std::size_t>(k)]) /
                         static_cast<double>(sizes[static_cast<std::size_t>(k)]);
        acc += d * d;
    }
    return acc / static_cast<double>(parc->parcel_count);
}

/// Mean absolute reconstruction error, same level conventions as the MSE.
inline double reconstruction_mae(const std::vector<float>& y, const std::vector<double>& r,
                                 ErrorLevel level, const Parcellation* parc = nullptr) {
    require(y.size() == r.size(), ErrorKind::shape, "length mismatch");
    require(!y.empty(), ErrorKind::shape, "empty input");
    if (level == ErrorLevel::vertex) {
        double acc = 0.0;
        for (std::size_t v = 0; v < y.size(); ++v) acc += std::abs(static_cast<double>(y[v]) - r[v]);
        return acc / static_cast<double>(y.size());
    }
    require(parc != nullptr && parc->labels.size() == y.size(), ErrorKind::config,
            "parcel-level error needs a matching parcellation");
    const auto sizes = parc->parcel_sizes();
    std::vector<double> ym(static_cast<std::size_t>(parc->parcel_count), 0.0);
    std::vector<double> rm(static_cast<std::size_t>(parc->parcel_count), 0.0);
    for (std::size_t v = 0; v < y.size(); ++v) {
        ym[static_cast<std::size_t>(parc->labels[v])] += y[v];
        rm[static_cast<std::size_t>(parc->labels[v])] += r[v];
    }
    double acc = 0.0;
    for (int k = 0; k < parc->parcel_count; ++k)
        acc += std::abs(ym[static_cast<std::size_t>(k)] - rm[static_cast<std::size_t>(k)]) /
               static_cast<double>(sizes[static_cast<std::size_t>(k)]);
    return acc / static_cast<double>(parc->parcel_count);
}

} // namespace scsr
