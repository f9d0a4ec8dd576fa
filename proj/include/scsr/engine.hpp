#pragma once

// Stochastic self-reconstruction: repeated masked inference produces a p x m
// distribution of healthy predictions per vertex; a centile of it is the
// explicit reference, residuals on healthy validation data calibrate sigma,
// and Z = (Y - R) / sigma is the deviation map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "scsr/cohort.hpp"
#include "scsr/error.hpp"
#include "scsr/mask.hpp"
#include "scsr/neural.hpp"
#include "scsr/parallel.hpp"
#include "scsr/rng.hpp"
#include "scsr/stats.hpp"

namespace scsr {

/// Per-vertex distribution of reconstructed thicknesses (mm). Positions that
/// served as inputs in an iteration are missing (NaN) in that column.
struct ReconstructionDistribution {
    int p = 0;
    int m = 0;
    std::vector<float> values; // row-major p x m, NaN = missing
    std::vector<std::uint64_t> seeds;
    std::vector<double> fallback_mm;     // scaler mean, used for uncovered rows
    std::vector<std::uint8_t> uncovered; // rows with no prediction at all

    float at(int v, int i) const {
        return values[static_cast<std::size_t>(v) * static_cast<std::size_t>(m) +
                      static_cast<std::size_t>(i)];
    }

    int uncovered_count() const {
        int c = 0;
        for (auto u : uncovered) c += u;
        return c;
    }
};

struct ScsrParams {
    double sampling_rate = 0.20;
    double centile = 0.95;
    int iterations = 500;
    MaskStrategy strategy = MaskStrategy::vertex;
    std::string excluded_roi; // never sampled when non-empty
};

/// Runs m independent masked reconstructions of one thickness map. Iteration i
/// seeds its generator with base_seed XOR i, so columns are identical whether
/// iterations run serially or in parallel.
inline ReconstructionDistribution reconstruct_distribution(
    const MlpModel<float>& model, const std::vector<float>& thickness, const ScsrParams& params,
    const Parcellation* parc, std::uint64_t base_seed, int threads = 1) {
    const int p = model.p();
    require(static_cast<int>(thickness.size()) == p, ErrorKind::shape,
            "thickness length does not match model");
    require(params.iterations >= 1, ErrorKind::config, "need at least one iteration");

    ReconstructionDistribution dist;
    dist.p = p;
    dist.m = params.iterations;
    dist.values.assign(static_cast<std::size_t>(p) * params.iterations,
                       std::numeric_limits<float>::quiet_NaN());
    dist.seeds.resize(static_cast<std::size_t>(params.iterations));
    dist.fallback_mm = model.scaler.mean;
    dist.uncovered.assign(static_cast<std::size_t>(p), 0);

    const std::vector<float> x_std = standardize<float>(model.scaler, thickness);

    parallel_for(static_cast<std::size_t>(params.iterations), threads,
                 [&](std::size_t i0, std::size_t i1) {
                     for (std::size_t i = i0; i < i1; ++i) {
                         const std::uint64_t seed = base_seed ^ static_cast<std::uint64_t>(i);
                         dist.seeds[i] = seed;
                         Rng rng(seed);
                         const SamplingMask mask = draw_mask(p, params.sampling_rate, params.strategy,
                                                             parc, params.excluded_roi, rng);
                         const std::vector<float> input = apply_mask_input(x_std, mask);
                         const std::vector<float> pred = forward_eval(model, input, 1);
                         for (int v = 0; v < p; ++v) {
                             if (mask.sampled[static_cast<std::size_t>(v)]) continue; // inputs stay missing
                             const double mm = static_cast<double>(pred[static_cast<std::size_t>(v)]) *
                                                   model.scaler.stddev[static_cast<std::size_t>(v)] +
                                               model.scaler.mean[static_cast<std::size_t>(v)];
                             dist.values[static_cast<std::size_t>(v) * static_cast<std::size_t>(params.iterations) + i] =
                                 static_cast<float>(mm);
                         }
                     }
                 });

    for (int v = 0; v < p; ++v) {
        bool any = false;
        for (int i = 0; i < params.iterations && !any; ++i)
            any = !std::isnan(dist.at(v, i));
        dist.uncovered[static_cast<std::size_t>(v)] = any ? 0 : 1;
    }
    return dist;
}

/// Per-row q-th centile over the non-missing values, linear interpolation
/// between order statistics (rank q*(k-1)). Rows with no values fall back to
/// the scaler mean and keep their uncovered flag.
inline std::vector<double> centile_select(const ReconstructionDistribution& dist, double q) {
    require(q > 0.0 && q < 1.0, ErrorKind::config, "centile must be in (0, 1)");
    std::vector<double> reference(static_cast<std::size_t>(dist.p));
    std::vector<double> row;
    row.reserve(static_cast<std::size_t>(dist.m));
    for (int v = 0; v < dist.p; ++v) {
        row.clear();
        for (int i = 0; i < dist.m; ++i) {
            const float x = dist.at(v, i);
            if (!std::isnan(x)) row.push_back(static_cast<double>(x));
        }
        if (row.empty()) {
            reference[static_cast<std::size_t>(v)] = dist.fallback_mm[static_cast<std::size_t>(v)];
            continue;
        }
        std::sort(row.begin(), row.end());
        const double rank = q * static_cast<double>(row.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(rank);
        const double frac = rank - static_cast<double>(lo);
        reference[static_cast<std::size_t>(v)] =
            lo + 1 < row.size() ? row[lo] * (1.0 - frac) + row[lo + 1] * frac : row[lo];
    }
    return reference;
}

/// Per-vertex standard deviation (n divisor, floored at 1e-6) of residuals
/// Y - R over a healthy validation cohort. Subject j derives its iteration
/// seeds from mix_seed(base_seed, j).
inline std::vector<double> residual_sigma(const MlpModel<float>& model, const Cohort& healthy_val,
                                          const ScsrParams& params, const Parcellation* parc,
                                          std::uint64_t base_seed, int threads = 1) {
    const int n = healthy_val.size();
    require(n >= 10, ErrorKind::insufficient_data,
            "sigma estimation needs at least 10 validation subjects");
    const int p = model.p();
    require(healthy_val.p() == p, ErrorKind::shape, "cohort does not match model");

    std::vector<double> residuals(static_cast<std::size_t>(n) * p);
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t j0, std::size_t j1) {
        for (std::size_t j = j0; j < j1; ++j) {
            const auto& subject = healthy_val.subjects[j];
            const ReconstructionDistribution dist = reconstruct_distribution(
                model, subject.thickness, params, parc, mix_seed(base_seed, j), 1);
            const std::vector<double> reference = centile_select(dist, params.centile);
            for (int v = 0; v < p; ++v)
                residuals[j * p + v] = static_cast<double>(subject.thickness[static_cast<std::size_t>(v)]) -
                                       reference[static_cast<std::size_t>(v)];
        }
    });

    std::vector<double> sigma(static_cast<std::size_t>(p));
    for (int v = 0; v < p; ++v) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += residuals[static_cast<std::size_t>(j) * p + v];
        mean /= n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = residuals[static_cast<std::size_t>(j) * p + v] - mean;
            acc += d * d;
        }
        sigma[static_cast<std::size_t>(v)] = std::max(std::sqrt(acc / n), 1e-6);
    }
    return sigma;
}

/// Vertex-wise deviation scores plus ROI summaries.
struct DeviationMap {
    std::vector<float> thickness;  // Y, mm
    std::vector<double> reference; // R, mm
    std::vector<double> sigma;     // mm
    std::vector<double> z;
    double centile = 0.0;
    double sampling_rate = 0.0;
    int iterations = 0;
    std::uint64_t base_seed = 0;
    std::map<std::string, double> roi_means; // includes "cortex"
    std::vector<std::uint8_t> uncovered;
};

/// Z = (Y - R) / sigma with sigma floored at 1e-6; roi_means holds the mean z
/// over each requested ROI plus the whole-cortex mean under "cortex".
inline DeviationMap deviation_map(const MlpModel<float>& model, const std::vector<float>& thickness,
                                  const std::vector<double>& sigma, const ScsrParams& params,
                                  const Parcellation* parc, const std::vector<std::string>& rois,
                                  std::uint64_t base_seed, int threads = 1) {
    const int p = model.p();
    require(static_cast<int>(sigma.size()) == p, ErrorKind::shape, "sigma length mismatch");

    const ReconstructionDistribution dist =
        reconstruct_distribution(model, thickness, params, parc, base_seed, threads);

    DeviationMap map;
    map.thickness = thickness;
    map.reference = centile_select(dist, params.centile);
    map.sigma = sigma;
    map.centile = params.centile;
    map.sampling_rate = params.sampling_rate;
    map.iterations = params.iterations;
    map.base_seed = base_seed;
    map.uncovered = dist.uncovered;

    map.z.resize(static_cast<std::size_t>(p));
    for (int v = 0; v < p; ++v) {
        const double s = std::max(sigma[static_cast<std::size_t>(v)], 1e-6);
        map.z[static_cast<std::size_t>(v)] =
            (static_cast<double>(thickness[static_cast<std::size_t>(v)]) - map.reference[static_cast<std::size_t>(v)]) / s;
    }

    double cortex = 0.0;
    for (double z : map.z) cortex += z;
    map.roi_means["cortex"] = cortex / p;
    for (const auto& name : rois) {
        require(parc != nullptr, ErrorKind::config, "ROI means require a parcellation");
        const std::vector<int> verts = parc->roi_vertices(name);
        require(!verts.empty(), ErrorKind::config, "ROI '" + name + "' is empty");
        double acc = 0.0;
        for (int v : verts) acc += map.z[static_cast<std::size_t>(v)];
        map.roi_means[name] = acc / static_cast<double>(verts.size());
    }
    return map;
}

struct SweepRow {
    double sampling_rate = 0.0;
    double centile = 0.0;
    double rec_error_cn = 0.0; // mean per-subject vertex MSE, CN group
    double rec_error_ad = 0.0; // same for AD
    double auc = 0.0;          // CN vs AD from ROI mean z (higher = more diseased)
};

/// Evaluates a (sampling rate, centile) grid on a validation cohort holding CN
/// and AD subjects. Sigma is re-estimated from the CN subjects for every grid
/// point. The AUC scores are negated z means so that higher means more
/// diseased.
inline std::vector<SweepRow> sweep(const MlpModel<float>& model, const Cohort& val,
                                   const Parcellation* parc, const std::string& roi,
                                   const std::vector<double>& s_grid,
                                   const std::vector<double>& q_grid, int iterations,
                                   MaskStrategy strategy, std::uint64_t base_seed, int threads = 1) {
    const std::vector<int> cn_idx = val.indices_with(diagnosis::CN);
    const std::vector<int> ad_idx = val.indices_with(diagnosis::AD);
    require(!cn_idx.empty() && !ad_idx.empty(), ErrorKind::insufficient_data,
            "sweep needs both CN and AD subjects");
    require(parc != nullptr, ErrorKind::config, "sweep needs a parcellation for the ROI");
    const std::vector<int> roi_verts = parc->roi_vertices(roi);
    require(!roi_verts.empty(), ErrorKind::config, "ROI '" + roi + "' is empty");
    const int p = val.p();

    std::vector<SweepRow> rows;
    std::uint64_t grid_index = 0;
    for (double s : s_grid) {
        for (double q : q_grid) {
            ScsrParams params;
            params.sampling_rate = s;
            params.centile = q;
            params.iterations = iterations;
            params.strategy = strategy;
            const std::uint64_t config_seed = mix_seed(base_seed, 0x53EE7000u + grid_index++);

            // One reconstruction per subject, reused for sigma, errors and z.
            std::vector<std::vector<double>> references(static_cast<std::size_t>(val.size()));
            parallel_for(static_cast<std::size_t>(val.size()), threads,
                         [&](std::size_t j0, std::size_t j1) {
                             for (std::size_t j = j0; j < j1; ++j) {
                                 const ReconstructionDistribution dist = reconstruct_distribution(
                                     model, val.subjects[j].thickness, params, parc,
                                     mix_seed(config_seed, j), 1);
                                 references[j] = centile_select(dist, params.centile);
                             }
                         });

            // Sigma from CN residuals at this configuration.
            std::vector<double> sigma(static_cast<std::size_t>(p));
            {
                std::vector<double> mean(static_cast<std::size_t>(p), 0.0);
                for (int j : cn_idx)
                    for (int v = 0; v < p; ++v)
                        mean[static_cast<std::size_t>(v)] +=
                            static_cast<double>(val.subjects[static_cast<std::size_t>(j)].thickness[static_cast<std::size_t>(v)]) -
                            references[static_cast<std::size_t>(j)][static_cast<std::size_t>(v)];
                for (auto& m : mean) m /= static_cast<double>(cn_idx.size());
                std::vector<double> acc(static_cast<std::size_t>(p), 0.0);
                for (int j : cn_idx)
                    for (int v = 0; v < p; ++v) {
                        const double r =
                            static_cast<double>(val.subjects[static_cast<std::size_t>(j)].thickness[static_cast<std::size_t>(v)]) -
                            references[static_cast<std::size_t>(j)][static_cast<std::size_t>(v)] -
                            mean[static_cast<std::size_t>(v)];
                        acc[static_cast<std::size_t>(v)] += r * r;
                    }
                for (int v = 0; v < p; ++v)
                    sigma[static_cast<std::size_t>(v)] =
                        std::max(std::sqrt(acc[static_cast<std::size_t>(v)] / static_cast<double>(cn_idx.size())), 1e-6);
            }

            auto subject_mse = [&](int j) {
                double acc = 0.0;
                for (int v = 0; v < p; ++v) {
                    const double d =
                        static_cast<double>(val.subjects[static_cast<std::size_t>(j)].thickness[static_cast<std::size_t>(v)]) -
                        references[static_cast<std::size_t>(j)][static_cast<std::size_t>(v)];
                    acc += d * d;
                }
                return acc / p;
            };
            auto roi_mean_z = [&](int j) {
                double acc = 0.0;
                for (int v : roi_verts)
                    acc += (static_cast<double>(val.subjects[static_cast<std::size_t>(j)].thickness[static_cast<std::size_t>(v)]) -
                            references[static_cast<std::size_t>(j)][static_cast<std::size_t>(v)]) /
                           sigma[static_cast<std::size_t>(v)];
                return acc / static_cast<double>(roi_verts.size());
            };

            SweepRow row;
            row.sampling_rate = s;
            row.centile = q;
            for (int j : cn_idx) row.rec_error_cn += subject_mse(j);
            row.rec_error_cn /= static_cast<double>(cn_idx.size());
            for (int j : ad_idx) row.rec_error_ad += subject_mse(j);
            row.rec_error_ad /= static_cast<double>(ad_idx.size());

            std::vector<double> scores;
            std::vector<int> labels;
            for (int j : cn_idx) {
                scores.push_back(-roi_mean_z(j)); // higher score = more diseased
                labels.push_back(0);
            }
            for (int j : ad_idx) {
                scores.push_back(-roi_mean_z(j));
                labels.push_back(1);
            }
            row.auc = roc_auc(scores, labels);
            rows.push_back(row);
        }
    }
    return rows;
}

} // namespace scsr
