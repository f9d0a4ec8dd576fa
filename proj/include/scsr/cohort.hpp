#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "scsr/error.hpp"
#include "scsr/geometry.hpp"
#include "scsr/rng.hpp"

namespace scsr {

namespace diagnosis {
inline constexpr const char* CN = "CN";
inline constexpr const char* MCI = "MCI";
inline constexpr const char* AD = "AD";
} // namespace diagnosis

struct SubjectRecord {
    std::string id;
    double age = 0.0;
    int sex = 0;  // {0, 1}
    int site = 0;
    std::string diagnosis = diagnosis::CN;
    std::vector<float> thickness; // per-vertex, mm
};

struct Cohort {
    int mesh_order = 0;
    int parcel_count = 0; // 0 when no parcellation is attached
    std::uint64_t config_hash = 0;
    std::vector<SubjectRecord> subjects;

    int p() const { return subjects.empty() ? 0 : static_cast<int>(subjects.front().thickness.size()); }
    int size() const { return static_cast<int>(subjects.size()); }

    std::vector<int> indices_with(const std::string& diag) const {
        std::vector<int> idx;
        for (int i = 0; i < size(); ++i)
            if (subjects[static_cast<std::size_t>(i)].diagnosis == diag) idx.push_back(i);
        return idx;
    }
};

/// ROI-localized thinning: full `depth_mm` inside the ROI, linear falloff over
/// `spread` hops outside it.
struct AtrophySpec {
    std::string roi;
    double depth_mm = 0.0;
    int spread = 2;
};

struct CohortConfig {
    std::map<std::string, int> n_per_group;      // diagnosis -> count
    int mesh_order = 3;
    double mean_map_mm = 2.5;
    double age_slope_mm_per_year = -0.005;
    double sex_effect_mm = 0.05;
    int n_latent = 16;
    double latent_scale_mm = 0.12;
    double noise_mm = 0.08;
    int site_count = 3;
    double site_offset_mm = 0.05;
    double age_min = 50.0;
    double age_max = 80.0;
    std::map<std::string, AtrophySpec> atrophy;  // diagnosis -> lesion
    std::uint64_t seed = 0;

    /// Default disease model: AD gets the full depth, MCI half of it.
    void set_default_atrophy(const std::string& roi, double depth_mm, int spread) {
        atrophy[diagnosis::AD] = {roi, depth_mm, spread};
        atrophy[diagnosis::MCI] = {roi, depth_mm * 0.5, spread};
    }
};

namespace detail {

// Smooth low-rank spatial modes: white noise, 10 neighbor-averaging passes,
// unit RMS, then scaled so the summed latent contribution has a per-vertex
// standard deviation of latent_scale_mm.
inline std::vector<std::vector<double>> latent_loadings(const IcosphereMesh& mesh,
                                                        const CohortConfig& cfg) {
    const int p = mesh.vertex_count();
    std::vector<std::vector<double>> loadings(static_cast<std::size_t>(cfg.n_latent));
    for (int j = 0; j < cfg.n_latent; ++j) {
        Rng rng(mix_seed(cfg.seed, 0x10AD1106u, static_cast<std::uint64_t>(j)));
        std::vector<double> field(static_cast<std::size_t>(p));
        for (auto& x : field) x = rng.normal();
        std::vector<double> next(field.size());
        for (int pass = 0; pass < 10; ++pass) {
            for (int v = 0; v < p; ++v) {
                double sum = field[static_cast<std::size_t>(v)];
                const auto& nb = mesh.adjacency[static_cast<std::size_t>(v)];
                for (int u : nb) sum += field[static_cast<std::size_t>(u)];
                next[static_cast<std::size_t>(v)] = sum / static_cast<double>(1 + nb.size());
            }
            std::swap(field, next);
        }
        double rms = 0.0;
        for (double x : field) rms += x * x;
        rms = std::sqrt(rms / static_cast<double>(p));
        const double scale = cfg.latent_scale_mm / (rms * std::sqrt(static_cast<double>(cfg.n_latent)));
        for (auto& x : field) x *= scale;
        loadings[static_cast<std::size_t>(j)] = std::move(field);
    }
    return loadings;
}

// Atrophy weight per vertex: 1 inside the ROI, (spread+1-d)/(spread+1) at hop
// distance d <= spread outside, 0 beyond.
inline std::vector<double> atrophy_weights(const IcosphereMesh& mesh, const Parcellation& parc,
                                           const AtrophySpec& spec) {
    const std::vector<int> roi = parc.roi_vertices(spec.roi);
    std::vector<double> w(mesh.vertices.size(), 0.0);
    if (roi.empty()) return w;
    const std::vector<int> hops = bfs_hops(mesh, roi);
    for (std::size_t v = 0; v < w.size(); ++v) {
        const int d = hops[v];
        if (d == 0)
            w[v] = 1.0;
        else if (d <= spec.spread)
            w[v] = static_cast<double>(spec.spread + 1 - d) / static_cast<double>(spec.spread + 1);
    }
    return w;
}

} // namespace detail

/// Generates a synthetic cohort with smooth cross-cortex correlation,
/// covariate effects, centered site offsets, and ROI-localized atrophy.
///
/// A subject's healthy map depends only on (cfg.seed, subject index), so two
/// cohorts generated with the same seed but different diagnoses differ only
/// where atrophy is applied. Thickness is clamped to (0.3, 6.0) mm.
inline Cohort synth_cohort(const CohortConfig& cfg, const IcosphereMesh& mesh,
                           const Parcellation& parc) {
    const int p = mesh.vertex_count();
    require(static_cast<int>(parc.labels.size()) == p, ErrorKind::shape,
            "parcellation does not match mesh vertex count");
    require(cfg.n_latent >= 1, ErrorKind::config, "n_latent must be >= 1");
    require(cfg.latent_scale_mm >= 0 && cfg.noise_mm >= 0 && cfg.site_offset_mm >= 0,
            ErrorKind::config, "scales must be non-negative");
    require(cfg.site_count >= 1, ErrorKind::config, "site_count must be >= 1");
    require(cfg.age_max >= cfg.age_min, ErrorKind::config, "age_max must be >= age_min");
    for (const auto& [diag, spec] : cfg.atrophy)
        require(parc.has_roi(spec.roi), ErrorKind::config,
                "atrophy ROI '" + spec.roi + "' (for " + diag + ") not defined in parcellation");

    const auto loadings = detail::latent_loadings(mesh, cfg);
    std::map<std::string, std::vector<double>> atrophy_maps;
    for (const auto& [diag, spec] : cfg.atrophy)
        atrophy_maps[diag] = detail::atrophy_weights(mesh, parc, spec);

    Cohort cohort;
    cohort.mesh_order = mesh.order;
    cohort.parcel_count = parc.parcel_count;

    int subject_index = 0;
    for (const auto& [diag, count] : cfg.n_per_group) {
        require(count >= 0, ErrorKind::config, "negative group count for " + diag);
        const auto atrophy_it = atrophy_maps.find(diag);
        const double depth = cfg.atrophy.count(diag) ? cfg.atrophy.at(diag).depth_mm : 0.0;
        for (int i = 0; i < count; ++i, ++subject_index) {
            Rng rng(mix_seed(cfg.seed, 0x55B1EC70u, static_cast<std::uint64_t>(subject_index)));
            SubjectRecord subject;
            char id[32];
            std::snprintf(id, sizeof id, "subj-%06d", subject_index);
            subject.id = id;
            subject.diagnosis = diag;
            subject.age = rng.uniform(cfg.age_min, cfg.age_max);
            subject.sex = rng.bernoulli(0.5) ? 1 : 0;
            subject.site = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.site_count)));

            std::vector<double> z(static_cast<std::size_t>(cfg.n_latent));
            for (auto& zj : z) zj = rng.normal();

            // Sex and site effects are mean-centered so the population mean
            // stays at mean_map_mm.
            const double base = cfg.mean_map_mm +
                                cfg.age_slope_mm_per_year * (subject.age - 65.0) +
                                cfg.sex_effect_mm * (subject.sex - 0.5) +
                                cfg.site_offset_mm *
                                    (subject.site - (cfg.site_count - 1) / 2.0);

            subject.thickness.resize(static_cast<std::size_t>(p));
            for (int v = 0; v < p; ++v) {
                double t = base;
                for (int j = 0; j < cfg.n_latent; ++j)
                    t += loadings[static_cast<std::size_t>(j)][static_cast<std::size_t>(v)] *
                         z[static_cast<std::size_t>(j)];
                t += cfg.noise_mm * rng.normal();
                if (atrophy_it != atrophy_maps.end())
                    t -= depth * atrophy_it->second[static_cast<std::size_t>(v)];
                t = std::clamp(t, 0.3 + 1e-6, 6.0 - 1e-6);
                subject.thickness[static_cast<std::size_t>(v)] = static_cast<float>(t);
            }
            cohort.subjects.push_back(std::move(subject));
        }
    }
    return cohort;
}

/// Stratified split by diagnosis. Deterministic per seed; strata are shuffled
/// independently and divided by largest-remainder rounding.
inline std::array<Cohort, 3> split_cohort(const Cohort& cohort, std::array<double, 3> fractions,
                                          std::uint64_t seed) {
    double total = 0.0;
    for (double f : fractions) {
        require(f >= 0.0 && f <= 1.0, ErrorKind::split, "fractions must be in [0, 1]");
        total += f;
    }
    require(std::abs(total - 1.0) <= 1e-9, ErrorKind::split, "fractions must sum to 1");

    std::map<std::string, std::vector<int>> strata;
    for (int i = 0; i < cohort.size(); ++i)
        strata[cohort.subjects[static_cast<std::size_t>(i)].diagnosis].push_back(i);

    std::array<std::vector<int>, 3> assigned;
    std::uint64_t stratum_tag = 0;
    for (auto& [diag, members] : strata) {
        Rng rng(mix_seed(seed, 0x57A7A000u + stratum_tag++));
        rng.shuffle(members);

        const int n = static_cast<int>(members.size());
        std::array<int, 3> counts{};
        std::array<double, 3> remainders{};
        int used = 0;
        for (int s = 0; s < 3; ++s) {
            const double want = fractions[static_cast<std::size_t>(s)] * n;
            counts[static_cast<std::size_t>(s)] = static_cast<int>(std::floor(want + 1e-9));
            remainders[static_cast<std::size_t>(s)] = want - counts[static_cast<std::size_t>(s)];
            used += counts[static_cast<std::size_t>(s)];
        }
        while (used < n) {
            int pick = 0;
            for (int s = 1; s < 3; ++s)
                if (remainders[static_cast<std::size_t>(s)] > remainders[static_cast<std::size_t>(pick)] + 1e-12)
                    pick = s;
            ++counts[static_cast<std::size_t>(pick)];
            remainders[static_cast<std::size_t>(pick)] = -1.0;
            ++used;
        }
        for (int s = 0; s < 3; ++s)
            require(fractions[static_cast<std::size_t>(s)] == 0.0 || counts[static_cast<std::size_t>(s)] > 0,
                    ErrorKind::split,
                    "stratum '" + diag + "' leaves split " + std::to_string(s) + " empty");

        int cursor = 0;
        for (int s = 0; s < 3; ++s)
            for (int c = 0; c < counts[static_cast<std::size_t>(s)]; ++c)
                assigned[static_cast<std::size_t>(s)].push_back(members[static_cast<std::size_t>(cursor++)]);
    }

    std::array<Cohort, 3> out;
    for (int s = 0; s < 3; ++s) {
        auto& part = out[static_cast<std::size_t>(s)];
        part.mesh_order = cohort.mesh_order;
        part.parcel_count = cohort.parcel_count;
        part.config_hash = cohort.config_hash;
        std::sort(assigned[static_cast<std::size_t>(s)].begin(), assigned[static_cast<std::size_t>(s)].end());
        for (int i : assigned[static_cast<std::size_t>(s)])
            part.subjects.push_back(cohort.subjects[static_cast<std::size_t>(i)]);
    }
    return out;
}

/// Unweighted vertex average per parcel, one row per subject.
inline std::vector<std::vector<double>> parcel_means(const Cohort& cohort, const Parcellation& parc) {
    require(cohort.p() == static_cast<int>(parc.labels.size()), ErrorKind::shape,
            "cohort/parcellation vertex count mismatch");
    const auto sizes = parc.parcel_sizes();
    std::vector<std::vector<double>> means(static_cast<std::size_t>(cohort.size()));
    for (int i = 0; i < cohort.size(); ++i) {
        std::vector<double> acc(static_cast<std::size_t>(parc.parcel_count), 0.0);
        const auto& t = cohort.subjects[static_cast<std::size_t>(i)].thickness;
        for (std::size_t v = 0; v < t.size(); ++v) acc[static_cast<std::size_t>(parc.labels[v])] += t[v];
        for (int k = 0; k < parc.parcel_count; ++k)
            acc[static_cast<std::size_t>(k)] /= static_cast<double>(sizes[static_cast<std::size_t>(k)]);
        means[static_cast<std::size_t>(i)] = std::move(acc);
    }
    return means;
}

} // namespace scsr
