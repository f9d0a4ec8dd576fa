#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <set>

#include "scsr/cohort.hpp"
#include "scsr/geometry.hpp"

using namespace scsr;

namespace {

struct Fixture {
    IcosphereMesh mesh = build_icosphere(3);
    Parcellation parc;

    Fixture() {
        parc = generate_parcellation(mesh, 34, 7);
        define_roi(parc, {0, 1, 2, 3, 4}, "ad_roi");
    }
};

double cohort_grand_mean(const Cohort& c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : c.subjects) {
        sum = std::accumulate(s.thickness.begin(), s.thickness.end(), sum);
        n += s.thickness.size();
    }
    return sum / static_cast<double>(n);
}

double group_roi_mean(const Cohort& c, const std::vector<int>& roi, const std::string& diag) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : c.subjects) {
        if (s.diagnosis != diag) continue;
        for (int v : roi) sum += s.thickness[static_cast<std::size_t>(v)];
        n += roi.size();
    }
    return sum / static_cast<double>(n);
}

} // namespace

TEST_CASE("degenerate generator yields the constant mean map") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 5}};
    cfg.age_slope_mm_per_year = 0.0;
    cfg.sex_effect_mm = 0.0;
    cfg.latent_scale_mm = 0.0;
    cfg.noise_mm = 0.0;
    cfg.site_offset_mm = 0.0;
    cfg.seed = 1;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    REQUIRE(c.size() == 5);
    for (const auto& s : c.subjects)
        for (float t : s.thickness) REQUIRE(t == Catch::Approx(2.5).margin(1e-7));
}

TEST_CASE("default grand mean stays near the base map") {
    // Monte-Carlo oracle: with centered effects the expectation is exactly
    // mean_map_mm; 2,000 subjects keep the sample mean within +/-0.02.
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 2000}};
    cfg.seed = 11;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    CHECK(cohort_grand_mean(c) == Catch::Approx(2.5).margin(0.02));
}

TEST_CASE("atrophy depth shows up as the ROI group difference") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 300}, {diagnosis::AD, 300}};
    cfg.set_default_atrophy("ad_roi", 0.4, 2);
    cfg.seed = 5;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    const auto roi = fx.parc.roi_vertices("ad_roi");
    const double cn = group_roi_mean(c, roi, diagnosis::CN);
    const double ad = group_roi_mean(c, roi, diagnosis::AD);
    CHECK(cn - ad == Catch::Approx(0.4).margin(0.05));
}

TEST_CASE("atrophy only touches the ROI plus its falloff ring") {
    Fixture fx;
    CohortConfig base;
    base.n_per_group = {{diagnosis::CN, 3}};
    base.seed = 17;
    CohortConfig diseased = base;
    diseased.n_per_group = {{diagnosis::AD, 3}};
    diseased.set_default_atrophy("ad_roi", 0.4, 2);

    const Cohort cn = synth_cohort(base, fx.mesh, fx.parc);
    const Cohort ad = synth_cohort(diseased, fx.mesh, fx.parc);

    const auto roi = fx.parc.roi_vertices("ad_roi");
    const auto hops = detail::bfs_hops(fx.mesh, roi);
    int touched = 0;
    for (int i = 0; i < 3; ++i) {
        for (std::size_t v = 0; v < cn.subjects[0].thickness.size(); ++v) {
            const float a = cn.subjects[static_cast<std::size_t>(i)].thickness[v];
            const float b = ad.subjects[static_cast<std::size_t>(i)].thickness[v];
            if (hops[v] > 2) {
                REQUIRE(a == b); // bit-identical outside ROI + spread ring
            } else if (a != b) {
                ++touched;
            }
        }
    }
    CHECK(touched > 0);
}

TEST_CASE("adjacent correlation exceeds antipodal correlation") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 500}};
    cfg.seed = 23;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    const int p = c.p();
    const int n = c.size();

    std::vector<double> mean(static_cast<std::size_t>(p), 0.0), sd(static_cast<std::size_t>(p), 0.0);
    for (const auto& s : c.subjects)
        for (int v = 0; v < p; ++v) mean[static_cast<std::size_t>(v)] += s.thickness[static_cast<std::size_t>(v)];
    for (auto& m : mean) m /= n;
    for (const auto& s : c.subjects)
        for (int v = 0; v < p; ++v) {
            const double d = s.thickness[static_cast<std::size_t>(v)] - mean[static_cast<std::size_t>(v)];
            sd[static_cast<std::size_t>(v)] += d * d;
        }
    for (auto& v : sd) v = std::sqrt(v / n);

    auto corr = [&](int a, int b) {
        double acc = 0.0;
        for (const auto& s : c.subjects)
            acc += (s.thickness[static_cast<std::size_t>(a)] - mean[static_cast<std::size_t>(a)]) *
                   (s.thickness[static_cast<std::size_t>(b)] - mean[static_cast<std::size_t>(b)]);
        return acc / (n * sd[static_cast<std::size_t>(a)] * sd[static_cast<std::size_t>(b)]);
    };

    // Antipode of a unit vertex is the vertex closest to its negation.
    auto antipode = [&](int v) {
        const auto& x = fx.mesh.vertices[static_cast<std::size_t>(v)];
        int best = 0;
        double best_dot = 2.0;
        for (int u = 0; u < p; ++u) {
            const auto& y = fx.mesh.vertices[static_cast<std::size_t>(u)];
            const double dot = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
            if (dot < best_dot) {
                best_dot = dot;
                best = u;
            }
        }
        return best;
    };

    double adj = 0.0, anti = 0.0;
    int n_adj = 0, n_anti = 0;
    for (int v = 0; v < p; v += 13) {
        for (int u : fx.mesh.adjacency[static_cast<std::size_t>(v)]) {
            adj += std::abs(corr(v, u));
            ++n_adj;
        }
        anti += std::abs(corr(v, antipode(v)));
        ++n_anti;
    }
    CHECK(adj / n_adj > anti / n_anti);
}

TEST_CASE("clamping is inactive under default scales") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 200}};
    cfg.seed = 3;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    std::size_t clamped = 0, total = 0;
    for (const auto& s : c.subjects) {
        for (float t : s.thickness) {
            REQUIRE(t > 0.3f);
            REQUIRE(t < 6.0f);
            if (t <= 0.3 + 2e-6 || t >= 6.0 - 2e-6) ++clamped;
            ++total;
        }
    }
    CHECK(static_cast<double>(clamped) / static_cast<double>(total) < 0.001);
}

TEST_CASE("synthesis is deterministic per seed") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 4}, {diagnosis::AD, 4}};
    cfg.set_default_atrophy("ad_roi", 0.3, 2);
    cfg.seed = 77;
    const Cohort a = synth_cohort(cfg, fx.mesh, fx.parc);
    const Cohort b = synth_cohort(cfg, fx.mesh, fx.parc);
    REQUIRE(a.size() == b.size());
    for (int i = 0; i < a.size(); ++i) {
        CHECK(a.subjects[static_cast<std::size_t>(i)].age == b.subjects[static_cast<std::size_t>(i)].age);
        CHECK(a.subjects[static_cast<std::size_t>(i)].thickness == b.subjects[static_cast<std::size_t>(i)].thickness);
    }
}

TEST_CASE("unknown atrophy ROI is rejected") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::AD, 1}};
    cfg.set_default_atrophy("nonexistent", 0.4, 2);
    CHECK_THROWS_AS(synth_cohort(cfg, fx.mesh, fx.parc), Error);
}

TEST_CASE("split keeps everything in train for fractions (1,0,0)") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 10}};
    cfg.seed = 9;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    const auto parts = split_cohort(c, {1.0, 0.0, 0.0}, 4);
    CHECK(parts[0].size() == 10);
    CHECK(parts[1].size() == 0);
    CHECK(parts[2].size() == 0);
}

TEST_CASE("split is exactly stratified") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 100}, {diagnosis::AD, 100}};
    cfg.seed = 13;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    const auto parts = split_cohort(c, {0.8, 0.2, 0.0}, 21);
    CHECK(parts[0].indices_with(diagnosis::CN).size() == 80);
    CHECK(parts[0].indices_with(diagnosis::AD).size() == 80);
    CHECK(parts[1].indices_with(diagnosis::CN).size() == 20);
    CHECK(parts[1].indices_with(diagnosis::AD).size() == 20);

    // Disjoint and exhaustive.
    std::set<std::string> ids;
    for (const auto& part : parts)
        for (const auto& s : part.subjects) REQUIRE(ids.insert(s.id).second);
    CHECK(ids.size() == 200);
}

TEST_CASE("split is deterministic per seed") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 50}, {diagnosis::MCI, 30}};
    cfg.seed = 19;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    const auto a = split_cohort(c, {0.6, 0.2, 0.2}, 33);
    const auto b = split_cohort(c, {0.6, 0.2, 0.2}, 33);
    for (int s = 0; s < 3; ++s) {
        REQUIRE(a[static_cast<std::size_t>(s)].size() == b[static_cast<std::size_t>(s)].size());
        for (int i = 0; i < a[static_cast<std::size_t>(s)].size(); ++i)
            CHECK(a[static_cast<std::size_t>(s)].subjects[static_cast<std::size_t>(i)].id ==
                  b[static_cast<std::size_t>(s)].subjects[static_cast<std::size_t>(i)].id);
    }
}

TEST_CASE("split validates fractions and coverage") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 10}};
    cfg.seed = 2;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    CHECK_THROWS_AS(split_cohort(c, {0.5, 0.2, 0.2}, 1), Error);

    // A nonzero fraction that receives no subjects from a stratum is an error.
    CohortConfig tiny;
    tiny.n_per_group = {{diagnosis::CN, 1}};
    tiny.seed = 2;
    const Cohort one = synth_cohort(tiny, fx.mesh, fx.parc);
    CHECK_THROWS_AS(split_cohort(one, {0.8, 0.2, 0.0}, 1), Error);
}

TEST_CASE("parcel means average vertices without weighting") {
    Fixture fx;
    CohortConfig cfg;
    cfg.n_per_group = {{diagnosis::CN, 2}};
    cfg.seed = 8;
    const Cohort c = synth_cohort(cfg, fx.mesh, fx.parc);
    const auto means = parcel_means(c, fx.parc);
    REQUIRE(means.size() == 2);
    REQUIRE(means[0].size() == 34);

    // Brute-force check on parcel 0 of subject 0.
    double acc = 0.0;
    int count = 0;
    for (std::size_t v = 0; v < fx.parc.labels.size(); ++v)
        if (fx.parc.labels[v] == 0) {
            acc += c.subjects[0].thickness[v];
            ++count;
        }
    CHECK(means[0][0] == Catch::Approx(acc / count).epsilon(1e-12));
}
