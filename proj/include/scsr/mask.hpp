#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "scsr/error.hpp"
#include "scsr/geometry.hpp"
#include "scsr/rng.hpp"

namespace scsr {

enum class MaskStrategy { vertex, parcel };

inline const char* mask_strategy_name(MaskStrategy s) {
    return s == MaskStrategy::vertex ? "vertex" : "parcel";
}

inline MaskStrategy mask_strategy_from_name(const std::string& name) {
    if (name == "vertex") return MaskStrategy::vertex;
    if (name == "parcel") return MaskStrategy::parcel;
    fail(ErrorKind::config, "unknown mask strategy '" + name + "'");
}

/// Which vertices are revealed to the model as predictors. Non-sampled
/// vertices are the reconstruction targets.
struct SamplingMask {
    std::vector<std::uint8_t> sampled;
    double rate = 0.0;
    MaskStrategy strategy = MaskStrategy::vertex;
    std::string excluded_roi; // empty when unused

    int sampled_count() const {
        return static_cast<int>(std::accumulate(sampled.begin(), sampled.end(), 0));
    }
    int non_sampled_count() const { return static_cast<int>(sampled.size()) - sampled_count(); }
};

/// Draws a stochastic sampling mask over p vertices.
///
/// Vertex strategy: samples round(s * p_eligible) vertices uniformly without
/// replacement among eligible (non-excluded) vertices, where rounding is
/// half-away-from-zero and the count is raised to at least 1. Parcel strategy:
/// samples whole parcels without replacement until the sampled vertex count
/// first reaches s * p_eligible; parcels overlapping the excluded ROI are
/// never drawn. Excluded-ROI vertices are never sampled under either strategy.
inline SamplingMask draw_mask(int p, double s, MaskStrategy strategy, const Parcellation* parc,
                              const std::string& excluded_roi, Rng& rng) {
    require(s > 0.0 && s < 1.0, ErrorKind::config, "sampling rate must be in (0, 1)");
    require(p >= 2, ErrorKind::config, "need at least 2 vertices");

    SamplingMask mask;
    mask.rate = s;
    mask.strategy = strategy;
    mask.excluded_roi = excluded_roi;
    mask.sampled.assign(static_cast<std::size_t>(p), 0);

    std::vector<std::uint8_t> excluded(static_cast<std::size_t>(p), 0);
    if (!excluded_roi.empty()) {
        require(parc != nullptr, ErrorKind::config, "excluded ROI requires a parcellation");
        require(static_cast<int>(parc->labels.size()) == p, ErrorKind::shape,
                "parcellation does not match vertex count");
        for (int v : parc->roi_vertices(excluded_roi)) excluded[static_cast<std::size_t>(v)] = 1;
    }

    int p_eligible = 0;
    for (auto e : excluded)
        if (!e) ++p_eligible;
    require(p_eligible >= 2, ErrorKind::degenerate_mask, "fewer than 2 eligible vertices");

    if (strategy == MaskStrategy::vertex) {
        int count = static_cast<int>(std::floor(s * p_eligible + 0.5));
        if (count < 1) count = 1;
        require(count < p_eligible, ErrorKind::degenerate_mask,
                "sampling rate leaves no eligible reconstruction targets");

        std::vector<int> eligible;
        eligible.reserve(static_cast<std::size_t>(p_eligible));
        for (int v = 0; v < p; ++v)
            if (!excluded[static_cast<std::size_t>(v)]) eligible.push_back(v);
        // Partial Fisher-Yates: the first `count` slots become the sample.
        for (int i = 0; i < count; ++i) {
            const std::size_t j = static_cast<std::size_t>(i) +
                                  static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(p_eligible - i)));
            std::swap(eligible[static_cast<std::size_t>(i)], eligible[j]);
            mask.sampled[static_cast<std::size_t>(eligible[static_cast<std::size_t>(i)])] = 1;
        }
        return mask;
    }

    // Parcel strategy.
    require(parc != nullptr, ErrorKind::config, "parcel strategy requires a parcellation");
    require(static_cast<int>(parc->labels.size()) == p, ErrorKind::shape,
            "parcellation does not match vertex count");

    std::vector<std::vector<int>> parcel_vertices(static_cast<std::size_t>(parc->parcel_count));
    std::vector<std::uint8_t> parcel_excluded(static_cast<std::size_t>(parc->parcel_count), 0);
    for (int v = 0; v < p; ++v) {
        parcel_vertices[static_cast<std::size_t>(parc->labels[static_cast<std::size_t>(v)])].push_back(v);
        if (excluded[static_cast<std::size_t>(v)])
            parcel_excluded[static_cast<std::size_t>(parc->labels[static_cast<std::size_t>(v)])] = 1;
    }
    std::vector<int> order;
    for (int k = 0; k < parc->parcel_count; ++k)
        if (!parcel_excluded[static_cast<std::size_t>(k)]) order.push_back(k);
    require(!order.empty(), ErrorKind::degenerate_mask, "no eligible parcels");
    rng.shuffle(order);

    const double threshold = s * p_eligible;
    int count = 0;
    for (int k : order) {
        if (count >= threshold) break;
        for (int v : parcel_vertices[static_cast<std::size_t>(k)]) {
            mask.sampled[static_cast<std::size_t>(v)] = 1;
            ++count;
        }
    }
    require(count < p, ErrorKind::degenerate_mask,
            "parcel sampling covered every vertex; no reconstruction targets remain");
    return mask;
}

} // namespace scsr
