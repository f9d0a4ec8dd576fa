#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "scsr/error.hpp"
#include "scsr/rng.hpp"

namespace scsr {

using Vec3 = std::array<double, 3>;

/// Triangulated unit sphere obtained by recursive subdivision of an
/// icosahedron. Vertex count is 10 * 4^order + 2. New midpoint vertices are
/// appended after their parents, so the order-o vertices form a prefix of the
/// order-(o+1) vertex list.
struct IcosphereMesh {
    int order = 0;
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::vector<int>> adjacency; // sorted neighbor lists

    int vertex_count() const { return static_cast<int>(vertices.size()); }
    int face_count() const { return static_cast<int>(faces.size()); }

    std::size_t edge_count() const {
        std::size_t half = 0;
        for (const auto& nb : adjacency) half += nb.size();
        return half / 2;
    }
};

namespace detail {

inline void normalize(Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    v[0] /= n;
    v[1] /= n;
    v[2] /= n;
}

// Golden-ratio icosahedron with a fixed vertex and face ordering. The table
// is the widely used (+-1, +-phi, 0) cyclic construction.
inline void base_icosahedron(std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& faces) {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1},
    };
    for (auto& v : verts) normalize(v);
    faces = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
    };
}

inline std::vector<std::vector<int>> build_adjacency(int n_vertices,
                                                     const std::vector<std::array<int, 3>>& faces) {
    std::vector<std::set<int>> nb(static_cast<std::size_t>(n_vertices));
    for (const auto& f : faces) {
        for (int e = 0; e < 3; ++e) {
            const int a = f[e];
            const int b = f[(e + 1) % 3];
            nb[a].insert(b);
            nb[b].insert(a);
        }
    }
    std::vector<std::vector<int>> adj(nb.size());
    for (std::size_t i = 0; i < nb.size(); ++i) adj[i].assign(nb[i].begin(), nb[i].end());
    return adj;
}

} // namespace detail

/// Builds the icosphere at the given subdivision order. Deterministic; no RNG.
inline IcosphereMesh build_icosphere(int order) {
    require(order >= 0 && order <= 7, ErrorKind::bounds,
            "icosphere order must be in [0, 7], got " + std::to_string(order));

    IcosphereMesh mesh;
    mesh.order = order;
    detail::base_icosahedron(mesh.vertices, mesh.faces);

    for (int level = 0; level < order; ++level) {
        // Midpoints are deduplicated through an edge -> index map so shared
        // edges produce a single vertex.
        std::unordered_map<std::uint64_t, int> midpoint;
        midpoint.reserve(mesh.faces.size() * 3 / 2);
        auto edge_key = [](int a, int b) {
            if (a > b) std::swap(a, b);
            return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
        };
        auto midpoint_of = [&](int a, int b) {
            const std::uint64_t key = edge_key(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Vec3 m = {(mesh.vertices[a][0] + mesh.vertices[b][0]) / 2.0,
                      (mesh.vertices[a][1] + mesh.vertices[b][1]) / 2.0,
                      (mesh.vertices[a][2] + mesh.vertices[b][2]) / 2.0};
            detail::normalize(m);
            const int idx = static_cast<int>(mesh.vertices.size());
            mesh.vertices.push_back(m);
            midpoint.emplace(key, idx);
            return idx;
        };

        std::vector<std::array<int, 3>> next;
        next.reserve(mesh.faces.size() * 4);
        for (const auto& f : mesh.faces) {
            const int ab = midpoint_of(f[0], f[1]);
            const int bc = midpoint_of(f[1], f[2]);
            const int ca = midpoint_of(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        mesh.faces = std::move(next);
    }

    mesh.adjacency = detail::build_adjacency(mesh.vertex_count(), mesh.faces);
    return mesh;
}

/// Synthetic atlas: per-vertex parcel labels plus named parcel-set ROIs.
struct Parcellation {
    std::vector<int> labels;
    int parcel_count = 0;
    std::map<std::string, std::set<int>> roi_sets;

    std::vector<int> parcel_sizes() const {
        std::vector<int> sizes(static_cast<std::size_t>(parcel_count), 0);
        for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
        return sizes;
    }

    bool has_roi(const std::string& name) const { return roi_sets.count(name) != 0; }

    /// Vertex indices belonging to a named ROI (union of its parcels).
    std::vector<int> roi_vertices(const std::string& name) const {
        auto it = roi_sets.find(name);
        require(it != roi_sets.end(), ErrorKind::config, "unknown ROI '" + name + "'");
        std::vector<int> verts;
        for (std::size_t v = 0; v < labels.size(); ++v)
            if (it->second.count(labels[v])) verts.push_back(static_cast<int>(v));
        return verts;
    }
};

namespace detail {

// Hop distances from a set of sources over mesh adjacency.
inline std::vector<int> bfs_hops(const IcosphereMesh& mesh, const std::vector<int>& sources) {
    std::vector<int> dist(mesh.vertices.size(), -1);
    std::deque<int> queue;
    for (int s : sources) {
        dist[static_cast<std::size_t>(s)] = 0;
        queue.push_back(s);
    }
    while (!queue.empty()) {
        const int v = queue.front();
        queue.pop_front();
        for (int u : mesh.adjacency[static_cast<std::size_t>(v)]) {
            if (dist[static_cast<std::size_t>(u)] < 0) {
                dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
                queue.push_back(u);
            }
        }
    }
    return dist;
}

} // namespace detail

/// Parcellation from farthest-point seeds followed by balanced geodesic
/// region growing: the currently smallest parcel (ties -> lower seed index)
/// claims the next adjacent unlabeled vertex. Growing one hop at a time keeps
/// every parcel connected, and the smallest-first rule keeps parcel sizes
/// close to each other. Deterministic for a fixed seed.
inline Parcellation generate_parcellation(const IcosphereMesh& mesh, int k, std::uint64_t seed) {
    const int p = mesh.vertex_count();
    require(k >= 1 && k <= p, ErrorKind::bounds,
            "parcel count must be in [1, " + std::to_string(p) + "], got " + std::to_string(k));

    Parcellation parc;
    parc.parcel_count = k;
    parc.labels.assign(static_cast<std::size_t>(p), 0);
    if (k == 1) return parc;

    // Farthest-point seeding: first seed random, each next seed maximizes the
    // hop distance to the nearest chosen seed (ties -> lowest vertex index).
    Rng rng(mix_seed(seed, 0x9A12CE11u));
    std::vector<int> seeds;
    seeds.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(p))));
    std::vector<int> nearest = detail::bfs_hops(mesh, {seeds[0]});
    while (static_cast<int>(seeds.size()) < k) {
        int best = -1;
        for (int v = 0; v < p; ++v)
            if (best < 0 || nearest[v] > nearest[best]) best = v;
        seeds.push_back(best);
        const std::vector<int> d = detail::bfs_hops(mesh, {best});
        for (int v = 0; v < p; ++v) nearest[v] = std::min(nearest[v], d[v]);
    }

    std::fill(parc.labels.begin(), parc.labels.end(), -1);
    std::vector<std::deque<int>> frontier(static_cast<std::size_t>(k));
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    std::vector<bool> active(static_cast<std::size_t>(k), true);
    for (int s = 0; s < k; ++s) {
        parc.labels[static_cast<std::size_t>(seeds[s])] = s;
        frontier[static_cast<std::size_t>(s)].push_back(seeds[s]);
        sizes[static_cast<std::size_t>(s)] = 1;
    }

    int unlabeled = p - k;
    while (unlabeled > 0) {
        int pick = -1;
        for (int s = 0; s < k; ++s)
            if (active[s] && (pick < 0 || sizes[s] < sizes[pick])) pick = s;
        if (pick < 0) break; // all frontiers exhausted (cannot happen on a connected mesh)

        auto& queue = frontier[static_cast<std::size_t>(pick)];
        int claimed = -1;
        while (!queue.empty() && claimed < 0) {
            const int v = queue.front();
            for (int u : mesh.adjacency[static_cast<std::size_t>(v)]) {
                if (parc.labels[static_cast<std::size_t>(u)] < 0) {
                    claimed = u;
                    break;
                }
            }
            if (claimed < 0) queue.pop_front();
        }
        if (claimed < 0) {
            active[static_cast<std::size_t>(pick)] = false;
            continue;
        }
        parc.labels[static_cast<std::size_t>(claimed)] = pick;
        queue.push_back(claimed);
        ++sizes[static_cast<std::size_t>(pick)];
        --unlabeled;
    }
    return parc;
}

/// Adds (or overwrites) a named ROI as a union of parcels.
inline void define_roi(Parcellation& parc, const std::set<int>& parcel_ids, const std::string& name) {
    for (int id : parcel_ids)
        require(id >= 0 && id < parc.parcel_count, ErrorKind::bounds,
                "ROI '" + name + "' references unknown parcel " + std::to_string(id));
    parc.roi_sets[name] = parcel_ids;
}

/// ASCII PLY export; `scalar` optionally attaches one float property per vertex.
inline void write_ply(const std::string& path, const IcosphereMesh& mesh,
                      const std::vector<double>* scalar = nullptr,
                      const std::string& scalar_name = "value") {
    if (scalar)
        require(scalar->size() == mesh.vertices.size(), ErrorKind::shape,
                "scalar length does not match vertex count");
    std::ofstream out(path);
    require(out.good(), ErrorKind::io_open, "cannot open '" + path + "' for writing");
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertex_count() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (scalar) out << "property float " << scalar_name << "\n";
    out << "element face " << mesh.face_count() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    out.precision(9);
    for (int v = 0; v < mesh.vertex_count(); ++v) {
        const auto& x = mesh.vertices[static_cast<std::size_t>(v)];
        out << x[0] << " " << x[1] << " " << x[2];
        if (scalar) out << " " << (*scalar)[static_cast<std::size_t>(v)];
        out << "\n";
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
    require(out.good(), ErrorKind::io_open, "write failed for '" + path + "'");
}

inline void write_parcellation_csv(const std::string& path, const Parcellation& parc) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::io_open, "cannot open '" + path + "' for writing");
    out << "vertex_id,parcel_id\n";
    for (std::size_t v = 0; v < parc.labels.size(); ++v) out << v << "," << parc.labels[v] << "\n";
    require(out.good(), ErrorKind::io_open, "write failed for '" + path + "'");
}

inline Parcellation read_parcellation_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io_open, "cannot open '" + path + "'");
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::io_parse, "empty parcellation file");
    Parcellation parc;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        require(comma != std::string::npos, ErrorKind::io_parse, "bad parcellation row: " + line);
        const int label = std::stoi(line.substr(comma + 1));
        require(label >= 0, ErrorKind::io_parse, "negative parcel id");
        parc.labels.push_back(label);
        parc.parcel_count = std::max(parc.parcel_count, label + 1);
    }
    return parc;
}

} // namespace scsr
