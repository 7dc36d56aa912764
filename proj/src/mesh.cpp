#include "meshtok/mesh.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "meshtok/hash.hpp"

namespace meshtok {

int MeshTopology::level_vertex_count(int level) const {
    require(level >= 0 && level < level_count(), "topology level out of range");
    return level == 0 ? vertex_count : level_maps[level - 1].coarse_count;
}

void MeshTopology::validate() const {
    require(vertex_count > 0, "topology: vertex_count must be positive");
    for (const auto& f : faces)
        for (int idx : f)
            require(idx >= 0 && idx < vertex_count, "topology: face index out of range");

    int fine = vertex_count;
    for (size_t l = 0; l < level_maps.size(); ++l) {
        const auto& pm = level_maps[l];
        require(pm.coarse_count > 0 && pm.coarse_count <= fine,
                "topology: invalid coarse count at level " + std::to_string(l));
        require(static_cast<int>(pm.cells.size()) == pm.coarse_count &&
                    pm.cells.size() == pm.weights.size(),
                "topology: pooling map size mismatch at level " + std::to_string(l));
        std::vector<char> seen(fine, 0);
        for (int c = 0; c < pm.coarse_count; ++c) {
            require(!pm.cells[c].empty(), "topology: empty pooling cell");
            require(pm.cells[c].size() == pm.weights[c].size(),
                    "topology: cell/weight size mismatch");
            double wsum = 0.0;
            for (size_t k = 0; k < pm.cells[c].size(); ++k) {
                int v = pm.cells[c][k];
                require(v >= 0 && v < fine, "topology: pooling index out of range");
                require(!seen[v], "topology: pooling map is not a partition");
                seen[v] = 1;
                wsum += pm.weights[c][k];
            }
            require(std::abs(wsum - 1.0) <= 1e-9, "topology: cell weights must sum to 1");
        }
        for (int v = 0; v < fine; ++v)
            require(seen[v], "topology: vertex not covered by pooling map");
        fine = pm.coarse_count;
    }

    require(static_cast<int>(neighborhoods.size()) == level_count(),
            "topology: neighborhood list count must match level count");
    for (int l = 0; l < level_count(); ++l) {
        int n = level_vertex_count(l);
        require(static_cast<int>(neighborhoods[l].size()) == n,
                "topology: neighborhood size mismatch at level " + std::to_string(l));
        for (int i = 0; i < n; ++i)
            for (int j : neighborhoods[l][i])
                require(j >= 0 && j < n, "topology: neighbor index out of range");
    }
    // Symmetry at the full-resolution level.
    const auto& nb0 = neighborhoods[0];
    for (int i = 0; i < vertex_count; ++i) {
        for (int j : nb0[i]) {
            if (j == i) continue;
            bool back = std::find(nb0[j].begin(), nb0[j].end(), i) != nb0[j].end();
            require(back, "topology: level-0 neighborhoods must be symmetric");
        }
    }
}

uint64_t MeshTopology::hash() const {
    Hasher h;
    h.update(int64_t{vertex_count});
    for (const auto& f : faces)
        for (int idx : f) h.update(int64_t{idx});
    for (const auto& pm : level_maps) {
        h.update(int64_t{pm.coarse_count});
        for (int c = 0; c < pm.coarse_count; ++c) {
            for (size_t k = 0; k < pm.cells[c].size(); ++k) {
                h.update(int64_t{pm.cells[c][k]});
                h.update(pm.weights[c][k]);
            }
        }
    }
    for (const auto& level : neighborhoods)
        for (const auto& nb : level)
            for (int j : nb) h.update(int64_t{j});
    return h.digest();
}

void RegisteredMesh::validate() const {
    require(topology != nullptr, "mesh: missing topology");
    require(vertices.rows() == topology->vertex_count && vertices.cols() == 3,
            "mesh: vertex array shape does not match topology");
    require(vertices.allFinite(), "mesh: vertices must be finite");
}

void JointRegressor::validate() const {
    require(matrix.rows() > 0 && matrix.cols() > 0, "regressor: empty matrix");
    for (int i = 0; i < matrix.rows(); ++i) {
        double s = matrix.row(i).sum();
        require(std::abs(s - 1.0) <= 1e-6,
                "regressor: row " + std::to_string(i) + " does not sum to 1");
    }
}

bool is_rotation(const Mat3& r, double tol) {
    Mat3 rtr = r.transpose() * r;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(r.determinant() - 1.0) <= tol;
}

void require_rotation(const Mat3& r, double tol) {
    require(is_rotation(r, tol), "matrix is not a rotation");
}

std::vector<std::vector<int>> vertex_adjacency(int vertex_count,
                                               const std::vector<std::array<int, 3>>& faces) {
    std::vector<std::set<int>> nb(vertex_count);
    for (const auto& f : faces) {
        for (int a = 0; a < 3; ++a) {
            int i = f[a], j = f[(a + 1) % 3];
            if (i != j) {
                nb[i].insert(j);
                nb[j].insert(i);
            }
        }
    }
    std::vector<std::vector<int>> out(vertex_count);
    for (int i = 0; i < vertex_count; ++i) {
        out[i].push_back(i);
        out[i].insert(out[i].end(), nb[i].begin(), nb[i].end());
    }
    return out;
}

namespace {

// Deterministic farthest-point seeding: start at vertex 0, greedily add the
// point farthest from the chosen set.
std::vector<int> farthest_point_seeds(const Mat& pts, int count) {
    int n = static_cast<int>(pts.rows());
    std::vector<int> seeds;
    seeds.reserve(count);
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    int cur = 0;
    seeds.push_back(cur);
    for (int k = 1; k < count; ++k) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            double d = (pts.row(i) - pts.row(cur)).squaredNorm();
            if (d < dist[i]) dist[i] = d;
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        cur = best;
        seeds.push_back(cur);
    }
    return seeds;
}

}  // namespace

MeshTopology build_topology(const Mat& reference_vertices,
                            const std::vector<std::array<int, 3>>& faces,
                            const std::vector<int>& coarse_counts) {
    int n = static_cast<int>(reference_vertices.rows());
    require(n > 0 && reference_vertices.cols() == 3, "build_topology: bad vertex array");

    MeshTopology topo;
    topo.vertex_count = n;
    topo.faces = faces;
    topo.neighborhoods.push_back(vertex_adjacency(n, faces));

    Mat level_pts = reference_vertices;
    for (int coarse : coarse_counts) {
        int fine = static_cast<int>(level_pts.rows());
        require(coarse > 0 && coarse < fine, "build_topology: coarse counts must decrease");

        std::vector<int> seeds = farthest_point_seeds(level_pts, coarse);
        // Assign every fine vertex to its nearest seed.
        std::vector<std::vector<int>> cells(coarse);
        for (int i = 0; i < fine; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < coarse; ++c) {
                double d = (level_pts.row(i) - level_pts.row(seeds[c])).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            cells[best].push_back(i);
        }
        // A seed always belongs to its own cell, so no cell is empty.
        MeshTopology::PoolLevel pm;
        pm.coarse_count = coarse;
        pm.cells = cells;
        pm.weights.resize(coarse);
        Mat coarse_pts(coarse, 3);
        for (int c = 0; c < coarse; ++c) {
            double w = 1.0 / static_cast<double>(cells[c].size());
            pm.weights[c].assign(cells[c].size(), w);
            Vec3 mean = Vec3::Zero();
            for (int v : cells[c]) mean += level_pts.row(v).transpose();
            coarse_pts.row(c) = (mean / cells[c].size()).transpose();
        }

        // Coarse cells are neighbors when any of their fine members are.
        std::vector<int> owner(fine);
        for (int c = 0; c < coarse; ++c)
            for (int v : cells[c]) owner[v] = c;
        std::vector<std::set<int>> cnb(coarse);
        const auto& fine_nb = topo.neighborhoods.back();
        for (int i = 0; i < fine; ++i)
            for (int j : fine_nb[i])
                if (owner[i] != owner[j]) {
                    cnb[owner[i]].insert(owner[j]);
                    cnb[owner[j]].insert(owner[i]);
                }
        std::vector<std::vector<int>> coarse_adj(coarse);
        for (int c = 0; c < coarse; ++c) {
            coarse_adj[c].push_back(c);
            coarse_adj[c].insert(coarse_adj[c].end(), cnb[c].begin(), cnb[c].end());
        }

        topo.level_maps.push_back(std::move(pm));
        topo.neighborhoods.push_back(std::move(coarse_adj));
        level_pts = coarse_pts;
    }

    topo.validate();
    return topo;
}

}  // namespace meshtok
