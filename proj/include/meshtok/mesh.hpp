#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "meshtok/common.hpp"

namespace meshtok {

/// Fixed connectivity shared by all meshes of one registration, plus the
/// precomputed coarsening hierarchy used by the codec.
///
/// Levels are numbered from fine to coarse: level 0 is the full mesh,
/// level_maps[l] pools level l down to level l+1. Each pooling map
/// partitions the finer level into cells; cell weights sum to 1 so a
/// coarse value is a weighted mean of its fine members. neighborhoods[l]
/// lists, for every vertex of level l, its neighbor indices (self first).
struct MeshTopology {
    struct PoolLevel {
        int coarse_count = 0;
        std::vector<std::vector<int>> cells;      // [coarse] -> fine member ids
        std::vector<std::vector<double>> weights; // matching weights, sum 1 per cell
    };

    int vertex_count = 0;
    std::vector<std::array<int, 3>> faces;
    std::vector<PoolLevel> level_maps;
    std::vector<std::vector<std::vector<int>>> neighborhoods;

    int level_count() const { return static_cast<int>(level_maps.size()) + 1; }
    int level_vertex_count(int level) const;

    // Throws std::invalid_argument on any violated structural invariant.
    void validate() const;

    uint64_t hash() const;
};

using TopologyPtr = std::shared_ptr<const MeshTopology>;

/// Dense vertex array on a fixed topology, in meters.
struct RegisteredMesh {
    TopologyPtr topology;
    Mat vertices;  // vertex_count x 3

    void validate() const;
};

/// A registered mesh with global rotation removed and centroid at the origin.
struct CanonicalMesh : RegisteredMesh {};

/// Convex vertex-to-joint mapping. Each row sums to 1.
struct JointRegressor {
    std::string layout;  // "smpl24", "h36m17", "desk16", or custom
    Mat matrix;          // J x vertex_count

    int joint_count() const { return static_cast<int>(matrix.rows()); }
    void validate() const;
};

struct JointSet {
    Mat joints;  // J x 3, meters
};

/// Weak-perspective camera: uniform scale and 2D translation in
/// normalized image units ([-1,1] per axis).
struct CameraParams {
    double s = 1.0;
    Vec2 t = Vec2::Zero();
};

bool is_rotation(const Mat3& r, double tol = 1e-5);
void require_rotation(const Mat3& r, double tol = 1e-5);

// Adjacency (self loop first, then sorted neighbors) from triangle faces.
std::vector<std::vector<int>> vertex_adjacency(int vertex_count,
                                               const std::vector<std::array<int, 3>>& faces);

/// Builds the coarsening hierarchy for a mesh by farthest-point seeding and
/// nearest-center clustering of the reference vertex positions.
/// coarse_counts lists the vertex count of each coarser level, fine to coarse.
MeshTopology build_topology(const Mat& reference_vertices,
                            const std::vector<std::array<int, 3>>& faces,
                            const std::vector<int>& coarse_counts);

}  // namespace meshtok
