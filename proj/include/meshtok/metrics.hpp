#pragma once

#include "meshtok/mesh.hpp"

namespace meshtok {

enum class CenterMode {
    kCentroid,  // default: mean vertex
    kRootJoint, // joint 0 of a supplied regressor
};

/// Removes translation and global orientation: out = R^-1 (v - center).
/// With CenterMode::kRootJoint a regressor must be supplied; its first row
/// defines the root joint.
CanonicalMesh canonicalize(const RegisteredMesh& mesh, const Mat3& root_rotation,
                           CenterMode mode = CenterMode::kCentroid,
                           const JointRegressor* regressor = nullptr);

/// Rotates a canonical mesh into the camera frame: rows become R * v.
RegisteredMesh apply_orientation(const CanonicalMesh& canonical, const Mat3& rotation);

JointSet regress_joints(const RegisteredMesh& mesh, const JointRegressor& regressor);

/// Mean per-vertex Euclidean distance, millimeters.
double pve(const RegisteredMesh& pred, const RegisteredMesh& gt);

/// Mean per-joint Euclidean distance, millimeters.
double mpjpe(const JointSet& pred, const JointSet& gt);

struct Similarity {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    bool degenerate = false;

    // Applies y = s R x + t to points stored as rows.
    Mat apply(const Mat& points) const;
};

/// Closed-form similarity Procrustes: minimizes ||s R X + t - Y||_F^2 over
/// scale, rotation, and translation (SVD with reflection correction).
/// Degenerate inputs (point covariance rank < 2) fall back to a pure
/// translation and set the degenerate flag.
Similarity procrustes_align(const JointSet& x, const JointSet& y);

/// MPJPE after optimally aligning pred onto gt, millimeters.
double pa_mpjpe(const JointSet& pred, const JointSet& gt);

}  // namespace meshtok
