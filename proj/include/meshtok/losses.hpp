#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meshtok/common.hpp"
#include "meshtok/mesh.hpp"
#include "meshtok/tape.hpp"

namespace meshtok {

// Per-step loss summary. `weights` holds one entry per enabled term;
// weighted_total is their weighted sum.
struct LossReport {
    double mesh_ce = 0.0;
    double rot_mse = 0.0;
    double reproj_l1 = 0.0;
    std::optional<double> recon_3d;
    double weighted_total = 0.0;
    std::map<std::string, double> weights;

    void finalize();
    std::string to_jsonl() const;
};

struct LossWeights {
    double mesh_ce = 1.0;
    double rot_mse = 1.0;
    double reproj_l1 = 1.0;
    double recon_3d = 1.0;
};

// Mean over cells of the negative log-softmax probability of the target.
double cross_entropy_mesh(const Mat& logits, const std::vector<int>& gt_tokens);

// Mean over the 9 entries of the squared difference.
double rotation_mse(const Mat3& pred, const Mat3& gt);

// s * (x, y) + t for every joint row.
Mat project_weak_perspective(const Mat& joints_3d, const CameraParams& cam);

// Mean absolute deviation over all 2*J coordinates.
double reprojection_l1(const Mat& joints_3d_pred, const CameraParams& cam, const Mat& joints_2d_gt);

// Mean per-vertex Euclidean distance in meters.
double recon_3d_loss(const RegisteredMesh& pred, const RegisteredMesh& gt);

// Tape builders used by the trainer and by gradient checks. Shapes:
// joints_3d is J x 3, cam_s 1x1, cam_t 1x2, logits N x S.
Var project_weak_perspective_t(Tape& t, Var joints_3d, Var cam_s, Var cam_t);
Var reprojection_l1_t(Tape& t, Var joints_3d, Var cam_s, Var cam_t, const Mat& joints_2d_gt);
Var rotation_mse_t(Tape& t, Var rot, const Mat3& gt);

}  // namespace meshtok
