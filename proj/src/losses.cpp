#include "meshtok/losses.hpp"

#include <cmath>

#include <json.hpp>

namespace meshtok {

void LossReport::finalize() {
    weighted_total = 0.0;
    for (const auto& [name, w] : weights) {
        double term = 0.0;
        if (name == "mesh_ce")
            term = mesh_ce;
        else if (name == "rot_mse")
            term = rot_mse;
        else if (name == "reproj_l1")
            term = reproj_l1;
        else if (name == "recon_3d")
            term = recon_3d.value_or(0.0);
        else
            require(false, "unknown loss term: " + name);
        weighted_total += w * term;
    }
}

std::string LossReport::to_jsonl() const {
    nlohmann::json j;
    j["mesh_ce"] = mesh_ce;
    j["rot_mse"] = rot_mse;
    j["reproj_l1"] = reproj_l1;
    if (recon_3d) j["recon_3d"] = *recon_3d;
    j["weighted_total"] = weighted_total;
    j["weights"] = weights;
    return j.dump();
}

double cross_entropy_mesh(const Mat& logits, const std::vector<int>& gt_tokens) {
    require(static_cast<long>(gt_tokens.size()) == logits.rows(),
            "cross_entropy_mesh: token count mismatch");
    require(all_finite(logits), "cross_entropy_mesh: logits must be finite");
    double loss = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
        int tgt = gt_tokens[static_cast<size_t>(i)];
        require(tgt >= 0 && tgt < logits.cols(), "cross_entropy_mesh: target index out of range");
        double mx = logits.row(i).maxCoeff();
        double z = (logits.row(i).array() - mx).exp().sum();
        loss += std::log(z) + mx - logits(i, tgt);
    }
    return loss / static_cast<double>(logits.rows());
}

double rotation_mse(const Mat3& pred, const Mat3& gt) {
    return (pred - gt).squaredNorm() / 9.0;
}

Mat project_weak_perspective(const Mat& joints_3d, const CameraParams& cam) {
    require(joints_3d.cols() == 3, "project_weak_perspective: joints must be J x 3");
    require(all_finite(joints_3d), "project_weak_perspective: joints must be finite");
    Mat out(joints_3d.rows(), 2);
    out.col(0) = cam.s * joints_3d.col(0).array() + cam.t.x();
    out.col(1) = cam.s * joints_3d.col(1).array() + cam.t.y();
    return out;
}

double reprojection_l1(const Mat& joints_3d_pred, const CameraParams& cam,
                       const Mat& joints_2d_gt) {
    require(joints_2d_gt.cols() == 2, "reprojection_l1: ground truth must be J x 2");
    require(joints_3d_pred.rows() == joints_2d_gt.rows(), "reprojection_l1: joint count mismatch");
    Mat proj = project_weak_perspective(joints_3d_pred, cam);
    return (proj - joints_2d_gt).array().abs().mean();
}

double recon_3d_loss(const RegisteredMesh& pred, const RegisteredMesh& gt) {
    require(pred.vertices.rows() == gt.vertices.rows(), "recon_3d_loss: vertex count mismatch");
    bool same_topo = pred.topology.get() == gt.topology.get() ||
                     (pred.topology && gt.topology &&
                      pred.topology->vertex_count == gt.topology->vertex_count);
    require(same_topo, "recon_3d_loss: topology mismatch");
    return (pred.vertices - gt.vertices).rowwise().norm().mean();
}

Var project_weak_perspective_t(Tape& t, Var joints_3d, Var cam_s, Var cam_t) {
    Var xy = t.slice_cols(joints_3d, 0, 2);
    return t.add_rowvec(t.mul_scalar(xy, cam_s), cam_t);
}

Var reprojection_l1_t(Tape& t, Var joints_3d, Var cam_s, Var cam_t, const Mat& joints_2d_gt) {
    Var proj = project_weak_perspective_t(t, joints_3d, cam_s, cam_t);
    return t.abs_mean(t.sub(proj, t.constant(joints_2d_gt)));
}

Var rotation_mse_t(Tape& t, Var rot, const Mat3& gt) {
    return t.mean_sq(t.sub(rot, t.constant(gt)));
}

}  // namespace meshtok
