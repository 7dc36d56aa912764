#include "meshtok/metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>

namespace meshtok {

namespace {

Vec3 center_point(const RegisteredMesh& mesh, CenterMode mode, const JointRegressor* regressor) {
    if (mode == CenterMode::kRootJoint) {
        require(regressor != nullptr, "canonicalize: root-joint centering needs a regressor");
        require(regressor->matrix.cols() == mesh.vertices.rows(),
                "canonicalize: regressor does not match topology");
        return (regressor->matrix.row(0) * mesh.vertices).transpose();
    }
    return mesh.vertices.colwise().mean().transpose();
}

double mean_row_distance_mm(const Mat& a, const Mat& b) {
    double acc = 0.0;
    for (int i = 0; i < a.rows(); ++i) acc += (a.row(i) - b.row(i)).norm();
    return acc / static_cast<double>(a.rows()) * 1000.0;
}

}  // namespace

CanonicalMesh canonicalize(const RegisteredMesh& mesh, const Mat3& root_rotation,
                           CenterMode mode, const JointRegressor* regressor) {
    mesh.validate();
    require_rotation(root_rotation);
    Vec3 c = center_point(mesh, mode, regressor);
    CanonicalMesh out;
    out.topology = mesh.topology;
    // Rows transform as R^-1 (v - c); with row vectors that is (v - c) R.
    out.vertices = (mesh.vertices.rowwise() - c.transpose()) * root_rotation;
    return out;
}

RegisteredMesh apply_orientation(const CanonicalMesh& canonical, const Mat3& rotation) {
    canonical.validate();
    require_rotation(rotation);
    RegisteredMesh out;
    out.topology = canonical.topology;
    out.vertices = canonical.vertices * rotation.transpose();
    return out;
}

JointSet regress_joints(const RegisteredMesh& mesh, const JointRegressor& regressor) {
    mesh.validate();
    require(regressor.matrix.cols() == mesh.vertices.rows(),
            "regress_joints: regressor column count must equal vertex count");
    return JointSet{regressor.matrix * mesh.vertices};
}

double pve(const RegisteredMesh& pred, const RegisteredMesh& gt) {
    require(pred.topology != nullptr && gt.topology != nullptr, "pve: missing topology");
    require(pred.topology->hash() == gt.topology->hash() ||
                pred.topology.get() == gt.topology.get(),
            "pve: topology mismatch");
    require(pred.vertices.rows() == gt.vertices.rows(), "pve: vertex count mismatch");
    return mean_row_distance_mm(pred.vertices, gt.vertices);
}

double mpjpe(const JointSet& pred, const JointSet& gt) {
    require(pred.joints.rows() == gt.joints.rows(), "mpjpe: joint count mismatch");
    return mean_row_distance_mm(pred.joints, gt.joints);
}

Mat Similarity::apply(const Mat& points) const {
    return (scale * (points * rotation.transpose())).rowwise() + translation.transpose();
}

Similarity procrustes_align(const JointSet& x, const JointSet& y) {
    const Mat& px = x.joints;
    const Mat& py = y.joints;
    require(px.rows() == py.rows(), "procrustes: point count mismatch");
    require(px.rows() >= 3, "procrustes: need at least 3 points");

    Vec3 mx = px.colwise().mean().transpose();
    Vec3 my = py.colwise().mean().transpose();
    Mat xc = px.rowwise() - mx.transpose();
    Mat yc = py.rowwise() - my.transpose();

    double var_x = xc.squaredNorm();
    Mat3 cov = xc.transpose() * yc;  // sum_i (x_i - mx)(y_i - my)^T

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 sv = svd.singularValues();

    Similarity out;
    double scale_ref = std::max(sv(0), var_x);
    if (var_x <= 1e-18 || sv(1) <= 1e-12 * std::max(sv(0), 1e-300) || sv(0) <= 1e-15 * scale_ref) {
        // Collinear or coincident points: rotation is not determined.
        out.degenerate = true;
        out.translation = my - mx;
        return out;
    }

    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    Vec3 d = Vec3::Ones();
    if ((v * u.transpose()).determinant() < 0.0) d(2) = -1.0;
    out.rotation = v * d.asDiagonal() * u.transpose();
    out.scale = sv.dot(d) / var_x;
    out.translation = my - out.scale * out.rotation * mx;
    return out;
}

double pa_mpjpe(const JointSet& pred, const JointSet& gt) {
    Similarity sim = procrustes_align(pred, gt);
    return mpjpe(JointSet{sim.apply(pred.joints)}, gt);
}

}  // namespace meshtok
