#include "meshtok/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "meshtok/hash.hpp"
#include "meshtok/io.hpp"
#include "meshtok/losses.hpp"
#include "meshtok/metrics.hpp"

namespace meshtok {

using nlohmann::json;

void ArticulatedTemplate::validate() const {
    rest_mesh.validate();
    const int b = joint_count();
    const int v = vertex_count();
    require(b > 0, "template has no joints");
    require(static_cast<int>(parent.size()) == b, "parent table size mismatch");
    int roots = 0;
    for (int j = 0; j < b; ++j) {
        if (parent[j] < 0) {
            ++roots;
        } else {
            require(parent[j] < j, "joints must be ordered parents-first");
        }
    }
    require(roots == 1, "template must have exactly one root joint");
    require(skinning.rows() == v && skinning.cols() == b, "skinning matrix shape mismatch");
    for (int i = 0; i < v; ++i) {
        double row_sum = skinning.row(i).sum();
        require(std::abs(row_sum - 1.0) <= 1e-6, "skinning row does not sum to 1");
        require(skinning.row(i).minCoeff() >= -1e-12, "negative skinning weight");
    }
    require(shape_axes.size() == joint_shape_axes.size(), "shape axis tables disagree");
    for (const auto& ax : shape_axes)
        require(ax.rows() == v && ax.cols() == 3, "shape axis shape mismatch");
    for (const auto& ax : joint_shape_axes)
        require(ax.rows() == b && ax.cols() == 3, "joint shape axis shape mismatch");
    require(angle_min.rows() == b && angle_min.cols() == 3, "angle_min shape mismatch");
    require(angle_max.rows() == b && angle_max.cols() == 3, "angle_max shape mismatch");
    require(((angle_max - angle_min).array() >= 0).all(), "angle_min exceeds angle_max");
    for (const auto& [name, ids] : part_labels) {
        require(!ids.empty(), "empty part label group: " + name);
        for (int id : ids) require(id >= 0 && id < v, "part label vertex out of range: " + name);
    }
}

uint64_t ArticulatedTemplate::hash() const {
    Hasher h;
    h.update(rest_mesh.vertices);
    for (const auto& f : rest_mesh.topology->faces)
        for (int k : f) h.update(static_cast<int64_t>(k));
    h.update(rest_joints);
    for (int p : parent) h.update(static_cast<int64_t>(p));
    h.update(skinning);
    for (const auto& ax : shape_axes) h.update(ax);
    for (const auto& ax : joint_shape_axes) h.update(ax);
    h.update(angle_min);
    h.update(angle_max);
    for (const auto& [name, ids] : part_labels) {
        h.update(name);
        for (int id : ids) h.update(static_cast<int64_t>(id));
    }
    return h.digest();
}

BodyParams BodyParams::zero(const ArticulatedTemplate& tmpl) {
    BodyParams p;
    p.joint_angles = Mat::Zero(tmpl.joint_count(), 3);
    p.shape = Vec::Zero(static_cast<int>(tmpl.shape_axes.size()));
    return p;
}

namespace {

struct TubeSpec {
    const char* part;
    Vec3 a, b;
    double r0, r1;
    int rings, segs;
    int joint_a, joint_b;
    double blend_t0, blend_t1, blend_max;
};

struct TemplateBuilder {
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::pair<int, double>> weight_a;  // (joint, w) per vertex
    std::vector<std::pair<int, double>> weight_b;
    std::vector<Vec3> bulk_axis;  // radial displacement, shape axis 0
    std::map<std::string, std::vector<int>> parts;

    void add_tube(const TubeSpec& ts) {
        const int base = static_cast<int>(verts.size());
        Vec3 d = ts.b - ts.a;
        const double len = d.norm();
        require(len > 1e-9, "degenerate tube axis");
        d /= len;
        Vec3 ref = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        Vec3 u = d.cross(ref).normalized();
        Vec3 w = d.cross(u);
        auto push = [&](const Vec3& p, double t, const Vec3& bulk) {
            verts.push_back(p);
            double f = 0.0;
            if (ts.blend_t1 > ts.blend_t0)
                f = std::clamp((t - ts.blend_t0) / (ts.blend_t1 - ts.blend_t0), 0.0, 1.0);
            double wb = ts.blend_max * f;
            weight_a.emplace_back(ts.joint_a, 1.0 - wb);
            weight_b.emplace_back(ts.joint_b, wb);
            bulk_axis.push_back(bulk);
            parts[ts.part].push_back(static_cast<int>(verts.size()) - 1);
        };
        for (int r = 0; r < ts.rings; ++r) {
            double t = ts.rings > 1 ? static_cast<double>(r) / (ts.rings - 1) : 0.0;
            Vec3 center = ts.a + t * (ts.b - ts.a);
            double rho = ts.r0 + t * (ts.r1 - ts.r0);
            for (int s = 0; s < ts.segs; ++s) {
                double th = 2.0 * M_PI * s / ts.segs;
                Vec3 dir = std::cos(th) * u + std::sin(th) * w;
                push(center + rho * dir, t, 0.25 * rho * dir);
            }
        }
        auto idx = [&](int r, int s) { return base + r * ts.segs + (s % ts.segs); };
        for (int r = 0; r + 1 < ts.rings; ++r) {
            for (int s = 0; s < ts.segs; ++s) {
                faces.push_back({idx(r, s), idx(r, s + 1), idx(r + 1, s)});
                faces.push_back({idx(r + 1, s), idx(r, s + 1), idx(r + 1, s + 1)});
            }
        }
        push(ts.a, 0.0, Vec3::Zero());
        const int cap_a = static_cast<int>(verts.size()) - 1;
        push(ts.b, 1.0, Vec3::Zero());
        const int cap_b = static_cast<int>(verts.size()) - 1;
        for (int s = 0; s < ts.segs; ++s) {
            faces.push_back({cap_a, idx(0, s + 1), idx(0, s)});
            faces.push_back({cap_b, idx(ts.rings - 1, s), idx(ts.rings - 1, s + 1)});
        }
    }
};

Mat3 euler_zyx(const Eigen::RowVector3d& a) {
    return (Eigen::AngleAxisd(a(2), Vec3::UnitZ()) * Eigen::AngleAxisd(a(1), Vec3::UnitY()) *
            Eigen::AngleAxisd(a(0), Vec3::UnitX()))
        .toRotationMatrix();
}

}  // namespace

ArticulatedTemplate build_desk_template() {
    ArticulatedTemplate t;
    t.joint_names = {"pelvis",     "chest",      "neck",    "head",    "l_shoulder", "l_elbow",
                     "l_wrist",    "r_shoulder", "r_elbow", "r_wrist", "l_hip",      "l_knee",
                     "l_ankle",    "r_hip",      "r_knee",  "r_ankle"};
    t.parent = {-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14};
    t.rest_joints.resize(16, 3);
    t.rest_joints << 0, 0.95, 0,      // pelvis
        0, 1.28, 0,                   // chest
        0, 1.45, 0,                   // neck
        0, 1.55, 0,                   // head
        0.17, 1.40, 0, 0.45, 1.40, 0, 0.70, 1.40, 0,     // left arm
        -0.17, 1.40, 0, -0.45, 1.40, 0, -0.70, 1.40, 0,  // right arm
        0.09, 0.90, 0, 0.09, 0.50, 0, 0.09, 0.10, 0,     // left leg
        -0.09, 0.90, 0, -0.09, 0.50, 0, -0.09, 0.10, 0;  // right leg

    TemplateBuilder tb;
    auto v3 = [](double x, double y, double z) { return Vec3(x, y, z); };
    tb.add_tube({"torso", v3(0, 0.80, 0), v3(0, 1.46, 0), 0.160, 0.125, 16, 16, 0, 1, 0.30, 0.70, 1.0});
    tb.add_tube({"head", v3(0, 1.44, 0), v3(0, 1.74, 0), 0.070, 0.088, 10, 10, 2, 3, 0.05, 0.45, 1.0});
    tb.add_tube({"left_arm", v3(0.17, 1.40, 0), v3(0.45, 1.40, 0), 0.050, 0.043, 8, 9, 4, 5, 0.70, 1.0, 0.5});
    tb.add_tube({"left_arm", v3(0.45, 1.40, 0), v3(0.78, 1.40, 0), 0.041, 0.028, 8, 9, 5, 6, 0.70, 1.0, 0.5});
    tb.add_tube({"right_arm", v3(-0.17, 1.40, 0), v3(-0.45, 1.40, 0), 0.050, 0.043, 8, 9, 7, 8, 0.70, 1.0, 0.5});
    tb.add_tube({"right_arm", v3(-0.45, 1.40, 0), v3(-0.78, 1.40, 0), 0.041, 0.028, 8, 9, 8, 9, 0.70, 1.0, 0.5});
    tb.add_tube({"left_leg", v3(0.09, 0.90, 0), v3(0.09, 0.50, 0), 0.082, 0.058, 10, 9, 10, 11, 0.70, 1.0, 0.5});
    tb.add_tube({"left_leg", v3(0.09, 0.50, 0), v3(0.09, 0.02, 0), 0.052, 0.038, 10, 9, 11, 12, 0.70, 1.0, 0.5});
    tb.add_tube({"right_leg", v3(-0.09, 0.90, 0), v3(-0.09, 0.50, 0), 0.082, 0.058, 10, 9, 13, 14, 0.70, 1.0, 0.5});
    tb.add_tube({"right_leg", v3(-0.09, 0.50, 0), v3(-0.09, 0.02, 0), 0.052, 0.038, 10, 9, 14, 15, 0.70, 1.0, 0.5});

    const int v = static_cast<int>(tb.verts.size());
    ensure(v == 1024, "desk template vertex budget drifted");
    Mat verts(v, 3);
    for (int i = 0; i < v; ++i) verts.row(i) = tb.verts[i];

    auto topo = std::make_shared<MeshTopology>(build_topology(verts, tb.faces, {256, 64, 16}));
    t.rest_mesh.topology = topo;
    t.rest_mesh.vertices = verts;
    t.part_labels = std::move(tb.parts);

    t.skinning = Mat::Zero(v, 16);
    for (int i = 0; i < v; ++i) {
        t.skinning(i, tb.weight_a[i].first) += tb.weight_a[i].second;
        t.skinning(i, tb.weight_b[i].first) += tb.weight_b[i].second;
    }

    Mat bulk(v, 3);
    for (int i = 0; i < v; ++i) bulk.row(i) = tb.bulk_axis[i];
    Mat height(v, 3);
    const Vec3 pelvis = t.rest_joints.row(0);
    for (int i = 0; i < v; ++i) {
        Vec3 d = tb.verts[i] - pelvis;
        height.row(i) = Vec3(0.04 * d.x(), 0.10 * d.y(), 0.04 * d.z());
    }
    t.shape_axes = {bulk, height};
    Mat jheight(16, 3);
    for (int j = 0; j < 16; ++j) {
        Vec3 d = Vec3(t.rest_joints.row(j)) - pelvis;
        jheight.row(j) = Vec3(0.04 * d.x(), 0.10 * d.y(), 0.04 * d.z());
    }
    t.joint_shape_axes = {Mat::Zero(16, 3), jheight};

    t.angle_min = Mat::Zero(16, 3);
    t.angle_max = Mat::Zero(16, 3);
    auto clamp3 = [&](int j, double x, double y, double z) {
        t.angle_min.row(j) = Eigen::RowVector3d(-x, -y, -z);
        t.angle_max.row(j) = Eigen::RowVector3d(x, y, z);
    };
    clamp3(1, 0.25, 0.25, 0.25);  // chest
    clamp3(2, 0.30, 0.30, 0.30);  // neck
    clamp3(3, 0.35, 0.35, 0.35);  // head
    for (int j : {4, 7}) clamp3(j, 0.40, 0.90, 0.90);   // shoulders
    for (int j : {5, 8}) clamp3(j, 0.20, 1.60, 0.30);   // elbows
    for (int j : {6, 9}) clamp3(j, 0.40, 0.40, 0.40);   // wrists
    for (int j : {10, 13}) clamp3(j, 1.00, 0.40, 0.50); // hips
    for (int j : {11, 14}) {                            // knees, one-sided hinge
        t.angle_min.row(j) = Eigen::RowVector3d(0, 0, 0);
        t.angle_max.row(j) = Eigen::RowVector3d(1.9, 0, 0);
    }
    for (int j : {12, 15}) clamp3(j, 0.50, 0.30, 0.30); // ankles

    t.validate();
    return t;
}

RegisteredMesh pose_body(const ArticulatedTemplate& tmpl, const BodyParams& params) {
    const int b = tmpl.joint_count();
    const int v = tmpl.vertex_count();
    require(params.joint_angles.rows() == b && params.joint_angles.cols() == 3,
            "joint angle table shape mismatch");
    require(params.shape.size() == static_cast<int>(tmpl.shape_axes.size()),
            "shape coefficient count mismatch");

    Mat shaped = tmpl.rest_mesh.vertices;
    Mat joints = tmpl.rest_joints;
    for (int k = 0; k < params.shape.size(); ++k) {
        if (params.shape(k) == 0.0) continue;
        shaped += params.shape(k) * tmpl.shape_axes[k];
        joints += params.shape(k) * tmpl.joint_shape_axes[k];
    }

    // Delta-form kinematics: track R_j and p_j - joint_j so an identity pose
    // reproduces the shaped mesh without round-off.
    std::vector<Mat3> rot(b);
    std::vector<Vec3> dpos(b);
    for (int j = 0; j < b; ++j) {
        Eigen::RowVector3d a = params.joint_angles.row(j);
        a = a.cwiseMax(tmpl.angle_min.row(j)).cwiseMin(tmpl.angle_max.row(j));
        Mat3 local = euler_zyx(a);
        int p = tmpl.parent[j];
        if (p < 0) {
            rot[j] = local;
            dpos[j] = Vec3::Zero();
        } else {
            rot[j] = rot[p] * local;
            Vec3 off = Vec3(joints.row(j)) - Vec3(joints.row(p));
            dpos[j] = dpos[p] + (rot[p] - Mat3::Identity()) * off;
        }
    }

    Mat out = shaped;
    for (int i = 0; i < v; ++i) {
        Vec3 x = shaped.row(i);
        Vec3 acc = Vec3::Zero();
        for (int j = 0; j < b; ++j) {
            double w = tmpl.skinning(i, j);
            if (w == 0.0) continue;
            Vec3 rel = x - Vec3(joints.row(j));
            acc += w * ((rot[j] - Mat3::Identity()) * rel + dpos[j]);
        }
        out.row(i) = x + acc;
    }

    RegisteredMesh mesh;
    mesh.topology = tmpl.rest_mesh.topology;
    mesh.vertices = std::move(out);
    return mesh;
}

BodyParams sample_params(const ArticulatedTemplate& tmpl, Rng& pose_rng, Rng& shape_rng) {
    BodyParams p = BodyParams::zero(tmpl);
    for (int j = 0; j < tmpl.joint_count(); ++j)
        for (int k = 0; k < 3; ++k)
            p.joint_angles(j, k) = pose_rng.uniform(tmpl.angle_min(j, k), tmpl.angle_max(j, k));
    for (int k = 0; k < p.shape.size(); ++k) p.shape(k) = shape_rng.uniform(-1.0, 1.0);
    return p;
}

RegisteredMesh sample_body(const ArticulatedTemplate& tmpl, uint64_t pose_seed,
                           uint64_t shape_seed) {
    Rng pose(pose_seed), shape(shape_seed);
    return pose_body(tmpl, sample_params(tmpl, pose, shape));
}

JointRegressor build_joint_regressor(const ArticulatedTemplate& tmpl) {
    const int b = tmpl.joint_count();
    const int v = tmpl.vertex_count();
    const int k = std::min(8, v);
    JointRegressor reg;
    reg.layout = b == 16 ? "desk16" : "custom" + std::to_string(b);
    reg.matrix = Mat::Zero(b, v);
    std::vector<int> order(v);
    for (int j = 0; j < b; ++j) {
        Vec3 pj = tmpl.rest_joints.row(j);
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int x, int y) {
            double dx = (Vec3(tmpl.rest_mesh.vertices.row(x)) - pj).squaredNorm();
            double dy = (Vec3(tmpl.rest_mesh.vertices.row(y)) - pj).squaredNorm();
            return dx != dy ? dx < dy : x < y;
        });
        for (int i = 0; i < k; ++i) reg.matrix(j, order[i]) = 1.0 / k;
    }
    reg.validate();
    return reg;
}

Mat initial_pose_constant(const ArticulatedTemplate& tmpl) {
    Mat pose(tmpl.joint_count() + 1, 3);
    pose.topRows(tmpl.joint_count()) = tmpl.rest_joints;
    pose.row(tmpl.joint_count()) = tmpl.rest_mesh.vertices.colwise().mean();
    return pose;
}

Mat rasterize(const RegisteredMesh& mesh, const CameraParams& cam, int image_size,
              bool* all_background) {
    require(image_size > 0, "image size must be positive");
    mesh.validate();
    require(std::isfinite(cam.s) && cam.t.allFinite(), "camera parameters must be finite");

    const int n = image_size;
    const Mat& verts = mesh.vertices;
    const int v = static_cast<int>(verts.rows());
    Mat px(v, 3);  // pixel x, pixel y, normalized depth
    for (int i = 0; i < v; ++i) {
        double xn = cam.s * verts(i, 0) + cam.t(0);
        double yn = cam.s * verts(i, 1) + cam.t(1);
        px(i, 0) = (xn + 1.0) * 0.5 * n - 0.5;
        px(i, 1) = (1.0 - (yn + 1.0) * 0.5) * n - 0.5;
        double zn = std::clamp((verts(i, 2) + 1.2) / 2.4, 0.0, 1.0);
        px(i, 2) = 0.3 + 0.7 * zn;
    }

    Mat img = Mat::Zero(n * n, 1);
    bool touched = false;
    for (const auto& f : mesh.topology->faces) {
        double x0 = px(f[0], 0), y0 = px(f[0], 1), d0 = px(f[0], 2);
        double x1 = px(f[1], 0), y1 = px(f[1], 1), d1 = px(f[1], 2);
        double x2 = px(f[2], 0), y2 = px(f[2], 1), d2 = px(f[2], 2);
        double area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
        if (std::abs(area) < 1e-12) continue;
        int cx0 = std::max(0, static_cast<int>(std::ceil(std::min({x0, x1, x2}))));
        int cx1 = std::min(n - 1, static_cast<int>(std::floor(std::max({x0, x1, x2}))));
        int cy0 = std::max(0, static_cast<int>(std::ceil(std::min({y0, y1, y2}))));
        int cy1 = std::min(n - 1, static_cast<int>(std::floor(std::max({y0, y1, y2}))));
        for (int r = cy0; r <= cy1; ++r) {
            for (int c = cx0; c <= cx1; ++c) {
                double e0 = (x2 - x1) * (r - y1) - (y2 - y1) * (c - x1);
                double e1 = (x0 - x2) * (r - y2) - (y0 - y2) * (c - x2);
                double e2 = (x1 - x0) * (r - y0) - (y1 - y0) * (c - x0);
                if (area > 0 ? (e0 < 0 || e1 < 0 || e2 < 0) : (e0 > 0 || e1 > 0 || e2 > 0))
                    continue;
                double depth = (e0 * d0 + e1 * d1 + e2 * d2) / area;
                double& cell = img(r * n + c, 0);
                if (depth > cell) {
                    cell = depth;
                    touched = true;
                }
            }
        }
    }
    for (int i = 0; i < n * n; ++i) img(i, 0) = static_cast<double>(static_cast<float>(img(i, 0)));
    if (all_background) *all_background = !touched;
    return img;
}

const std::vector<int>& Dataset::split(const std::string& name) const {
    if (name == "train") return train_idx;
    if (name == "val") return val_idx;
    if (name == "test") return test_idx;
    require(false, "unknown split: " + name);
    return train_idx;
}

uint64_t Dataset::fingerprint() const {
    Hasher h;
    h.update(static_cast<int64_t>(seed));
    h.update(static_cast<int64_t>(image_size));
    h.update(static_cast<int64_t>(template_hash));
    h.update(codec_fingerprint);
    for (const auto& r : records) {
        h.update(r.image);
        h.update(r.gt_canonical.vertices);
        h.update(Mat(r.gt_rotation));
        h.update(r.gt_camera.s);
        h.update(r.gt_camera.t(0));
        h.update(r.gt_camera.t(1));
        h.update(r.gt_joints_2d);
        h.update(r.gt_joints_3d.joints);
        for (int tok : r.gt_tokens) h.update(static_cast<int64_t>(tok));
    }
    return h.digest();
}

namespace {

void assign_splits(Dataset& ds, int count, uint64_t seed) {
    std::vector<std::pair<uint64_t, int>> keyed(count);
    for (int i = 0; i < count; ++i) {
        Hasher h;
        h.update(static_cast<int64_t>(seed));
        h.update(static_cast<int64_t>(i));
        keyed[i] = {h.digest(), i};
    }
    std::sort(keyed.begin(), keyed.end());
    const int n_train = count * 8 / 10;
    const int n_val = count / 10;
    for (int i = 0; i < count; ++i) {
        int idx = keyed[i].second;
        if (i < n_train)
            ds.train_idx.push_back(idx);
        else if (i < n_train + n_val)
            ds.val_idx.push_back(idx);
        else
            ds.test_idx.push_back(idx);
    }
    std::sort(ds.train_idx.begin(), ds.train_idx.end());
    std::sort(ds.val_idx.begin(), ds.val_idx.end());
    std::sort(ds.test_idx.begin(), ds.test_idx.end());
}

}  // namespace

Dataset build_dataset(const ArticulatedTemplate& tmpl, int count, uint64_t seed,
                      const MeshCodec* codec, int image_size) {
    require(count > 0, "dataset sample count must be positive");
    tmpl.validate();
    Dataset ds;
    ds.seed = seed;
    ds.image_size = image_size;
    ds.template_hash = tmpl.hash();
    JointRegressor reg = build_joint_regressor(tmpl);

    Rng root(seed);
    ds.records.reserve(count);
    for (int i = 0; i < count; ++i) {
        Rng r = root.fork(static_cast<uint64_t>(i));
        Rng pose = r.fork(1), shape = r.fork(2), orient = r.fork(3), camera = r.fork(4);

        RegisteredMesh body = pose_body(tmpl, sample_params(tmpl, pose, shape));
        CanonicalMesh canon = canonicalize(body, Mat3::Identity());

        double yaw = orient.uniform(-M_PI, M_PI);
        double pitch = orient.uniform(-0.25, 0.25);
        double roll = orient.uniform(-0.25, 0.25);
        Mat3 rot = (Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(pitch, Vec3::UnitX()) *
                    Eigen::AngleAxisd(roll, Vec3::UnitZ()))
                       .toRotationMatrix();
        RegisteredMesh posed = apply_orientation(canon, rot);

        SampleRecord rec;
        rec.gt_canonical = canon;
        rec.gt_rotation = rot;
        // Person-crop convention: scale tracks the projected body extent so the
        // camera is informative about the subject, as detector crops are.
        double extent = std::max(posed.vertices.leftCols(2).cwiseAbs().maxCoeff(), 1e-6);
        double fill = camera.uniform(0.70, 0.92);
        double margin = 0.75 * (1.0 - fill);
        rec.gt_camera.s = fill / extent;
        rec.gt_camera.t = Vec2(camera.uniform(-margin, margin), camera.uniform(-margin, margin));
        rec.image = rasterize(posed, rec.gt_camera, image_size);
        rec.gt_joints_3d = regress_joints(posed, reg);
        rec.gt_joints_2d = project_weak_perspective(rec.gt_joints_3d.joints, rec.gt_camera);
        if (codec) rec.gt_tokens = codec->quantize(codec->encode(canon)).tokens;
        ds.records.push_back(std::move(rec));
    }
    if (codec) ds.codec_fingerprint = to_hex(codec->fingerprint());
    assign_splits(ds, count, seed);
    return ds;
}

void attach_tokens(Dataset& dataset, const MeshCodec& codec) {
    for (auto& rec : dataset.records)
        rec.gt_tokens = codec.quantize(codec.encode(rec.gt_canonical)).tokens;
    dataset.codec_fingerprint = to_hex(codec.fingerprint());
}

namespace {

json record_annotation(const SampleRecord& rec) {
    json a;
    std::vector<double> rot(9);  // row-major
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rot[static_cast<size_t>(3 * i + j)] = rec.gt_rotation(i, j);
    a["rotation"] = rot;
    a["camera"] = {{"s", rec.gt_camera.s}, {"t", {rec.gt_camera.t(0), rec.gt_camera.t(1)}}};
    auto mat_to_rows = [](const Mat& m) {
        std::vector<std::vector<double>> rows;
        for (int i = 0; i < m.rows(); ++i) {
            std::vector<double> row(m.cols());
            for (int j = 0; j < m.cols(); ++j) row[j] = m(i, j);
            rows.push_back(std::move(row));
        }
        return rows;
    };
    a["joints_2d"] = mat_to_rows(rec.gt_joints_2d);
    a["joints_3d"] = mat_to_rows(rec.gt_joints_3d.joints);
    if (!rec.gt_tokens.empty()) a["tokens"] = rec.gt_tokens;
    return a;
}

void annotation_to_record(const json& a, SampleRecord& rec) {
    require(a.contains("rotation") && a["rotation"].size() == 9,
            "annotation must hold a 9-element rotation");
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            rec.gt_rotation(i, j) = a["rotation"][static_cast<size_t>(3 * i + j)].get<double>();
    require_rotation(rec.gt_rotation);
    require(a.contains("camera"), "annotation must hold camera parameters");
    rec.gt_camera.s = a["camera"]["s"].get<double>();
    rec.gt_camera.t = Vec2(a["camera"]["t"][0].get<double>(), a["camera"]["t"][1].get<double>());
    auto rows_to_mat = [](const json& rows, int cols) {
        Mat m(static_cast<int>(rows.size()), cols);
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = rows[i][j].get<double>();
        return m;
    };
    if (a.contains("joints_2d")) rec.gt_joints_2d = rows_to_mat(a["joints_2d"], 2);
    if (a.contains("joints_3d")) rec.gt_joints_3d.joints = rows_to_mat(a["joints_3d"], 3);
    if (a.contains("tokens")) rec.gt_tokens = a["tokens"].get<std::vector<int>>();
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::array<std::pair<const char*, const std::vector<int>*>, 3> splits = {
        {{"train", &dataset.train_idx}, {"val", &dataset.val_idx}, {"test", &dataset.test_idx}}};
    for (const auto& [name, idx] : splits) {
        fs::create_directories(dir / name);
        int k = 0;
        for (int i : *idx) {
            const SampleRecord& rec = dataset.records[i];
            char stem[16];
            std::snprintf(stem, sizeof(stem), "%06d", k++);
            fs::path base = dir / name / stem;
            write_obj(base.string() + ".obj", rec.gt_canonical.vertices,
                      rec.gt_canonical.topology->faces);
            write_pfm(base.string() + ".pfm", rec.image, dataset.image_size, dataset.image_size);
            write_text_file(base.string() + ".json", record_annotation(rec).dump(2));
        }
    }
    json m;
    m["seed"] = dataset.seed;
    m["count"] = dataset.records.size();
    m["image_size"] = dataset.image_size;
    m["template_hash"] = to_hex(dataset.template_hash);
    m["codec_fingerprint"] = dataset.codec_fingerprint;
    m["fingerprint"] = to_hex(dataset.fingerprint());
    m["splits"] = {{"train", dataset.train_idx.size()},
                   {"val", dataset.val_idx.size()},
                   {"test", dataset.test_idx.size()}};
    write_text_file(dir / "manifest.json", m.dump(2));
}

Dataset load_dataset(const std::filesystem::path& dir, TopologyPtr topology) {
    namespace fs = std::filesystem;
    ensure(fs::exists(dir / "manifest.json"), "dataset manifest missing: " + dir.string());
    json m = json::parse(read_text_file(dir / "manifest.json"));
    Dataset ds;
    ds.seed = m["seed"].get<uint64_t>();
    ds.image_size = m["image_size"].get<int>();
    ds.template_hash = std::stoull(m["template_hash"].get<std::string>(), nullptr, 16);
    ds.codec_fingerprint = m["codec_fingerprint"].get<std::string>();

    for (const char* name : {"train", "val", "test"}) {
        fs::path sub = dir / name;
        std::vector<fs::path> objs;
        if (fs::exists(sub))
            for (const auto& e : fs::directory_iterator(sub))
                if (e.path().extension() == ".obj") objs.push_back(e.path());
        std::sort(objs.begin(), objs.end());
        std::vector<int>& idx = std::string(name) == "train"  ? ds.train_idx
                                : std::string(name) == "val" ? ds.val_idx
                                                              : ds.test_idx;
        for (const auto& obj_path : objs) {
            ObjData obj = read_obj(obj_path);
            ensure(obj.vertices.rows() == topology->vertex_count,
                   "dataset mesh vertex count mismatch: " + obj_path.string());
            SampleRecord rec;
            rec.gt_canonical.topology = topology;
            rec.gt_canonical.vertices = obj.vertices;
            fs::path base = obj_path;
            rec.image = read_pfm(base.replace_extension(".pfm"));
            annotation_to_record(json::parse(read_text_file(base.replace_extension(".json"))), rec);
            idx.push_back(static_cast<int>(ds.records.size()));
            ds.records.push_back(std::move(rec));
        }
    }
    return ds;
}

Dataset ingest_smpl_meshes(const std::filesystem::path& dir, TopologyPtr topology,
                           std::vector<std::string>* rejections) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.image_size = 0;
    auto reject = [&](const std::string& msg) {
        if (rejections) rejections->push_back(msg);
    };
    if (!fs::exists(dir)) {
        reject("directory does not exist: " + dir.string());
        return ds;
    }
    std::vector<fs::path> objs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".obj") objs.push_back(e.path());
    std::sort(objs.begin(), objs.end());
    if (objs.empty()) {
        reject("no OBJ meshes found in " + dir.string());
        return ds;
    }
    for (const auto& path : objs) {
        try {
            ObjData obj = read_obj(path);
            if (obj.vertices.rows() != topology->vertex_count) {
                reject(path.string() + ": expected " + std::to_string(topology->vertex_count) +
                       " vertices, found " + std::to_string(obj.vertices.rows()));
                continue;
            }
            fs::path ann = path;
            ann.replace_extension(".json");
            if (!fs::exists(ann)) {
                reject(path.string() + ": missing annotation " + ann.string());
                continue;
            }
            SampleRecord rec;
            annotation_to_record(json::parse(read_text_file(ann)), rec);
            RegisteredMesh posed;
            posed.topology = topology;
            posed.vertices = obj.vertices;
            rec.gt_canonical = canonicalize(posed, rec.gt_rotation);
            fs::path img = path;
            img.replace_extension(".pfm");
            if (fs::exists(img)) {
                int w = 0, h = 0;
                rec.image = read_pfm(img, &w, &h);
                ds.image_size = w;
            } else {
                rec.image = Mat::Zero(0, 1);
            }
            ds.test_idx.push_back(static_cast<int>(ds.records.size()));
            ds.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            reject(path.string() + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace meshtok
