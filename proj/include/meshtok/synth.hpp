#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meshtok/codec.hpp"
#include "meshtok/common.hpp"
#include "meshtok/mesh.hpp"
#include "meshtok/rng.hpp"

namespace meshtok {

// Linear-blend-skinned parametric body. Joint j's local rotation applies to
// everything attached at j and below; parents precede children in index order.
struct ArticulatedTemplate {
    RegisteredMesh rest_mesh;
    std::vector<int> parent;             // -1 for the root
    Mat rest_joints;                     // B x 3
    Mat skinning;                        // V x B, rows sum to 1
    std::vector<Mat> shape_axes;         // per-axis V x 3 displacement
    std::vector<Mat> joint_shape_axes;   // per-axis B x 3 joint displacement
    Mat angle_min;                       // B x 3 clamp table (radians)
    Mat angle_max;
    std::vector<std::string> joint_names;
    std::map<std::string, std::vector<int>> part_labels;

    int joint_count() const { return static_cast<int>(rest_joints.rows()); }
    int vertex_count() const { return static_cast<int>(rest_mesh.vertices.rows()); }
    void validate() const;
    uint64_t hash() const;
};

struct BodyParams {
    Mat joint_angles;  // B x 3 Euler angles, composed Rz*Ry*Rx
    Vec shape;         // one coefficient per shape axis

    static BodyParams zero(const ArticulatedTemplate& tmpl);
};

// The 1024-vertex capsule-limb humanoid with 16 joints and 2 shape axes,
// plus its 3-level pooling hierarchy (256/64/16).
ArticulatedTemplate build_desk_template();

RegisteredMesh pose_body(const ArticulatedTemplate& tmpl, const BodyParams& params);
BodyParams sample_params(const ArticulatedTemplate& tmpl, Rng& pose_rng, Rng& shape_rng);
RegisteredMesh sample_body(const ArticulatedTemplate& tmpl, uint64_t pose_seed,
                           uint64_t shape_seed);

// Joint regressor over the rest mesh: each joint is the uniform average of
// its 8 nearest rest vertices.
JointRegressor build_joint_regressor(const ArticulatedTemplate& tmpl);

// 17 x 3 constant conditioning pose: the 16 rest joints plus the rest-mesh
// centroid as the final row.
Mat initial_pose_constant(const ArticulatedTemplate& tmpl);

// Orthographic depth rasterization. Projection: u = s*x + t, normalized
// [-1,1] image coordinates; viewer on the +z side; background 0; foreground
// depth mapped from z in [-1.2, 1.2] to [0.3, 1.0] and quantized to float32.
Mat rasterize(const RegisteredMesh& mesh, const CameraParams& cam, int image_size,
              bool* all_background = nullptr);

struct SampleRecord {
    Mat image;  // (size*size) x 1
    CanonicalMesh gt_canonical;
    std::vector<int> gt_tokens;  // filled when a codec is supplied
    Mat3 gt_rotation;
    CameraParams gt_camera;
    Mat gt_joints_2d;      // J x 2, normalized image units
    JointSet gt_joints_3d;  // posed frame
};

struct Dataset {
    std::vector<SampleRecord> records;
    std::vector<int> train_idx, val_idx, test_idx;
    uint64_t seed = 0;
    int image_size = 0;
    uint64_t template_hash = 0;
    std::string codec_fingerprint;  // empty when tokens are absent

    const std::vector<int>& split(const std::string& name) const;
    uint64_t fingerprint() const;
};

Dataset build_dataset(const ArticulatedTemplate& tmpl, int count, uint64_t seed,
                      const MeshCodec* codec = nullptr, int image_size = 64);

// Fills gt_tokens on every record from the codec's current state.
void attach_tokens(Dataset& dataset, const MeshCodec& codec);

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir, TopologyPtr topology);

// Reads posed OBJ meshes with matching .json annotations; files failing
// validation are skipped and reported.
Dataset ingest_smpl_meshes(const std::filesystem::path& dir, TopologyPtr topology,
                           std::vector<std::string>* rejections = nullptr);

}  // namespace meshtok
