#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "meshtok/codec.hpp"
#include "meshtok/common.hpp"
#include "meshtok/mesh.hpp"
#include "meshtok/rng.hpp"
#include "meshtok/tape.hpp"

namespace meshtok {

struct ModelConfig {
    int image_h = 64;
    int image_w = 64;
    int image_c = 1;
    std::vector<int> backbone_channels = {8, 16, 32, 128};  // one stride-2 stage each
    int token_dim = 128;   // D
    int enc_layers = 2;
    int dec_layers = 2;
    int heads = 4;
    int mlp_width = 256;
    int head_width = 256;   // rotation/camera MLP
    int logit_hidden = 256;
    int cond_dim = 32;      // embedding width of the (rotation, camera) conditioning
    std::string logit_head = "mlp";  // "mlp" | "self_attention"
    int cells = 16;          // N, matches the codec
    int codebook_size = 512; // S, matches the codec
    int pose_joints = 17;    // rows of the fixed initial pose

    // Spatial grid after the strided stages.
    int grid_h() const;
    int grid_w() const;
    int feature_dim() const;
    void validate() const;
};

struct ImageFeatureMap {
    Mat grid;    // (grid_h*grid_w) x C, row-major pixels
    int h = 0;
    int w = 0;
    Mat vector;  // 1 x C mean-pooled feature
};

struct ForwardResult {
    CanonicalMesh canonical;
    Mat3 rotation;
    CameraParams camera;
    RegisteredMesh posed;
    Mat logits;  // N x S
    std::vector<int> tokens;
};

// Gram-Schmidt on the two 3-vectors; third column by cross product.
// Columns of the result are the orthonormalized directions. Near-parallel
// input falls back to a constructed orthogonal direction and sets *degenerate.
Mat3 rot6d_to_matrix(const Vec& r6, bool* degenerate = nullptr);
Var rot6d_to_matrix_t(Tape& t, Var r6);  // r6 is 1x6; smooth epsilon guard

// Row-wise argmax with lowest-index tie-breaking.
std::vector<int> predict_tokens(const Mat& logits);

Mat sinusoidal_positional_encoding(int positions, int dim);

// Nodes of one training-sample graph the trainer attaches losses to.
// Conditioning inside the graph uses detached rotation/camera values, so
// the token cross-entropy cannot reach the rotation or camera head.
struct TrainNodes {
    Var logits;   // N x S
    Var rot;      // 3 x 3
    Var cam_s;    // 1 x 1
    Var cam_t;    // 1 x 2
    Mat3 rot_value;
    CameraParams cam_value;
    std::vector<int> tokens;  // argmax of the logit values
};

class VqhpsModel {
public:
    VqhpsModel(ModelConfig cfg, std::shared_ptr<const MeshCodec> codec, Mat initial_pose,
               Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    const Mat& initial_pose() const { return initial_pose_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const MeshCodec& codec() const { return *codec_; }

    ImageFeatureMap extract_features(const Mat& image) const;  // mesh branch
    ImageFeatureMap extract_rotation_features(const Mat& image) const;
    std::pair<Mat3, CameraParams> predict_rotation_camera(const Mat& pooled_feature) const;
    Mat encode_image_tokens(const ImageFeatureMap& features) const;  // HW x D
    Mat decode_mesh_logits(const Mat& image_tokens, const Mat3& rot,
                           const CameraParams& cam) const;  // N x S
    ForwardResult forward(const Mat& image) const;

    TrainNodes build_train_graph(Tape& t, const Mat& image);

    void save(const std::filesystem::path& binary_path,
              const std::filesystem::path& manifest_path) const;
    static VqhpsModel load(const std::filesystem::path& binary_path,
                           std::shared_ptr<const MeshCodec> codec);

private:
    void check_image(const Mat& image) const;
    Var image_leaf(Tape& t, const Mat& image) const;
    Var backbone(Tape& t, Var image, const std::string& prefix, ParamStore* train) const;
    Var pooled(Tape& t, Var grid) const;
    Var head_raw(Tape& t, Var pooled_feature, ParamStore* train) const;  // 1 x 9
    Var image_tokens(Tape& t, Var grid, ParamStore* train) const;        // HW x D
    Var mesh_features(Tape& t, Var img_tokens, ParamStore* train) const; // N x D
    Var logits_from(Tape& t, Var z_feat, const Mat3& rot, const CameraParams& cam,
                    ParamStore* train) const;
    Var mha(Tape& t, Var query, Var kv, const std::string& prefix, ParamStore* train) const;
    Var layer_norm(Tape& t, Var x, const std::string& prefix, ParamStore* train) const;
    Var mlp_block(Tape& t, Var x, const std::string& prefix, ParamStore* train) const;

    ModelConfig cfg_;
    std::shared_ptr<const MeshCodec> codec_;
    Mat initial_pose_;      // pose_joints x 3 constant
    ParamStore params_;
    Mat positional_;        // (grid_h*grid_w) x D
    std::vector<Im2colIndex> conv_index_;
};

}  // namespace meshtok
