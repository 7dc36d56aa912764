#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "meshtok/codec.hpp"
#include "meshtok/losses.hpp"
#include "meshtok/model.hpp"
#include "meshtok/synth.hpp"

namespace meshtok {

struct TrainConfig {
    std::string stage = "codec";  // "codec" | "predictor"
    int epochs = 30;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double clip_norm = 1.0;
    uint64_t seed = 1;
    LossWeights loss_weights;
    bool ablation_loss_3d = false;          // soft 3D mesh term replaces the token CE
    bool ablation_no_reprojection = false;  // drops the 2D keypoint term
    std::string logit_head = "mlp";
    int early_stop_patience = 10;
    bool cosine_decay = true;

    void validate() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

struct CodecTrainResult {
    std::shared_ptr<MeshCodec> codec;
    double val_pve_mm = 0.0;
    int epochs_run = 0;
    bool diverged = false;
    std::string divergence_message;
    std::vector<std::string> log_lines;  // one JSON object per epoch
};

// Stage 1: epoch 0 trains the autoencoder without quantization, then the
// codebook is initialized by k-means on fresh encoder outputs and training
// continues with straight-through quantization and EMA codebook updates.
// On divergence the last best-validation state is restored.
CodecTrainResult train_codec(const TrainConfig& cfg, const Dataset& data, TopologyPtr topology,
                             const CodecConfig& codec_cfg, std::ostream* log = nullptr);

struct PredictorTrainResult {
    std::shared_ptr<VqhpsModel> model;
    double val_pve_mm = 0.0;
    double val_token_acc = 0.0;
    int epochs_run = 0;
    bool diverged = false;
    std::string divergence_message;
    std::vector<std::string> log_lines;
};

// Stage 2: the codec stays frozen; the token cross-entropy reaches only the
// token path, the rotation loss and reprojection reach the rotation head,
// and the reprojection alone reaches the camera head.
PredictorTrainResult train_predictor(const TrainConfig& cfg, const Dataset& data,
                                     std::shared_ptr<const MeshCodec> codec,
                                     const ModelConfig& model_cfg, const Mat& initial_pose,
                                     const JointRegressor& regressor, std::ostream* log = nullptr);

struct Prediction {
    std::vector<int> tokens;
    Mat3 rotation = Mat3::Identity();
    CameraParams camera;
};

using Predictor = std::function<Prediction(const SampleRecord&)>;

struct SampleMetrics {
    int index = 0;
    double pve_mm = 0.0;
    double mpjpe_mm = 0.0;
    double pa_mpjpe_mm = 0.0;
    double token_acc = 0.0;
};

struct EvalReport {
    std::string split;
    std::string warning;  // set when the split is empty
    int count = 0;
    double pve_mm = 0.0;
    double mpjpe_mm = 0.0;
    double pa_mpjpe_mm = 0.0;
    double token_top1 = 0.0;
    // Constant-prediction reference: per-cell modal train token, scored with
    // the evaluated predictor's rotation and camera.
    bool baseline_valid = false;
    double baseline_pve_mm = 0.0;
    double baseline_mpjpe_mm = 0.0;
    double baseline_pa_mpjpe_mm = 0.0;
    std::vector<SampleMetrics> samples;

    std::string to_json() const;
    std::string to_csv() const;
};

// Per-cell modal token over the train split's ground-truth tokens.
std::vector<int> mean_token_baseline(const Dataset& data, int cells);

EvalReport evaluate(const Predictor& predict, const MeshCodec& codec, const Dataset& data,
                    const std::string& split, const JointRegressor& regressor);
EvalReport evaluate(const VqhpsModel& model, const MeshCodec& codec, const Dataset& data,
                    const std::string& split, const JointRegressor& regressor);

}  // namespace meshtok
