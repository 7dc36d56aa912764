#include "meshtok/model.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "meshtok/hash.hpp"
#include "meshtok/io.hpp"
#include "meshtok/metrics.hpp"

namespace meshtok {

int ModelConfig::grid_h() const {
    int h = image_h;
    for (size_t i = 0; i < backbone_channels.size(); ++i) h = (h + 1) / 2;
    return h;
}

int ModelConfig::grid_w() const {
    int w = image_w;
    for (size_t i = 0; i < backbone_channels.size(); ++i) w = (w + 1) / 2;
    return w;
}

int ModelConfig::feature_dim() const { return backbone_channels.back(); }

void ModelConfig::validate() const {
    require(image_h > 0 && image_w > 0 && image_c > 0, "invalid image size");
    require(!backbone_channels.empty(), "backbone needs at least one stage");
    for (int c : backbone_channels) require(c > 0, "backbone channel widths must be positive");
    require(token_dim > 0 && heads > 0 && token_dim % heads == 0,
            "token dimension must be divisible by head count");
    require(enc_layers > 0 && dec_layers > 0, "need at least one transformer layer per stack");
    require(mlp_width > 0 && head_width > 0 && logit_hidden > 0 && cond_dim > 0,
            "invalid hidden widths");
    require(logit_head == "mlp" || logit_head == "self_attention",
            "logit_head must be 'mlp' or 'self_attention'");
    require(cells > 0 && codebook_size >= 2 && pose_joints > 0, "invalid output dimensions");
    require(grid_h() >= 1 && grid_w() >= 1, "image collapses below a 1x1 grid");
}

Mat3 rot6d_to_matrix(const Vec& r6, bool* degenerate) {
    require(r6.size() == 6, "rot6d_to_matrix: input must have 6 entries");
    require(all_finite(r6), "rot6d_to_matrix: input must be finite");
    if (degenerate) *degenerate = false;
    Vec3 a1 = r6.head<3>();
    Vec3 a2 = r6.tail<3>();
    Vec3 b1;
    if (a1.norm() < 1e-12) {
        b1 = Vec3::UnitX();
        if (degenerate) *degenerate = true;
    } else {
        b1 = a1.normalized();
    }
    Vec3 u2 = a2 - b1.dot(a2) * b1;
    if (u2.norm() < 1e-6 * std::max(a2.norm(), 1.0)) {
        int axis = 0;
        for (int k = 1; k < 3; ++k)
            if (std::abs(b1(k)) < std::abs(b1(axis))) axis = k;
        Vec3 e = Vec3::Zero();
        e(axis) = 1.0;
        u2 = e - b1.dot(e) * b1;
        if (degenerate) *degenerate = true;
    }
    Vec3 b2 = u2.normalized();
    Vec3 b3 = b1.cross(b2);
    Mat3 r;
    r.col(0) = b1;
    r.col(1) = b2;
    r.col(2) = b3;
    return r;
}

Var rot6d_to_matrix_t(Tape& t, Var r6) {
    require(t.val(r6).rows() == 1 && t.val(r6).cols() == 6, "rot6d_to_matrix_t: input must be 1x6");
    auto normalize = [&](Var v) {
        Var n2 = t.sum_all(t.mul(v, v));
        return t.div_scalar(v, t.sqrt_(t.add_scalar(n2, 1e-24)));
    };
    Var a1 = t.slice_cols(r6, 0, 3);
    Var a2 = t.slice_cols(r6, 3, 3);
    Var b1 = normalize(a1);
    Var dot = t.sum_all(t.mul(b1, a2));
    Var b2 = normalize(t.sub(a2, t.mul_scalar(b1, dot)));
    auto comp = [&](Var v, int i) { return t.slice_cols(v, i, 1); };
    auto cross_term = [&](int i, int j) {
        return t.sub(t.mul(comp(b1, i), comp(b2, j)), t.mul(comp(b1, j), comp(b2, i)));
    };
    Var b3 = t.concat_cols(t.concat_cols(cross_term(1, 2), cross_term(2, 0)), cross_term(0, 1));
    Var rows = t.concat_rows(t.concat_rows(b1, b2), b3);
    return t.transpose(rows);
}

std::vector<int> predict_tokens(const Mat& logits) {
    require(all_finite(logits), "predict_tokens: logits must be finite");
    std::vector<int> out(static_cast<size_t>(logits.rows()));
    for (int i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int s = 1; s < logits.cols(); ++s)
            if (logits(i, s) > logits(i, best)) best = s;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

Mat sinusoidal_positional_encoding(int positions, int dim) {
    require(positions > 0 && dim > 0, "positional encoding needs positive dimensions");
    Mat pe(positions, dim);
    for (int p = 0; p < positions; ++p) {
        for (int i = 0; i < dim; ++i) {
            double freq = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(dim));
            pe(p, i) = (i % 2 == 0) ? std::sin(p * freq) : std::cos(p * freq);
        }
    }
    return pe;
}

namespace {
void init_xavier(Parameter& p, Rng& rng) {
    double std_w = std::sqrt(2.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    for (int r = 0; r < p.value.rows(); ++r)
        for (int c = 0; c < p.value.cols(); ++c) p.value(r, c) = std_w * rng.normal();
}

void init_normal(Parameter& p, double std_w, Rng& rng) {
    for (int r = 0; r < p.value.rows(); ++r)
        for (int c = 0; c < p.value.cols(); ++c) p.value(r, c) = std_w * rng.normal();
}
}  // namespace

VqhpsModel::VqhpsModel(ModelConfig cfg, std::shared_ptr<const MeshCodec> codec, Mat initial_pose,
                       Rng& rng)
    : cfg_(std::move(cfg)), codec_(std::move(codec)), initial_pose_(std::move(initial_pose)) {
    cfg_.validate();
    require(codec_ != nullptr, "model needs a codec");
    require(cfg_.cells == codec_->cell_count(), "model cell count does not match codec");
    require(cfg_.codebook_size == codec_->config().codebook_size,
            "model codebook size does not match codec");
    require(initial_pose_.rows() == cfg_.pose_joints && initial_pose_.cols() == 3,
            "initial pose must be pose_joints x 3");
    require(all_finite(initial_pose_), "initial pose must be finite");

    int d = cfg_.token_dim;
    positional_ = sinusoidal_positional_encoding(cfg_.grid_h() * cfg_.grid_w(), d);

    // Strided patch-gather maps, one per backbone stage (3x3, stride 2, pad 1).
    int h = cfg_.image_h, w = cfg_.image_w;
    for (size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
        conv_index_.push_back(make_im2col_index(h, w, 3, 3, 2, 1));
        h = conv_index_.back().out_h;
        w = conv_index_.back().out_w;
    }

    auto linear = [&](const std::string& name, int in, int out, double std_override = -1.0) {
        Parameter& wp = params_.create(name + ".w", in, out);
        if (std_override > 0.0)
            init_normal(wp, std_override, rng);
        else
            init_xavier(wp, rng);
        params_.create(name + ".b", 1, out);
    };
    auto attn = [&](const std::string& prefix) {
        linear(prefix + ".q", d, d);
        linear(prefix + ".k", d, d);
        linear(prefix + ".v", d, d);
        linear(prefix + ".o", d, d);
    };
    auto norm = [&](const std::string& prefix) {
        Parameter& gp = params_.create(prefix + ".g", 1, d);
        gp.value.setOnes();
        params_.create(prefix + ".b", 1, d);
    };
    auto mlp = [&](const std::string& prefix) {
        linear(prefix + ".1", d, cfg_.mlp_width);
        linear(prefix + ".2", cfg_.mlp_width, d);
    };

    for (const std::string& e : {std::string("xr"), std::string("xm")}) {
        int c_in = cfg_.image_c;
        for (size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
            linear(e + ".conv" + std::to_string(i), 9 * c_in,
                   cfg_.backbone_channels[i]);
            c_in = cfg_.backbone_channels[i];
        }
    }
    linear("proj", cfg_.feature_dim(), d);
    for (int i = 0; i < cfg_.enc_layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        norm(p + ".ln1");
        attn(p + ".attn");
        norm(p + ".ln2");
        mlp(p + ".mlp");
    }
    norm("enc_ln");
    for (int i = 0; i < cfg_.dec_layers; ++i) {
        std::string p = "dec" + std::to_string(i);
        norm(p + ".ln1");
        attn(p + ".self");
        norm(p + ".ln2");
        attn(p + ".cross");
        norm(p + ".ln3");
        mlp(p + ".mlp");
    }
    norm("dec_ln");
    Parameter& mt = params_.create("mesh_tokens", cfg_.cells, d);
    init_normal(mt, 0.02, rng);
    linear("cond", 12, cfg_.cond_dim);
    if (cfg_.logit_head == "self_attention") {
        norm("lsa.ln");
        attn("lsa.attn");
    }
    linear("logit.1", d + cfg_.cond_dim, cfg_.logit_hidden);
    linear("logit.2", cfg_.logit_hidden, cfg_.codebook_size, 0.02);

    int head_in = cfg_.feature_dim() + 3 * cfg_.pose_joints;
    linear("head.1", head_in, cfg_.head_width);
    linear("head.2", cfg_.head_width, cfg_.head_width);
    linear("head.3", cfg_.head_width, 9, 0.01);
    // Identity rotation and unit scale at initialization.
    Parameter& hb = params_.get("head.3.b");
    hb.value << 1, 0, 0, 0, 1, 0, 0, 0, 0;
}

void VqhpsModel::check_image(const Mat& image) const {
    require(image.rows() == static_cast<long>(cfg_.image_h) * cfg_.image_w &&
                image.cols() == cfg_.image_c,
            "image must be (h*w) x channels for the configured size");
    require(all_finite(image), "image must be finite");
}

Var VqhpsModel::image_leaf(Tape& t, const Mat& image) const {
    check_image(image);
    return t.constant(image);
}

Var VqhpsModel::backbone(Tape& t, Var image, const std::string& prefix, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    Var h = image;
    for (size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
        std::string name = prefix + ".conv" + std::to_string(i);
        Var patches = t.im2col(h, conv_index_[i]);
        h = t.gelu(t.add_rowvec(t.matmul(patches, P(name + ".w")), P(name + ".b")));
    }
    return h;
}

Var VqhpsModel::pooled(Tape& t, Var grid) const {
    int p = static_cast<int>(t.val(grid).rows());
    return t.matmul(t.constant(Mat::Constant(1, p, 1.0 / p)), grid);
}

Var VqhpsModel::head_raw(Tape& t, Var pooled_feature, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    Mat pose_flat(1, 3 * cfg_.pose_joints);
    for (int j = 0; j < cfg_.pose_joints; ++j)
        for (int c = 0; c < 3; ++c) pose_flat(0, 3 * j + c) = initial_pose_(j, c);
    Var h = t.concat_cols(pooled_feature, t.constant(pose_flat));
    h = t.tanh_(t.add_rowvec(t.matmul(h, P("head.1.w")), P("head.1.b")));
    h = t.tanh_(t.add_rowvec(t.matmul(h, P("head.2.w")), P("head.2.b")));
    return t.add_rowvec(t.matmul(h, P("head.3.w")), P("head.3.b"));
}

Var VqhpsModel::layer_norm(Tape& t, Var x, const std::string& prefix, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    return t.add_rowvec(t.mul_rowvec(t.standardize_rows(x), P(prefix + ".g")), P(prefix + ".b"));
}

Var VqhpsModel::mha(Tape& t, Var query, Var kv, const std::string& prefix,
                    ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    Var q = t.add_rowvec(t.matmul(query, P(prefix + ".q.w")), P(prefix + ".q.b"));
    Var k = t.add_rowvec(t.matmul(kv, P(prefix + ".k.w")), P(prefix + ".k.b"));
    Var v = t.add_rowvec(t.matmul(kv, P(prefix + ".v.w")), P(prefix + ".v.b"));
    int dk = cfg_.token_dim / cfg_.heads;
    Var merged{-1};
    for (int h = 0; h < cfg_.heads; ++h) {
        Var qh = t.slice_cols(q, h * dk, dk);
        Var kh = t.slice_cols(k, h * dk, dk);
        Var vh = t.slice_cols(v, h * dk, dk);
        Var scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dk)));
        Var oh = t.matmul(t.softmax_rows(scores), vh);
        merged = h == 0 ? oh : t.concat_cols(merged, oh);
    }
    return t.add_rowvec(t.matmul(merged, P(prefix + ".o.w")), P(prefix + ".o.b"));
}

Var VqhpsModel::mlp_block(Tape& t, Var x, const std::string& prefix, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    Var h = t.gelu(t.add_rowvec(t.matmul(x, P(prefix + ".1.w")), P(prefix + ".1.b")));
    return t.add_rowvec(t.matmul(h, P(prefix + ".2.w")), P(prefix + ".2.b"));
}

Var VqhpsModel::image_tokens(Tape& t, Var grid, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    Var h = t.add_rowvec(t.matmul(grid, P("proj.w")), P("proj.b"));
    h = t.add_mat(h, positional_);
    for (int i = 0; i < cfg_.enc_layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        Var n1 = layer_norm(t, h, p + ".ln1", train);
        h = t.add(h, mha(t, n1, n1, p + ".attn", train));
        h = t.add(h, mlp_block(t, layer_norm(t, h, p + ".ln2", train), p + ".mlp", train));
    }
    return layer_norm(t, h, "enc_ln", train);
}

Var VqhpsModel::mesh_features(Tape& t, Var img_tokens, ParamStore* train) const {
    Var h = train ? t.param(train->get("mesh_tokens"))
                  : t.constant(params_.get("mesh_tokens").value);
    for (int i = 0; i < cfg_.dec_layers; ++i) {
        std::string p = "dec" + std::to_string(i);
        Var n1 = layer_norm(t, h, p + ".ln1", train);
        h = t.add(h, mha(t, n1, n1, p + ".self", train));
        Var n2 = layer_norm(t, h, p + ".ln2", train);
        h = t.add(h, mha(t, n2, img_tokens, p + ".cross", train));
        h = t.add(h, mlp_block(t, layer_norm(t, h, p + ".ln3", train), p + ".mlp", train));
    }
    return layer_norm(t, h, "dec_ln", train);
}

Var VqhpsModel::logits_from(Tape& t, Var z_feat, const Mat3& rot, const CameraParams& cam,
                            ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    Mat cond_in(1, 12);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cond_in(0, 3 * r + c) = rot(r, c);
    cond_in(0, 9) = cam.s;
    cond_in(0, 10) = cam.t.x();
    cond_in(0, 11) = cam.t.y();
    Var cond = t.tanh_(t.add_rowvec(t.matmul(t.constant(cond_in), P("cond.w")), P("cond.b")));
    Var h = z_feat;
    if (cfg_.logit_head == "self_attention") {
        Var n = layer_norm(t, h, "lsa.ln", train);
        h = t.add(h, mha(t, n, n, "lsa.attn", train));
    }
    h = t.concat_cols(h, t.tile_rows(cond, cfg_.cells));
    h = t.gelu(t.add_rowvec(t.matmul(h, P("logit.1.w")), P("logit.1.b")));
    return t.add_rowvec(t.matmul(h, P("logit.2.w")), P("logit.2.b"));
}

ImageFeatureMap VqhpsModel::extract_features(const Mat& image) const {
    Tape t;
    Var grid = backbone(t, image_leaf(t, image), "xm", nullptr);
    ImageFeatureMap out;
    out.grid = t.val(grid);
    out.h = cfg_.grid_h();
    out.w = cfg_.grid_w();
    out.vector = t.val(pooled(t, grid));
    return out;
}

ImageFeatureMap VqhpsModel::extract_rotation_features(const Mat& image) const {
    Tape t;
    Var grid = backbone(t, image_leaf(t, image), "xr", nullptr);
    ImageFeatureMap out;
    out.grid = t.val(grid);
    out.h = cfg_.grid_h();
    out.w = cfg_.grid_w();
    out.vector = t.val(pooled(t, grid));
    return out;
}

std::pair<Mat3, CameraParams> VqhpsModel::predict_rotation_camera(
    const Mat& pooled_feature) const {
    require(pooled_feature.rows() == 1 && pooled_feature.cols() == cfg_.feature_dim(),
            "pooled feature has the wrong size");
    Tape t;
    Var raw = head_raw(t, t.constant(pooled_feature), nullptr);
    const Mat& r = t.val(raw);
    Vec r6(6);
    for (int i = 0; i < 6; ++i) r6(i) = r(0, i);
    Mat3 rot = rot6d_to_matrix(r6);
    CameraParams cam;
    cam.s = std::exp(r(0, 6));
    cam.t = Vec2(r(0, 7), r(0, 8));
    return {rot, cam};
}

Mat VqhpsModel::encode_image_tokens(const ImageFeatureMap& features) const {
    require(features.grid.rows() == positional_.rows() &&
                features.grid.cols() == cfg_.feature_dim(),
            "feature grid has the wrong shape");
    Tape t;
    return t.val(image_tokens(t, t.constant(features.grid), nullptr));
}

Mat VqhpsModel::decode_mesh_logits(const Mat& image_tokens_in, const Mat3& rot,
                                   const CameraParams& cam) const {
    require(image_tokens_in.rows() == positional_.rows() &&
                image_tokens_in.cols() == cfg_.token_dim,
            "image tokens have the wrong shape");
    Tape t;
    Var zf = mesh_features(t, t.constant(image_tokens_in), nullptr);
    return t.val(logits_from(t, zf, rot, cam, nullptr));
}

ForwardResult VqhpsModel::forward(const Mat& image) const {
    ForwardResult out;
    ImageFeatureMap fr = extract_rotation_features(image);
    std::tie(out.rotation, out.camera) = predict_rotation_camera(fr.vector);
    ImageFeatureMap fm = extract_features(image);
    Mat xt = encode_image_tokens(fm);
    out.logits = decode_mesh_logits(xt, out.rotation, out.camera);
    out.tokens = meshtok::predict_tokens(out.logits);
    out.canonical = codec_->decode(codec_->dequantize(out.tokens));
    out.posed = apply_orientation(out.canonical, out.rotation);
    return out;
}

TrainNodes VqhpsModel::build_train_graph(Tape& t, const Mat& image) {
    Var img = image_leaf(t, image);
    Var rot_grid = backbone(t, img, "xr", &params_);
    Var raw = head_raw(t, pooled(t, rot_grid), &params_);
    TrainNodes out;
    out.rot = rot6d_to_matrix_t(t, t.slice_cols(raw, 0, 6));
    out.cam_s = t.exp_(t.slice_cols(raw, 6, 1));
    out.cam_t = t.slice_cols(raw, 7, 2);
    const Mat& rv = t.val(out.rot);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.rot_value(r, c) = rv(r, c);
    out.cam_value.s = t.val(out.cam_s)(0, 0);
    out.cam_value.t = Vec2(t.val(out.cam_t)(0, 0), t.val(out.cam_t)(0, 1));

    Var mesh_grid = backbone(t, img, "xm", &params_);
    Var xt = image_tokens(t, mesh_grid, &params_);
    Var zf = mesh_features(t, xt, &params_);
    out.logits = logits_from(t, zf, out.rot_value, out.cam_value, &params_);
    out.tokens = meshtok::predict_tokens(t.val(out.logits));
    return out;
}

namespace {
constexpr uint32_t kModelMagic = 0x4d544b4d;  // "MTKM"
constexpr uint32_t kModelVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    ensure(in.good(), "truncated model file");
    return v;
}
}  // namespace

void VqhpsModel::save(const std::filesystem::path& binary_path,
                      const std::filesystem::path& manifest_path) const {
    std::ofstream out(binary_path, std::ios::binary);
    ensure(out.good(), "cannot write model file: " + binary_path.string());
    write_pod(out, kModelMagic);
    write_pod(out, kModelVersion);
    auto wi = [&](int v) { write_pod(out, static_cast<int32_t>(v)); };
    wi(cfg_.image_h);
    wi(cfg_.image_w);
    wi(cfg_.image_c);
    wi(static_cast<int>(cfg_.backbone_channels.size()));
    for (int c : cfg_.backbone_channels) wi(c);
    wi(cfg_.token_dim);
    wi(cfg_.enc_layers);
    wi(cfg_.dec_layers);
    wi(cfg_.heads);
    wi(cfg_.mlp_width);
    wi(cfg_.head_width);
    wi(cfg_.logit_hidden);
    wi(cfg_.cond_dim);
    wi(static_cast<int>(cfg_.logit_head.size()));
    out.write(cfg_.logit_head.data(), static_cast<std::streamsize>(cfg_.logit_head.size()));
    wi(cfg_.cells);
    wi(cfg_.codebook_size);
    wi(cfg_.pose_joints);
    out.write(reinterpret_cast<const char*>(initial_pose_.data()),
              static_cast<std::streamsize>(sizeof(double)) * initial_pose_.size());
    write_pod(out, codec_->fingerprint());
    params_.save(out);
    ensure(out.good(), "failed writing model file: " + binary_path.string());

    nlohmann::json manifest;
    manifest["d"] = cfg_.token_dim;
    manifest["n"] = cfg_.cells;
    manifest["s"] = cfg_.codebook_size;
    manifest["enc_layers"] = cfg_.enc_layers;
    manifest["dec_layers"] = cfg_.dec_layers;
    manifest["heads"] = cfg_.heads;
    manifest["codec_fingerprint"] = to_hex(codec_->fingerprint());
    manifest["logit_head"] = cfg_.logit_head;
    manifest["image"] = {cfg_.image_h, cfg_.image_w, cfg_.image_c};
    write_text_file(manifest_path, manifest.dump(2));
}

VqhpsModel VqhpsModel::load(const std::filesystem::path& binary_path,
                            std::shared_ptr<const MeshCodec> codec) {
    std::ifstream in(binary_path, std::ios::binary);
    ensure(in.good(), "cannot open model file: " + binary_path.string());
    ensure(read_pod<uint32_t>(in) == kModelMagic, "not a model file: " + binary_path.string());
    ensure(read_pod<uint32_t>(in) == kModelVersion, "unsupported model file version");
    auto ri = [&]() { return static_cast<int>(read_pod<int32_t>(in)); };
    ModelConfig cfg;
    cfg.image_h = ri();
    cfg.image_w = ri();
    cfg.image_c = ri();
    int n_stages = ri();
    cfg.backbone_channels.clear();
    for (int i = 0; i < n_stages; ++i) cfg.backbone_channels.push_back(ri());
    cfg.token_dim = ri();
    cfg.enc_layers = ri();
    cfg.dec_layers = ri();
    cfg.heads = ri();
    cfg.mlp_width = ri();
    cfg.head_width = ri();
    cfg.logit_hidden = ri();
    cfg.cond_dim = ri();
    int head_len = ri();
    ensure(head_len >= 0 && head_len < 64, "model file: implausible head name");
    cfg.logit_head.assign(static_cast<size_t>(head_len), '\0');
    in.read(cfg.logit_head.data(), head_len);
    cfg.cells = ri();
    cfg.codebook_size = ri();
    cfg.pose_joints = ri();
    Mat pose(cfg.pose_joints, 3);
    in.read(reinterpret_cast<char*>(pose.data()),
            static_cast<std::streamsize>(sizeof(double)) * pose.size());
    uint64_t fp = read_pod<uint64_t>(in);
    ensure(codec != nullptr, "model load needs a codec");
    ensure(codec->fingerprint() == fp, "model file codec fingerprint does not match");
    Rng scratch(0);
    VqhpsModel model(cfg, std::move(codec), pose, scratch);
    model.params_.load(in);
    ensure(in.good(), "truncated model file: " + binary_path.string());
    return model;
}

}  // namespace meshtok
