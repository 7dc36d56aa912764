#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshtok/common.hpp"
#include "meshtok/mesh.hpp"

namespace meshtok {

// A learnable tensor with its gradient accumulator and Adam state.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    Mat adam_m;
    Mat adam_v;

    void zero_grad() { grad.setZero(); }
};

// Owns parameters by name. Addresses are stable for the store's lifetime.
class ParamStore {
public:
    Parameter& create(const std::string& name, int rows, int cols);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }

    void zero_grad();
    int64_t scalar_count() const;
    uint64_t fingerprint() const;

    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);
    void save(std::ostream& out) const;
    void load(std::istream& in);

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, Parameter*> by_name_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    // Clips the global gradient norm, then applies one update. Returns the
    // pre-clip norm. lr_override < 0 means use the configured rate.
    double step(ParamStore& store, double lr_override = -1.0);
    int64_t steps() const { return t_; }

private:
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// Flattened neighborhood pairs (i, j) for the mesh convolution, in
// topology order: all neighbors of vertex 0, then vertex 1, ...
struct MeshConvIndex {
    int vertex_count = 0;
    std::vector<int> pair_i;
    std::vector<int> pair_j;
    int pair_count() const { return static_cast<int>(pair_i.size()); }
};

MeshConvIndex make_conv_index(const std::vector<std::vector<int>>& neighborhoods);

// Patch gather map for a strided 2D convolution over a single-image
// row-major (H*W) x C feature matrix. src[p*kh*kw + q] is the source pixel
// of kernel cell q for output pixel p, or -1 inside zero padding.
struct Im2colIndex {
    int in_h = 0, in_w = 0;
    int out_h = 0, out_w = 0;
    int kh = 0, kw = 0;
    std::vector<int> src;
};

Im2colIndex make_im2col_index(int in_h, int in_w, int kh, int kw, int stride, int pad);

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Eigen double matrices. Nodes are recorded in
// evaluation order; backward() walks them in reverse. One backward pass
// per recording.
class Tape {
public:
    Var constant(Mat v);
    Var param(Parameter& p);

    const Mat& val(Var v) const;
    const Mat& grad_of(Var v) const;
    void backward(Var root);  // root must be 1x1
    void reset();
    int size() const { return static_cast<int>(nodes_.size()); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var transpose(Var a);
    Var scale(Var a, double c);
    Var add_mat(Var a, const Mat& c);
    Var mul_scalar(Var a, Var s);     // s is 1x1
    Var add_rowvec(Var a, Var row);   // broadcast row over every row of a
    Var mul_rowvec(Var a, Var row);
    Var tile_rows(Var row, int n);

    Var tanh_(Var a);
    Var gelu(Var a);
    Var exp_(Var a);
    Var sqrt_(Var a);
    Var add_scalar(Var a, double c);
    Var div_scalar(Var a, Var s);  // s is 1x1
    Var standardize_rows(Var a, double eps = 1e-6);
    Var softmax_rows(Var a);

    Var sum_all(Var a);
    Var mean_all(Var a);
    Var mean_sq(Var a);
    Var abs_mean(Var a);
    Var mean_row_norm(Var a);
    Var cross_entropy_rows(Var logits, const std::vector<int>& targets);

    Var concat_cols(Var a, Var b);
    Var concat_rows(Var a, Var b);
    Var slice_cols(Var a, int start, int n);
    Var slice_rows(Var a, int start, int n);
    Var gather_rows(Var a, std::vector<int> idx);

    Var pool(Var x, const MeshTopology::PoolLevel& level, bool transposed);
    Var mesh_conv(Var x, Var coeffs, Var bases, Var bias, const MeshConvIndex& index, int basis_count);
    Var im2col(Var img, const Im2colIndex& index);
    Var st_quantize(Var z, const Mat& quantized);

private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&, int)> backward;
    };
    std::vector<Node> nodes_;

    int push(Mat value, std::function<void(Tape&, int)> backward);
    Mat& g(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    const Mat& v(int id) const { return nodes_[static_cast<size_t>(id)].value; }
};

}  // namespace meshtok
