#include "meshtok/tape.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "meshtok/hash.hpp"

namespace meshtok {

Parameter& ParamStore::create(const std::string& name, int rows, int cols) {
    require(!has(name), "parameter already exists: " + name);
    require(rows > 0 && cols > 0, "parameter dimensions must be positive: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Mat::Zero(rows, cols);
    p->grad = Mat::Zero(rows, cols);
    p->adam_m = Mat::Zero(rows, cols);
    p->adam_v = Mat::Zero(rows, cols);
    Parameter* raw = p.get();
    params_.push_back(std::move(p));
    by_name_[name] = raw;
    return *raw;
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = by_name_.find(name);
    ensure(it != by_name_.end(), "unknown parameter: " + name);
    return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = by_name_.find(name);
    ensure(it != by_name_.end(), "unknown parameter: " + name);
    return *it->second;
}

bool ParamStore::has(const std::string& name) const { return by_name_.count(name) > 0; }

void ParamStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

int64_t ParamStore::scalar_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

uint64_t ParamStore::fingerprint() const {
    std::vector<const Parameter*> sorted;
    sorted.reserve(params_.size());
    for (const auto& p : params_) sorted.push_back(p.get());
    std::sort(sorted.begin(), sorted.end(),
              [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
    Hasher h;
    for (const Parameter* p : sorted) {
        h.update(p->name);
        h.update(static_cast<int64_t>(p->value.rows()));
        h.update(static_cast<int64_t>(p->value.cols()));
        h.update(p->value);
    }
    return h.digest();
}

namespace {
constexpr uint32_t kParamMagic = 0x4d544b50;  // "MTKP"
constexpr uint32_t kParamVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    ensure(in.good(), "truncated parameter file");
    return v;
}
}  // namespace

void ParamStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    ensure(out.good(), "cannot write parameter file: " + path.string());
    save(out);
    ensure(out.good(), "failed writing parameter file: " + path.string());
}

void ParamStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    ensure(in.good(), "cannot open parameter file: " + path.string());
    load(in);
}

void ParamStore::save(std::ostream& out) const {
    write_pod(out, kParamMagic);
    write_pod(out, kParamVersion);
    write_pod(out, static_cast<uint64_t>(params_.size()));
    for (const auto& p : params_) {
        write_pod(out, static_cast<uint64_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod(out, static_cast<int64_t>(p->value.rows()));
        write_pod(out, static_cast<int64_t>(p->value.cols()));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(sizeof(double)) * p->value.size());
    }
}

void ParamStore::load(std::istream& in) {
    ensure(read_pod<uint32_t>(in) == kParamMagic, "not a parameter file");
    ensure(read_pod<uint32_t>(in) == kParamVersion, "unsupported parameter file version");
    uint64_t count = read_pod<uint64_t>(in);
    ensure(count == params_.size(), "parameter count mismatch");
    for (uint64_t i = 0; i < count; ++i) {
        uint64_t name_len = read_pod<uint64_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        int64_t rows = read_pod<int64_t>(in);
        int64_t cols = read_pod<int64_t>(in);
        ensure(has(name), "parameter file has unknown entry: " + name);
        Parameter& p = get(name);
        ensure(p.value.rows() == rows && p.value.cols() == cols,
               "parameter shape mismatch: " + name);
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(sizeof(double)) * rows * cols);
        ensure(in.good(), "truncated parameter file");
    }
}

double Adam::step(ParamStore& store, double lr_override) {
    double sq = 0.0;
    for (const auto& p : store.all()) sq += p->grad.squaredNorm();
    double norm = std::sqrt(sq);
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;

    t_ += 1;
    double lr = lr_override >= 0.0 ? lr_override : cfg_.lr;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& p : store.all()) {
        Mat g = p->grad * clip;
        p->adam_m = cfg_.beta1 * p->adam_m + (1.0 - cfg_.beta1) * g;
        p->adam_v = cfg_.beta2 * p->adam_v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        Mat mhat = p->adam_m / bc1;
        Mat vhat = p->adam_v / bc2;
        p->value.noalias() -=
            lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + cfg_.eps).matrix());
    }
    return norm;
}

MeshConvIndex make_conv_index(const std::vector<std::vector<int>>& neighborhoods) {
    MeshConvIndex idx;
    idx.vertex_count = static_cast<int>(neighborhoods.size());
    for (int i = 0; i < idx.vertex_count; ++i) {
        for (int j : neighborhoods[static_cast<size_t>(i)]) {
            require(j >= 0 && j < idx.vertex_count, "neighborhood index out of range");
            idx.pair_i.push_back(i);
            idx.pair_j.push_back(j);
        }
    }
    return idx;
}

Im2colIndex make_im2col_index(int in_h, int in_w, int kh, int kw, int stride, int pad) {
    require(in_h > 0 && in_w > 0 && kh > 0 && kw > 0 && stride > 0 && pad >= 0,
            "invalid convolution geometry");
    Im2colIndex idx;
    idx.in_h = in_h;
    idx.in_w = in_w;
    idx.kh = kh;
    idx.kw = kw;
    idx.out_h = (in_h + 2 * pad - kh) / stride + 1;
    idx.out_w = (in_w + 2 * pad - kw) / stride + 1;
    require(idx.out_h > 0 && idx.out_w > 0, "convolution output collapses to zero");
    idx.src.reserve(static_cast<size_t>(idx.out_h) * idx.out_w * kh * kw);
    for (int oy = 0; oy < idx.out_h; ++oy) {
        for (int ox = 0; ox < idx.out_w; ++ox) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    int sy = oy * stride + ky - pad;
                    int sx = ox * stride + kx - pad;
                    bool inside = sy >= 0 && sy < in_h && sx >= 0 && sx < in_w;
                    idx.src.push_back(inside ? sy * in_w + sx : -1);
                }
            }
        }
    }
    return idx;
}

int Tape::push(Mat value, std::function<void(Tape&, int)> backward) {
    Node n;
    n.grad = Mat::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::constant(Mat v) { return {push(std::move(v), nullptr)}; }

Var Tape::param(Parameter& p) {
    Parameter* ptr = &p;
    return {push(p.value, [ptr](Tape& t, int self) { ptr->grad += t.g(self); })};
}

const Mat& Tape::val(Var v) const {
    require(v.valid() && v.id < size(), "invalid tape variable");
    return nodes_[static_cast<size_t>(v.id)].value;
}

const Mat& Tape::grad_of(Var v) const {
    require(v.valid() && v.id < size(), "invalid tape variable");
    return nodes_[static_cast<size_t>(v.id)].grad;
}

void Tape::backward(Var root) {
    require(root.valid() && root.id < size(), "invalid backward root");
    require(v(root.id).rows() == 1 && v(root.id).cols() == 1, "backward root must be scalar");
    g(root.id)(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
        auto& node = nodes_[static_cast<size_t>(i)];
        if (node.backward) node.backward(*this, i);
    }
}

void Tape::reset() { nodes_.clear(); }

Var Tape::add(Var a, Var b) {
    require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
            "add: shape mismatch");
    return {push(val(a) + val(b), [a, b](Tape& t, int self) {
        t.g(a.id) += t.g(self);
        t.g(b.id) += t.g(self);
    })};
}

Var Tape::sub(Var a, Var b) {
    require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
            "sub: shape mismatch");
    return {push(val(a) - val(b), [a, b](Tape& t, int self) {
        t.g(a.id) += t.g(self);
        t.g(b.id) -= t.g(self);
    })};
}

Var Tape::mul(Var a, Var b) {
    require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
            "mul: shape mismatch");
    return {push(val(a).cwiseProduct(val(b)), [a, b](Tape& t, int self) {
        t.g(a.id) += t.g(self).cwiseProduct(t.v(b.id));
        t.g(b.id) += t.g(self).cwiseProduct(t.v(a.id));
    })};
}

Var Tape::matmul(Var a, Var b) {
    require(val(a).cols() == val(b).rows(), "matmul: inner dimension mismatch");
    return {push(val(a) * val(b), [a, b](Tape& t, int self) {
        t.g(a.id).noalias() += t.g(self) * t.v(b.id).transpose();
        t.g(b.id).noalias() += t.v(a.id).transpose() * t.g(self);
    })};
}

Var Tape::matmul_nt(Var a, Var b) {
    require(val(a).cols() == val(b).cols(), "matmul_nt: inner dimension mismatch");
    return {push(val(a) * val(b).transpose(), [a, b](Tape& t, int self) {
        t.g(a.id).noalias() += t.g(self) * t.v(b.id);
        t.g(b.id).noalias() += t.g(self).transpose() * t.v(a.id);
    })};
}

Var Tape::transpose(Var a) {
    return {push(val(a).transpose(),
                 [a](Tape& t, int self) { t.g(a.id) += t.g(self).transpose(); })};
}

Var Tape::scale(Var a, double c) {
    return {push(val(a) * c, [a, c](Tape& t, int self) { t.g(a.id) += c * t.g(self); })};
}

Var Tape::add_mat(Var a, const Mat& c) {
    require(val(a).rows() == c.rows() && val(a).cols() == c.cols(), "add_mat: shape mismatch");
    return {push(val(a) + c, [a](Tape& t, int self) { t.g(a.id) += t.g(self); })};
}

Var Tape::mul_scalar(Var a, Var s) {
    require(val(s).rows() == 1 && val(s).cols() == 1, "mul_scalar: multiplier must be 1x1");
    return {push(val(a) * val(s)(0, 0), [a, s](Tape& t, int self) {
        t.g(a.id) += t.v(s.id)(0, 0) * t.g(self);
        t.g(s.id)(0, 0) += t.g(self).cwiseProduct(t.v(a.id)).sum();
    })};
}

Var Tape::add_rowvec(Var a, Var row) {
    require(val(row).rows() == 1 && val(row).cols() == val(a).cols(),
            "add_rowvec: row shape mismatch");
    Mat out = val(a);
    out.rowwise() += val(row).row(0);
    return {push(std::move(out), [a, row](Tape& t, int self) {
        t.g(a.id) += t.g(self);
        t.g(row.id).row(0) += t.g(self).colwise().sum();
    })};
}

Var Tape::mul_rowvec(Var a, Var row) {
    require(val(row).rows() == 1 && val(row).cols() == val(a).cols(),
            "mul_rowvec: row shape mismatch");
    Mat out = val(a).array().rowwise() * val(row).row(0).array();
    return {push(std::move(out), [a, row](Tape& t, int self) {
        t.g(a.id).array() += t.g(self).array().rowwise() * t.v(row.id).row(0).array();
        t.g(row.id).row(0) += t.g(self).cwiseProduct(t.v(a.id)).colwise().sum();
    })};
}

Var Tape::tile_rows(Var row, int n) {
    require(val(row).rows() == 1 && n > 0, "tile_rows: needs a 1-row input");
    return {push(val(row).replicate(n, 1), [row](Tape& t, int self) {
        t.g(row.id).row(0) += t.g(self).colwise().sum();
    })};
}

Var Tape::tanh_(Var a) {
    return {push(val(a).array().tanh().matrix(), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self).array() * (1.0 - t.v(self).array().square());
    })};
}

Var Tape::gelu(Var a) {
    auto erf = [](double v) { return std::erf(v); };
    const Mat& x = val(a);
    Mat out = 0.5 * x.array() * (1.0 + (x.array() / std::sqrt(2.0)).unaryExpr(erf));
    return {push(std::move(out), [a, erf](Tape& t, int self) {
        const auto x = t.v(a.id).array();
        const double inv_sqrt2pi = 0.3989422804014327;
        auto d = 0.5 * (1.0 + (x / std::sqrt(2.0)).unaryExpr(erf)) +
                 x * inv_sqrt2pi * (-0.5 * x.square()).exp();
        t.g(a.id).array() += t.g(self).array() * d;
    })};
}

Var Tape::exp_(Var a) {
    return {push(val(a).array().exp().matrix(), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self).array() * t.v(self).array();
    })};
}

Var Tape::sqrt_(Var a) {
    require((val(a).array() > 0.0).all(), "sqrt_: input must be positive");
    return {push(val(a).cwiseSqrt(), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self).array() * 0.5 / t.v(self).array();
    })};
}

Var Tape::add_scalar(Var a, double c) {
    return {push(val(a).array() + c, [a](Tape& t, int self) { t.g(a.id) += t.g(self); })};
}

Var Tape::div_scalar(Var a, Var s) {
    require(val(s).rows() == 1 && val(s).cols() == 1, "div_scalar: divisor must be 1x1");
    double sv = val(s)(0, 0);
    require(sv != 0.0, "div_scalar: division by zero");
    return {push(val(a) / sv, [a, s](Tape& t, int self) {
        double sv = t.v(s.id)(0, 0);
        t.g(a.id) += t.g(self) / sv;
        t.g(s.id)(0, 0) -= t.g(self).cwiseProduct(t.v(self)).sum() / sv;
    })};
}

Var Tape::standardize_rows(Var a, double eps) {
    const Mat& x = val(a);
    int rows = static_cast<int>(x.rows());
    int cols = static_cast<int>(x.cols());
    require(cols > 0, "standardize_rows: empty input");
    Mat out(rows, cols);
    auto inv_sigma = std::make_shared<Vec>(rows);
    for (int r = 0; r < rows; ++r) {
        double mu = x.row(r).mean();
        double var = (x.row(r).array() - mu).square().mean();
        double is = 1.0 / std::sqrt(var + eps);
        out.row(r) = (x.row(r).array() - mu) * is;
        (*inv_sigma)(r) = is;
    }
    return {push(std::move(out), [a, inv_sigma](Tape& t, int self) {
        const Mat& y = t.v(self);
        const Mat& dy = t.g(self);
        for (int r = 0; r < y.rows(); ++r) {
            double m1 = dy.row(r).mean();
            double m2 = dy.row(r).cwiseProduct(y.row(r)).mean();
            t.g(a.id).row(r).array() +=
                (*inv_sigma)(r) * (dy.row(r).array() - m1 - y.row(r).array() * m2);
        }
    })};
}

Var Tape::softmax_rows(Var a) {
    const Mat& x = val(a);
    Mat out(x.rows(), x.cols());
    for (int r = 0; r < x.rows(); ++r) {
        Eigen::RowVectorXd e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
        out.row(r) = e / e.sum();
    }
    return {push(std::move(out), [a](Tape& t, int self) {
        const Mat& y = t.v(self);
        const Mat& dy = t.g(self);
        for (int r = 0; r < y.rows(); ++r) {
            double dot = dy.row(r).dot(y.row(r));
            t.g(a.id).row(r).array() += (dy.row(r).array() - dot) * y.row(r).array();
        }
    })};
}

Var Tape::sum_all(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).sum();
    return {push(std::move(out), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self)(0, 0);
    })};
}

Var Tape::mean_all(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).mean();
    return {push(std::move(out), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self)(0, 0) / static_cast<double>(t.v(a.id).size());
    })};
}

Var Tape::mean_sq(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).array().square().mean();
    return {push(std::move(out), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self)(0, 0) * 2.0 / static_cast<double>(t.v(a.id).size()) *
                             t.v(a.id).array();
    })};
}

Var Tape::abs_mean(Var a) {
    Mat out(1, 1);
    out(0, 0) = val(a).array().abs().mean();
    return {push(std::move(out), [a](Tape& t, int self) {
        t.g(a.id).array() += t.g(self)(0, 0) / static_cast<double>(t.v(a.id).size()) *
                             t.v(a.id).array().sign();
    })};
}

Var Tape::mean_row_norm(Var a) {
    const Mat& x = val(a);
    Mat out(1, 1);
    out(0, 0) = x.rowwise().norm().mean();
    return {push(std::move(out), [a](Tape& t, int self) {
        const Mat& x = t.v(a.id);
        double scale = t.g(self)(0, 0) / static_cast<double>(x.rows());
        for (int r = 0; r < x.rows(); ++r) {
            double n = x.row(r).norm();
            if (n > 1e-12) t.g(a.id).row(r) += (scale / n) * x.row(r);
        }
    })};
}

Var Tape::cross_entropy_rows(Var logits, const std::vector<int>& targets) {
    const Mat& x = val(logits);
    require(static_cast<int>(targets.size()) == x.rows(), "cross_entropy: target count mismatch");
    int rows = static_cast<int>(x.rows());
    int cols = static_cast<int>(x.cols());
    auto probs = std::make_shared<Mat>(rows, cols);
    double loss = 0.0;
    for (int r = 0; r < rows; ++r) {
        int tgt = targets[static_cast<size_t>(r)];
        require(tgt >= 0 && tgt < cols, "cross_entropy: target index out of range");
        double mx = x.row(r).maxCoeff();
        Eigen::RowVectorXd e = (x.row(r).array() - mx).exp();
        double z = e.sum();
        probs->row(r) = e / z;
        loss += std::log(z) + mx - x(r, tgt);
    }
    Mat out(1, 1);
    out(0, 0) = loss / rows;
    std::vector<int> tcopy = targets;
    return {push(std::move(out), [logits, probs, tcopy](Tape& t, int self) {
        double scale = t.g(self)(0, 0) / static_cast<double>(probs->rows());
        Mat d = *probs;
        for (int r = 0; r < d.rows(); ++r) d(r, tcopy[static_cast<size_t>(r)]) -= 1.0;
        t.g(logits.id) += scale * d;
    })};
}

Var Tape::concat_cols(Var a, Var b) {
    require(val(a).rows() == val(b).rows(), "concat_cols: row mismatch");
    Mat out(val(a).rows(), val(a).cols() + val(b).cols());
    out << val(a), val(b);
    int na = static_cast<int>(val(a).cols());
    return {push(std::move(out), [a, b, na](Tape& t, int self) {
        t.g(a.id) += t.g(self).leftCols(na);
        t.g(b.id) += t.g(self).rightCols(t.g(self).cols() - na);
    })};
}

Var Tape::concat_rows(Var a, Var b) {
    require(val(a).cols() == val(b).cols(), "concat_rows: column mismatch");
    Mat out(val(a).rows() + val(b).rows(), val(a).cols());
    out << val(a), val(b);
    int na = static_cast<int>(val(a).rows());
    return {push(std::move(out), [a, b, na](Tape& t, int self) {
        t.g(a.id) += t.g(self).topRows(na);
        t.g(b.id) += t.g(self).bottomRows(t.g(self).rows() - na);
    })};
}

Var Tape::slice_cols(Var a, int start, int n) {
    require(start >= 0 && n > 0 && start + n <= val(a).cols(), "slice_cols: range out of bounds");
    return {push(val(a).middleCols(start, n), [a, start, n](Tape& t, int self) {
        t.g(a.id).middleCols(start, n) += t.g(self);
    })};
}

Var Tape::slice_rows(Var a, int start, int n) {
    require(start >= 0 && n > 0 && start + n <= val(a).rows(), "slice_rows: range out of bounds");
    return {push(val(a).middleRows(start, n), [a, start, n](Tape& t, int self) {
        t.g(a.id).middleRows(start, n) += t.g(self);
    })};
}

Var Tape::gather_rows(Var a, std::vector<int> idx) {
    const Mat& x = val(a);
    Mat out(static_cast<int>(idx.size()), x.cols());
    for (size_t r = 0; r < idx.size(); ++r) {
        require(idx[r] >= 0 && idx[r] < x.rows(), "gather_rows: index out of range");
        out.row(static_cast<int>(r)) = x.row(idx[r]);
    }
    return {push(std::move(out), [a, idx = std::move(idx)](Tape& t, int self) {
        for (size_t r = 0; r < idx.size(); ++r)
            t.g(a.id).row(idx[r]) += t.g(self).row(static_cast<int>(r));
    })};
}

Var Tape::pool(Var x, const MeshTopology::PoolLevel& level, bool transposed) {
    const Mat& xin = val(x);
    const auto* lv = &level;
    if (!transposed) {
        Mat out = Mat::Zero(lv->coarse_count, xin.cols());
        for (int c = 0; c < lv->coarse_count; ++c) {
            const auto& cell = lv->cells[static_cast<size_t>(c)];
            const auto& w = lv->weights[static_cast<size_t>(c)];
            for (size_t j = 0; j < cell.size(); ++j) out.row(c) += w[j] * xin.row(cell[j]);
        }
        return {push(std::move(out), [x, lv](Tape& t, int self) {
            const Mat& dy = t.g(self);
            for (int c = 0; c < lv->coarse_count; ++c) {
                const auto& cell = lv->cells[static_cast<size_t>(c)];
                const auto& w = lv->weights[static_cast<size_t>(c)];
                for (size_t j = 0; j < cell.size(); ++j)
                    t.g(x.id).row(cell[j]) += w[j] * dy.row(c);
            }
        })};
    }
    require(xin.rows() == lv->coarse_count, "pool: transposed input row mismatch");
    int fine_count = 0;
    for (const auto& cell : lv->cells)
        for (int j : cell) fine_count = std::max(fine_count, j + 1);
    Mat out = Mat::Zero(fine_count, xin.cols());
    for (int c = 0; c < lv->coarse_count; ++c) {
        const auto& cell = lv->cells[static_cast<size_t>(c)];
        const auto& w = lv->weights[static_cast<size_t>(c)];
        for (size_t j = 0; j < cell.size(); ++j) out.row(cell[j]) += w[j] * xin.row(c);
    }
    return {push(std::move(out), [x, lv](Tape& t, int self) {
        const Mat& dy = t.g(self);
        for (int c = 0; c < lv->coarse_count; ++c) {
            const auto& cell = lv->cells[static_cast<size_t>(c)];
            const auto& w = lv->weights[static_cast<size_t>(c)];
            for (size_t j = 0; j < cell.size(); ++j) t.g(x.id).row(c) += w[j] * dy.row(cell[j]);
        }
    })};
}

Var Tape::mesh_conv(Var x, Var coeffs, Var bases, Var bias, const MeshConvIndex& index,
                    int basis_count) {
    const Mat& xin = val(x);
    const Mat& al = val(coeffs);
    const Mat& wb = val(bases);
    int c_in = static_cast<int>(xin.cols());
    require(xin.rows() == index.vertex_count, "mesh_conv: vertex count mismatch");
    require(al.rows() == index.pair_count() && al.cols() == basis_count,
            "mesh_conv: coefficient shape mismatch");
    require(wb.rows() == static_cast<long>(basis_count) * c_in, "mesh_conv: basis shape mismatch");
    int c_out = static_cast<int>(wb.cols());
    require(val(bias).rows() == 1 && val(bias).cols() == c_out, "mesh_conv: bias shape mismatch");

    auto mixed = std::make_shared<std::vector<Mat>>();
    mixed->reserve(static_cast<size_t>(basis_count));
    Mat out = val(bias).replicate(index.vertex_count, 1);
    for (int k = 0; k < basis_count; ++k) {
        Mat tk = Mat::Zero(index.vertex_count, c_in);
        for (int p = 0; p < index.pair_count(); ++p)
            tk.row(index.pair_i[static_cast<size_t>(p)]) +=
                al(p, k) * xin.row(index.pair_j[static_cast<size_t>(p)]);
        out.noalias() += tk * wb.middleRows(k * c_in, c_in);
        mixed->push_back(std::move(tk));
    }
    const MeshConvIndex* idx = &index;
    return {push(std::move(out),
                 [x, coeffs, bases, bias, idx, basis_count, c_in, mixed](Tape& t, int self) {
        const Mat& dy = t.g(self);
        t.g(bias.id).row(0) += dy.colwise().sum();
        const Mat& xin = t.v(x.id);
        const Mat& al = t.v(coeffs.id);
        const Mat& wb = t.v(bases.id);
        for (int k = 0; k < basis_count; ++k) {
            t.g(bases.id).middleRows(k * c_in, c_in).noalias() +=
                (*mixed)[static_cast<size_t>(k)].transpose() * dy;
            Mat dtk = dy * wb.middleRows(k * c_in, c_in).transpose();
            for (int p = 0; p < idx->pair_count(); ++p) {
                int i = idx->pair_i[static_cast<size_t>(p)];
                int j = idx->pair_j[static_cast<size_t>(p)];
                t.g(coeffs.id)(p, k) += dtk.row(i).dot(xin.row(j));
                t.g(x.id).row(j) += al(p, k) * dtk.row(i);
            }
        }
    })};
}

Var Tape::im2col(Var img, const Im2colIndex& index) {
    const Mat& x = val(img);
    require(x.rows() == static_cast<long>(index.in_h) * index.in_w,
            "im2col: pixel count mismatch");
    int c = static_cast<int>(x.cols());
    int cells = index.kh * index.kw;
    int pixels = index.out_h * index.out_w;
    Mat out = Mat::Zero(pixels, cells * c);
    for (int p = 0; p < pixels; ++p) {
        for (int q = 0; q < cells; ++q) {
            int s = index.src[static_cast<size_t>(p) * cells + q];
            if (s >= 0) out.block(p, q * c, 1, c) = x.row(s);
        }
    }
    const Im2colIndex* idx = &index;
    return {push(std::move(out), [img, idx, c, cells, pixels](Tape& t, int self) {
        const Mat& dy = t.g(self);
        for (int p = 0; p < pixels; ++p) {
            for (int q = 0; q < cells; ++q) {
                int s = idx->src[static_cast<size_t>(p) * cells + q];
                if (s >= 0) t.g(img.id).row(s) += dy.block(p, q * c, 1, c);
            }
        }
    })};
}

Var Tape::st_quantize(Var z, const Mat& quantized) {
    require(val(z).rows() == quantized.rows() && val(z).cols() == quantized.cols(),
            "st_quantize: shape mismatch");
    return {push(quantized, [z](Tape& t, int self) { t.g(z.id) += t.g(self); })};
}

}  // namespace meshtok
