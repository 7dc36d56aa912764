#include "meshtok/codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "meshtok/hash.hpp"
#include "meshtok/io.hpp"

namespace meshtok {

void Codebook::validate() const {
    require(entries.rows() >= 2, "codebook needs at least two entries");
    require(all_finite(entries), "codebook entries must be finite");
    require(usage_counts.size() == static_cast<size_t>(entries.rows()),
            "codebook usage count size mismatch");
}

QuantizeResult quantize(const Mat& z, const Codebook& cb) {
    require(cb.entries.rows() > 0, "quantize: empty codebook");
    require(z.cols() == cb.entries.cols(), "quantize: latent dimension mismatch");
    require(all_finite(z), "quantize: latent grid must be finite");
    int n = static_cast<int>(z.rows());
    int s_count = cb.size();
    int l = cb.dim();
    QuantizeResult out;
    out.tokens.resize(static_cast<size_t>(n));
    out.grid.resize(n, l);
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int s = 0; s < s_count; ++s) {
            double d = 0.0;
            for (int c = 0; c < l; ++c) {
                double diff = z(i, c) - cb.entries(s, c);
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        out.tokens[static_cast<size_t>(i)] = best;
        out.grid.row(i) = cb.entries.row(best);
    }
    out.codebook_loss = (z - out.grid).squaredNorm() / static_cast<double>(z.size());
    out.commitment_loss = out.codebook_loss;
    return out;
}

Mat dequantize(const std::vector<int>& tokens, const Codebook& cb) {
    Mat out(static_cast<int>(tokens.size()), cb.dim());
    for (size_t i = 0; i < tokens.size(); ++i) {
        require(tokens[i] >= 0 && tokens[i] < cb.size(), "dequantize: token index out of range");
        out.row(static_cast<int>(i)) = cb.entries.row(tokens[i]);
    }
    return out;
}

std::vector<int> swap_body_part(const std::vector<int>& tokens_a,
                                const std::vector<int>& tokens_b,
                                const std::vector<int>& index_set) {
    require(tokens_a.size() == tokens_b.size(), "swap_body_part: token length mismatch");
    std::vector<int> out = tokens_a;
    for (int i : index_set) {
        require(i >= 0 && i < static_cast<int>(out.size()), "swap_body_part: index out of range");
        out[static_cast<size_t>(i)] = tokens_b[static_cast<size_t>(i)];
    }
    return out;
}

MeshCodec::MeshCodec(TopologyPtr topology, CodecConfig cfg, Rng& rng)
    : topo_(std::move(topology)), cfg_(std::move(cfg)) {
    require(topo_ != nullptr, "codec needs a topology");
    topo_->validate();
    require(cfg_.latent_dim > 0 && cfg_.codebook_size >= 2 && cfg_.basis_count > 0,
            "invalid codec configuration");
    require(static_cast<int>(cfg_.channels.size()) == topo_->level_count() - 1,
            "codec channel list must have one width per downsampling step");
    topo_hash_ = topo_->hash();

    for (int l = 0; l < topo_->level_count(); ++l)
        conv_index_.push_back(make_conv_index(topo_->neighborhoods[static_cast<size_t>(l)]));

    int levels = topo_->level_count();
    auto make_conv = [&](const std::string& name, int level, int c_in, int c_out) {
        const MeshConvIndex& idx = conv_index_[static_cast<size_t>(level)];
        Parameter& coeffs = params_.create(name + ".coeffs", idx.pair_count(), cfg_.basis_count);
        Parameter& bases =
            params_.create(name + ".bases", cfg_.basis_count * c_in, c_out);
        params_.create(name + ".bias", 1, c_out);
        const auto& hood = topo_->neighborhoods[static_cast<size_t>(level)];
        int p = 0;
        for (const auto& nbrs : hood) {
            double w = 1.0 / static_cast<double>(nbrs.size());
            for (size_t j = 0; j < nbrs.size(); ++j, ++p)
                for (int k = 0; k < cfg_.basis_count; ++k)
                    coeffs.value(p, k) = w + 0.01 * rng.normal();
        }
        double std_w = 1.0 / std::sqrt(static_cast<double>(cfg_.basis_count * c_in));
        for (int r = 0; r < bases.value.rows(); ++r)
            for (int c = 0; c < bases.value.cols(); ++c) bases.value(r, c) = std_w * rng.normal();
    };

    // Encoder: conv+tanh+pool per level, then a linear conv to the latent
    // width at the coarsest level. Decoder mirrors it with transpose pools.
    int c_prev = 3;
    for (int l = 0; l < levels - 1; ++l) {
        make_conv("enc" + std::to_string(l), l, c_prev, cfg_.channels[static_cast<size_t>(l)]);
        c_prev = cfg_.channels[static_cast<size_t>(l)];
    }
    make_conv("enc" + std::to_string(levels - 1), levels - 1, c_prev, cfg_.latent_dim);

    c_prev = cfg_.latent_dim;
    for (int l = levels - 1; l >= 1; --l) {
        int c_out = cfg_.channels[static_cast<size_t>(l - 1)];
        make_conv("dec" + std::to_string(l), l, c_prev, c_out);
        c_prev = c_out;
    }
    make_conv("dec0", 0, c_prev, 3);

    codebook_.entries = Mat::Zero(cfg_.codebook_size, cfg_.latent_dim);
    for (int s = 0; s < cfg_.codebook_size; ++s)
        for (int c = 0; c < cfg_.latent_dim; ++c) codebook_.entries(s, c) = 0.1 * rng.normal();
    codebook_.usage_counts.assign(static_cast<size_t>(cfg_.codebook_size), 0);
    codebook_.ema_size = Vec::Ones(cfg_.codebook_size);
    codebook_.ema_sum = codebook_.entries;
}

int MeshCodec::cell_count() const {
    return topo_->level_vertex_count(topo_->level_count() - 1);
}

void MeshCodec::check_mesh(const RegisteredMesh& mesh) const {
    require(mesh.topology != nullptr, "mesh has no topology");
    if (mesh.topology.get() != topo_.get())
        require(mesh.topology->hash() == topo_hash_, "mesh topology does not match codec");
    require(mesh.vertices.rows() == topo_->vertex_count, "mesh vertex count mismatch");
}

Var MeshCodec::run_encoder(Tape& t, Var x, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    int levels = topo_->level_count();
    Var h = x;
    for (int l = 0; l < levels - 1; ++l) {
        std::string name = "enc" + std::to_string(l);
        h = t.mesh_conv(h, P(name + ".coeffs"), P(name + ".bases"), P(name + ".bias"),
                        conv_index_[static_cast<size_t>(l)], cfg_.basis_count);
        h = t.tanh_(h);
        h = t.pool(h, topo_->level_maps[static_cast<size_t>(l)], false);
    }
    std::string name = "enc" + std::to_string(levels - 1);
    return t.mesh_conv(h, P(name + ".coeffs"), P(name + ".bases"), P(name + ".bias"),
                       conv_index_[static_cast<size_t>(levels - 1)], cfg_.basis_count);
}

Var MeshCodec::run_decoder(Tape& t, Var zd, ParamStore* train) const {
    auto P = [&](const std::string& n) -> Var {
        return train ? t.param(train->get(n)) : t.constant(params_.get(n).value);
    };
    int levels = topo_->level_count();
    Var h = zd;
    for (int l = levels - 1; l >= 1; --l) {
        std::string name = "dec" + std::to_string(l);
        h = t.mesh_conv(h, P(name + ".coeffs"), P(name + ".bases"), P(name + ".bias"),
                        conv_index_[static_cast<size_t>(l)], cfg_.basis_count);
        h = t.tanh_(h);
        h = t.pool(h, topo_->level_maps[static_cast<size_t>(l - 1)], true);
    }
    h = t.mesh_conv(h, P("dec0.coeffs"), P("dec0.bases"), P("dec0.bias"), conv_index_[0],
                    cfg_.basis_count);
    int v = topo_->vertex_count;
    Var mean_row = t.matmul(t.constant(Mat::Constant(1, v, 1.0 / v)), h);
    return t.sub(h, t.tile_rows(mean_row, v));
}

Var MeshCodec::encode_t(Tape& t, Var vertices) { return run_encoder(t, vertices, &params_); }
Var MeshCodec::decode_t(Tape& t, Var zd) { return run_decoder(t, zd, &params_); }
Var MeshCodec::encode_frozen(Tape& t, Var vertices) const {
    return run_encoder(t, vertices, nullptr);
}
Var MeshCodec::decode_frozen(Tape& t, Var zd) const { return run_decoder(t, zd, nullptr); }

LatentGrid MeshCodec::encode(const CanonicalMesh& mesh) const {
    check_mesh(mesh);
    Tape t;
    Var z = encode_frozen(t, t.constant(mesh.vertices));
    return t.val(z);
}

CanonicalMesh MeshCodec::decode(const Mat& zd) const {
    require(zd.rows() == cell_count() && zd.cols() == cfg_.latent_dim,
            "decode: latent grid shape mismatch");
    require(all_finite(zd), "decode: latent grid must be finite");
    Tape t;
    Var y = decode_frozen(t, t.constant(zd));
    CanonicalMesh out;
    out.topology = topo_;
    out.vertices = t.val(y);
    return out;
}

CanonicalMesh MeshCodec::reconstruct(const CanonicalMesh& mesh) const {
    return decode(quantize(encode(mesh)).grid);
}

void MeshCodec::ema_update(const Mat& z, const std::vector<int>& tokens) {
    require(z.rows() == static_cast<long>(tokens.size()), "ema_update: row count mismatch");
    int s_count = codebook_.size();
    Vec counts = Vec::Zero(s_count);
    Mat sums = Mat::Zero(s_count, codebook_.dim());
    for (size_t i = 0; i < tokens.size(); ++i) {
        int s = tokens[i];
        require(s >= 0 && s < s_count, "ema_update: token out of range");
        counts(s) += 1.0;
        sums.row(s) += z.row(static_cast<int>(i));
        codebook_.usage_counts[static_cast<size_t>(s)] += 1;
    }
    double d = cfg_.ema_decay;
    codebook_.ema_size = d * codebook_.ema_size + (1.0 - d) * counts;
    codebook_.ema_sum = d * codebook_.ema_sum + (1.0 - d) * sums;
    double total = codebook_.ema_size.sum();
    const double eps = 1e-5;
    for (int s = 0; s < s_count; ++s) {
        double size = (codebook_.ema_size(s) + eps) / (total + s_count * eps) * total;
        codebook_.entries.row(s) = codebook_.ema_sum.row(s) / size;
    }
}

void MeshCodec::init_codebook(const Mat& latent_rows, Rng& rng) {
    int s_count = cfg_.codebook_size;
    int l = cfg_.latent_dim;
    require(latent_rows.cols() == l, "init_codebook: latent dimension mismatch");
    int m = static_cast<int>(latent_rows.rows());

    if (m < s_count) {
        Vec lo = latent_rows.colwise().minCoeff();
        Vec hi = latent_rows.colwise().maxCoeff();
        if (m == 0) {
            lo = Vec::Constant(l, -1.0);
            hi = Vec::Constant(l, 1.0);
        }
        for (int s = 0; s < s_count; ++s)
            for (int c = 0; c < l; ++c)
                codebook_.entries(s, c) = rng.uniform(lo(c), hi(c));
    } else {
        // Lloyd k-means on a bounded subsample.
        int cap = std::min(m, 20000);
        std::vector<int> pick(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) pick[static_cast<size_t>(i)] = i;
        for (int i = 0; i < cap; ++i) {
            int j = rng.uniform_int(i, m - 1);
            std::swap(pick[static_cast<size_t>(i)], pick[static_cast<size_t>(j)]);
        }
        Mat data(cap, l);
        for (int i = 0; i < cap; ++i) data.row(i) = latent_rows.row(pick[static_cast<size_t>(i)]);

        Mat centers(s_count, l);
        for (int s = 0; s < s_count; ++s) centers.row(s) = data.row(rng.uniform_int(0, cap - 1));
        std::vector<int> assign(static_cast<size_t>(cap), 0);
        for (int iter = 0; iter < 10; ++iter) {
            for (int i = 0; i < cap; ++i) {
                int best = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (int s = 0; s < s_count; ++s) {
                    double d = (data.row(i) - centers.row(s)).squaredNorm();
                    if (d < best_d) {
                        best_d = d;
                        best = s;
                    }
                }
                assign[static_cast<size_t>(i)] = best;
            }
            Mat sums = Mat::Zero(s_count, l);
            Vec counts = Vec::Zero(s_count);
            for (int i = 0; i < cap; ++i) {
                sums.row(assign[static_cast<size_t>(i)]) += data.row(i);
                counts(assign[static_cast<size_t>(i)]) += 1.0;
            }
            for (int s = 0; s < s_count; ++s) {
                if (counts(s) > 0.0)
                    centers.row(s) = sums.row(s) / counts(s);
                else
                    centers.row(s) = data.row(rng.uniform_int(0, cap - 1));
            }
        }
        codebook_.entries = centers;
    }
    codebook_.ema_size = Vec::Ones(s_count);
    codebook_.ema_sum = codebook_.entries;
    std::fill(codebook_.usage_counts.begin(), codebook_.usage_counts.end(), int64_t{0});
}

int MeshCodec::reseed_dead_entries(const Mat& latent_rows, const std::vector<int64_t>& epoch_usage,
                                   Rng& rng) {
    require(epoch_usage.size() == static_cast<size_t>(codebook_.size()),
            "reseed: usage vector size mismatch");
    require(latent_rows.rows() > 0, "reseed: empty latent pool");
    int reseeded = 0;
    for (int s = 0; s < codebook_.size(); ++s) {
        if (epoch_usage[static_cast<size_t>(s)] > 0) continue;
        int pick = rng.uniform_int(0, static_cast<int>(latent_rows.rows()) - 1);
        codebook_.entries.row(s) = latent_rows.row(pick);
        codebook_.ema_size(s) = 1.0;
        codebook_.ema_sum.row(s) = codebook_.entries.row(s);
        ++reseeded;
    }
    return reseeded;
}

uint64_t MeshCodec::fingerprint() const {
    Hasher h;
    h.update(static_cast<int64_t>(params_.fingerprint()));
    h.update(codebook_.entries);
    return h.digest();
}

namespace {
constexpr uint32_t kCodecMagic = 0x4d544b43;  // "MTKC"
constexpr uint32_t kCodecVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    ensure(in.good(), "truncated codec file");
    return v;
}

void write_mat(std::ostream& out, const Mat& m) {
    write_pod(out, static_cast<int64_t>(m.rows()));
    write_pod(out, static_cast<int64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double)) * m.size());
}

Mat read_mat(std::istream& in) {
    int64_t rows = read_pod<int64_t>(in);
    int64_t cols = read_pod<int64_t>(in);
    ensure(rows >= 0 && cols >= 0 && rows < (1 << 24) && cols < (1 << 24),
           "codec file: implausible matrix size");
    Mat m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * rows * cols);
    ensure(in.good(), "truncated codec file");
    return m;
}
}  // namespace

void MeshCodec::save(const std::filesystem::path& binary_path,
                     const std::filesystem::path& manifest_path,
                     const std::string& data_fingerprint, double recon_pve) const {
    std::ofstream out(binary_path, std::ios::binary);
    ensure(out.good(), "cannot write codec file: " + binary_path.string());
    write_pod(out, kCodecMagic);
    write_pod(out, kCodecVersion);
    write_pod(out, static_cast<int32_t>(cfg_.latent_dim));
    write_pod(out, static_cast<int32_t>(cfg_.codebook_size));
    write_pod(out, static_cast<int32_t>(cfg_.basis_count));
    write_pod(out, static_cast<int32_t>(cfg_.channels.size()));
    for (int c : cfg_.channels) write_pod(out, static_cast<int32_t>(c));
    write_pod(out, cfg_.commitment_weight);
    write_pod(out, cfg_.ema_decay);
    write_pod(out, topo_hash_);
    params_.save(out);
    write_mat(out, codebook_.entries);
    write_mat(out, codebook_.ema_sum);
    write_pod(out, static_cast<int64_t>(codebook_.ema_size.size()));
    out.write(reinterpret_cast<const char*>(codebook_.ema_size.data()),
              static_cast<std::streamsize>(sizeof(double)) * codebook_.ema_size.size());
    for (int64_t u : codebook_.usage_counts) write_pod(out, u);
    ensure(out.good(), "failed writing codec file: " + binary_path.string());

    nlohmann::json manifest;
    manifest["n"] = cell_count();
    manifest["l"] = cfg_.latent_dim;
    manifest["s"] = cfg_.codebook_size;
    manifest["topology_hash"] = to_hex(topo_hash_);
    manifest["data_fingerprint"] = data_fingerprint;
    manifest["reconstruction_pve_mm"] = recon_pve;
    manifest["fingerprint"] = to_hex(fingerprint());
    write_text_file(manifest_path, manifest.dump(2));
}

MeshCodec MeshCodec::load(const std::filesystem::path& binary_path, TopologyPtr topology) {
    std::ifstream in(binary_path, std::ios::binary);
    ensure(in.good(), "cannot open codec file: " + binary_path.string());
    ensure(read_pod<uint32_t>(in) == kCodecMagic, "not a codec file: " + binary_path.string());
    ensure(read_pod<uint32_t>(in) == kCodecVersion, "unsupported codec file version");
    CodecConfig cfg;
    cfg.latent_dim = read_pod<int32_t>(in);
    cfg.codebook_size = read_pod<int32_t>(in);
    cfg.basis_count = read_pod<int32_t>(in);
    int32_t n_channels = read_pod<int32_t>(in);
    cfg.channels.clear();
    for (int32_t i = 0; i < n_channels; ++i) cfg.channels.push_back(read_pod<int32_t>(in));
    cfg.commitment_weight = read_pod<double>(in);
    cfg.ema_decay = read_pod<double>(in);
    uint64_t stored_hash = read_pod<uint64_t>(in);
    ensure(topology != nullptr, "codec load needs a topology");
    ensure(topology->hash() == stored_hash, "codec file topology hash does not match");

    Rng scratch(0);
    MeshCodec codec(std::move(topology), cfg, scratch);
    codec.params_.load(in);
    codec.codebook_.entries = read_mat(in);
    codec.codebook_.ema_sum = read_mat(in);
    int64_t es = read_pod<int64_t>(in);
    ensure(es == cfg.codebook_size, "codec file: EMA size vector mismatch");
    codec.codebook_.ema_size.resize(es);
    in.read(reinterpret_cast<char*>(codec.codebook_.ema_size.data()),
            static_cast<std::streamsize>(sizeof(double)) * es);
    for (auto& u : codec.codebook_.usage_counts) u = read_pod<int64_t>(in);
    ensure(in.good(), "truncated codec file: " + binary_path.string());
    codec.codebook_.validate();
    return codec;
}

CanonicalMesh interpolate_latent(const MeshCodec& codec, const Mat& z1, const Mat& z2, double t) {
    require(z1.rows() == z2.rows() && z1.cols() == z2.cols(),
            "interpolate_latent: shape mismatch");
    require(t >= 0.0 && t <= 1.0, "interpolate_latent: t must lie in [0,1]");
    // Endpoints decode the untouched input so t=0 and t=1 reproduce the
    // plain round trips bit for bit.
    if (t == 0.0) return codec.decode(codec.quantize(z1).grid);
    if (t == 1.0) return codec.decode(codec.quantize(z2).grid);
    Mat z = (1.0 - t) * z1 + t * z2;
    return codec.decode(codec.quantize(z).grid);
}

std::map<std::string, std::vector<int>> identify_part_indices(
    const std::function<Mat(const Mat&)>& decode, const Mat& base_grid, const Codebook& cb,
    const std::map<std::string, std::vector<int>>& parts, int probe_count, Rng& rng) {
    require(probe_count > 0, "identify_part_indices: probe count must be positive");
    require(!parts.empty(), "identify_part_indices: no parts given");
    Mat base = decode(base_grid);
    int n = static_cast<int>(base_grid.rows());

    std::map<std::string, std::vector<int>> out;
    for (const auto& [name, ids] : parts) {
        require(!ids.empty(), "identify_part_indices: empty part " + name);
        out[name] = {};
    }

    double global_max = 0.0;
    std::vector<std::string> cell_part(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::map<std::string, double> score;
        for (const auto& [name, ids] : parts) score[name] = 0.0;
        for (int probe = 0; probe < probe_count; ++probe) {
            Mat grid = base_grid;
            grid.row(i) = cb.entries.row(rng.uniform_int(0, cb.size() - 1));
            Mat moved = decode(grid) - base;
            for (const auto& [name, ids] : parts) {
                double acc = 0.0;
                for (int v : ids) acc += moved.row(v).norm();
                score[name] += acc / static_cast<double>(ids.size());
            }
        }
        double best = -1.0;
        std::string best_name;
        for (const auto& [name, s] : score) {
            if (s > best) {
                best = s;
                best_name = name;
            }
        }
        global_max = std::max(global_max, best);
        cell_part[static_cast<size_t>(i)] = best_name;
    }
    ensure(global_max > 1e-12, "decoder does not respond to latent probes; cells unattributable");
    for (int i = 0; i < n; ++i) out[cell_part[static_cast<size_t>(i)]].push_back(i);
    return out;
}

std::map<std::string, std::vector<int>> identify_part_indices(
    const MeshCodec& codec, const std::map<std::string, std::vector<int>>& parts,
    int probe_count, Rng& rng) {
    Mat zero = Mat::Zero(codec.cell_count(), codec.config().latent_dim);
    Mat base_grid = codec.quantize(zero).grid;
    auto decode = [&codec](const Mat& grid) { return codec.decode(grid).vertices; };
    return identify_part_indices(decode, base_grid, codec.codebook(), parts, probe_count, rng);
}

}  // namespace meshtok
