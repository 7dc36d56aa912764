#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "meshtok/common.hpp"
#include "meshtok/mesh.hpp"
#include "meshtok/rng.hpp"
#include "meshtok/tape.hpp"

namespace meshtok {

// Latent grids are plain N x L matrices.
using LatentGrid = Mat;

struct Codebook {
    Mat entries;                        // S x L
    std::vector<int64_t> usage_counts;  // diagnostic, one per entry
    Vec ema_size;                       // EMA cluster sizes
    Mat ema_sum;                        // S x L EMA of assigned latents

    int size() const { return static_cast<int>(entries.rows()); }
    int dim() const { return static_cast<int>(entries.cols()); }
    void validate() const;
};

struct QuantizeResult {
    std::vector<int> tokens;
    Mat grid;  // N x L, rows copied from codebook entries
    double codebook_loss = 0.0;
    double commitment_loss = 0.0;
};

// Nearest codebook entry per row, squared Euclidean metric, lowest index
// wins ties. Losses are mean-reduced over all N*L entries.
QuantizeResult quantize(const Mat& z, const Codebook& cb);
Mat dequantize(const std::vector<int>& tokens, const Codebook& cb);

std::vector<int> swap_body_part(const std::vector<int>& tokens_a,
                                const std::vector<int>& tokens_b,
                                const std::vector<int>& index_set);

struct CodecConfig {
    int latent_dim = 9;    // L
    int codebook_size = 512;
    int basis_count = 4;   // shared bases per conv layer
    std::vector<int> channels = {16, 24, 32};  // widths after each downsampling conv
    double commitment_weight = 0.25;
    double ema_decay = 0.99;
};

// Convolutional autoencoder over a fixed mesh hierarchy with a
// vector-quantized latent grid at the coarsest level.
class MeshCodec {
public:
    MeshCodec(TopologyPtr topology, CodecConfig cfg, Rng& rng);

    const CodecConfig& config() const { return cfg_; }
    TopologyPtr topology() const { return topo_; }
    int cell_count() const;  // N, vertices at the coarsest level
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    Codebook& codebook() { return codebook_; }
    const Codebook& codebook() const { return codebook_; }

    LatentGrid encode(const CanonicalMesh& mesh) const;
    CanonicalMesh decode(const Mat& zd) const;
    QuantizeResult quantize(const Mat& z) const { return meshtok::quantize(z, codebook_); }
    Mat dequantize(const std::vector<int>& tokens) const {
        return meshtok::dequantize(tokens, codebook_);
    }
    CanonicalMesh reconstruct(const CanonicalMesh& mesh) const;

    // Tape paths. The trainable variants register parameters for gradient
    // accumulation; the frozen variants record them as constants. Both run
    // the same kernels, so plain and taped forwards are bit-identical.
    Var encode_t(Tape& t, Var vertices);
    Var decode_t(Tape& t, Var zd);
    Var encode_frozen(Tape& t, Var vertices) const;
    Var decode_frozen(Tape& t, Var zd) const;

    // EMA codebook statistics update from one batch of latent rows and
    // their assignments; refreshes entries from the smoothed averages.
    void ema_update(const Mat& z, const std::vector<int>& tokens);
    void init_codebook(const Mat& latent_rows, Rng& rng);
    int reseed_dead_entries(const Mat& latent_rows, const std::vector<int64_t>& epoch_usage,
                            Rng& rng);

    uint64_t fingerprint() const;
    void save(const std::filesystem::path& binary_path,
              const std::filesystem::path& manifest_path,
              const std::string& data_fingerprint, double recon_pve) const;
    static MeshCodec load(const std::filesystem::path& binary_path, TopologyPtr topology);

private:
    Var run_encoder(Tape& t, Var x, ParamStore* train) const;
    Var run_decoder(Tape& t, Var zd, ParamStore* train) const;
    void check_mesh(const RegisteredMesh& mesh) const;

    TopologyPtr topo_;
    CodecConfig cfg_;
    ParamStore params_;
    Codebook codebook_;
    std::vector<MeshConvIndex> conv_index_;  // one per hierarchy level
    uint64_t topo_hash_ = 0;
};

CanonicalMesh interpolate_latent(const MeshCodec& codec, const Mat& z1, const Mat& z2, double t);

// Attributes each latent cell to the named vertex group whose mean
// displacement under random codebook substitution at that cell is largest.
// `decode` maps an N x L grid to vertices; `base_grid` is the probe origin.
std::map<std::string, std::vector<int>> identify_part_indices(
    const std::function<Mat(const Mat&)>& decode, const Mat& base_grid, const Codebook& cb,
    const std::map<std::string, std::vector<int>>& parts, int probe_count, Rng& rng);

std::map<std::string, std::vector<int>> identify_part_indices(
    const MeshCodec& codec, const std::map<std::string, std::vector<int>>& parts,
    int probe_count, Rng& rng);

}  // namespace meshtok
