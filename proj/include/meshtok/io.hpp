#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "meshtok/mesh.hpp"

namespace meshtok {

// Wavefront OBJ, ASCII, triangular faces. Ignores normals/texcoords/comments.
struct ObjData {
    Mat vertices;
    std::vector<std::array<int, 3>> faces;
};
ObjData read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const Mat& vertices,
               const std::vector<std::array<int, 3>>& faces);

// Topology hierarchy as documented JSON (integer index arrays, float weights).
MeshTopology read_topology_json(const std::filesystem::path& path);
void write_topology_json(const std::filesystem::path& path, const MeshTopology& topo);

// Joint regressor: dense matrix JSON with a layout header.
JointRegressor read_regressor_json(const std::filesystem::path& path);
void write_regressor_json(const std::filesystem::path& path, const JointRegressor& reg);

// Grayscale images as Portable FloatMap ("Pf", little-endian float32 rows,
// bottom row first). In memory images are row-major top-down H*W x 1.
Mat read_pfm(const std::filesystem::path& path, int* width_out = nullptr,
             int* height_out = nullptr);
void write_pfm(const std::filesystem::path& path, const Mat& image, int width, int height);

// Token sequence file with {n, s, codec_fingerprint, tokens}.
struct TokenFile {
    int n = 0;
    int s = 0;
    std::string codec_fingerprint;
    std::vector<int> tokens;
};
TokenFile read_tokens_json(const std::filesystem::path& path);
void write_tokens_json(const std::filesystem::path& path, const TokenFile& tf);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace meshtok
