#include "meshtok/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace meshtok {

using nlohmann::json;

ObjData read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    ensure(in.good(), "cannot open OBJ file: " + path.string());
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            ss >> v.x() >> v.y() >> v.z();
            ensure(!ss.fail(), "malformed vertex line in " + path.string());
            verts.push_back(v);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int k = 0; k < 3; ++k) {
                std::string tok;
                ss >> tok;
                ensure(!tok.empty(), "malformed face line in " + path.string());
                // "i", "i/t", "i/t/n" forms; indices are 1-based.
                f[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            faces.push_back(f);
        }
    }
    ObjData out;
    out.vertices.resize(static_cast<int>(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i) out.vertices.row(static_cast<int>(i)) = verts[i];
    out.faces = std::move(faces);
    return out;
}

void write_obj(const std::filesystem::path& path, const Mat& vertices,
               const std::vector<std::array<int, 3>>& faces) {
    std::ofstream out(path);
    ensure(out.good(), "cannot write OBJ file: " + path.string());
    char buf[128];
    for (int i = 0; i < vertices.rows(); ++i) {
        std::snprintf(buf, sizeof(buf), "v %.9g %.9g %.9g\n", vertices(i, 0), vertices(i, 1),
                      vertices(i, 2));
        out << buf;
    }
    for (const auto& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

MeshTopology read_topology_json(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path));
    MeshTopology topo;
    topo.vertex_count = j.at("vertex_count").get<int>();
    for (const auto& f : j.at("faces"))
        topo.faces.push_back({f.at(0).get<int>(), f.at(1).get<int>(), f.at(2).get<int>()});
    for (const auto& lv : j.at("levels")) {
        MeshTopology::PoolLevel pm;
        pm.coarse_count = lv.at("coarse_count").get<int>();
        pm.cells = lv.at("cells").get<std::vector<std::vector<int>>>();
        pm.weights = lv.at("weights").get<std::vector<std::vector<double>>>();
        topo.level_maps.push_back(std::move(pm));
    }
    topo.neighborhoods = j.at("neighborhoods").get<std::vector<std::vector<std::vector<int>>>>();
    topo.validate();
    return topo;
}

void write_topology_json(const std::filesystem::path& path, const MeshTopology& topo) {
    json j;
    j["vertex_count"] = topo.vertex_count;
    auto& jf = j["faces"] = json::array();
    for (const auto& f : topo.faces) jf.push_back({f[0], f[1], f[2]});
    auto& jl = j["levels"] = json::array();
    for (const auto& pm : topo.level_maps) {
        json lv;
        lv["coarse_count"] = pm.coarse_count;
        lv["cells"] = pm.cells;
        lv["weights"] = pm.weights;
        jl.push_back(std::move(lv));
    }
    j["neighborhoods"] = topo.neighborhoods;
    write_text_file(path, j.dump());
}

JointRegressor read_regressor_json(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path));
    JointRegressor reg;
    reg.layout = j.at("layout").get<std::string>();
    int rows = j.at("rows").get<int>();
    int cols = j.at("cols").get<int>();
    reg.matrix.resize(rows, cols);
    const auto& data = j.at("data");
    ensure(static_cast<int>(data.size()) == rows, "regressor row count mismatch");
    for (int r = 0; r < rows; ++r) {
        ensure(static_cast<int>(data[r].size()) == cols, "regressor column count mismatch");
        for (int c = 0; c < cols; ++c) reg.matrix(r, c) = data[r][c].get<double>();
    }
    reg.validate();
    return reg;
}

void write_regressor_json(const std::filesystem::path& path, const JointRegressor& reg) {
    json j;
    j["layout"] = reg.layout;
    j["rows"] = static_cast<int>(reg.matrix.rows());
    j["cols"] = static_cast<int>(reg.matrix.cols());
    auto& data = j["data"] = json::array();
    for (int r = 0; r < reg.matrix.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < reg.matrix.cols(); ++c) row.push_back(reg.matrix(r, c));
        data.push_back(std::move(row));
    }
    write_text_file(path, j.dump());
}

Mat read_pfm(const std::filesystem::path& path, int* width_out, int* height_out) {
    std::ifstream in(path, std::ios::binary);
    ensure(in.good(), "cannot open PFM file: " + path.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    ensure(magic == "Pf" && w > 0 && h > 0 && scale < 0.0,
           "unsupported PFM header in " + path.string());
    in.get();  // single whitespace after the header
    std::vector<float> row(w);
    Mat img(h * w, 1);
    for (int r = h - 1; r >= 0; --r) {  // PFM stores bottom row first
        in.read(reinterpret_cast<char*>(row.data()), sizeof(float) * w);
        ensure(in.good(), "truncated PFM file: " + path.string());
        for (int c = 0; c < w; ++c) img(r * w + c, 0) = static_cast<double>(row[c]);
    }
    if (width_out) *width_out = w;
    if (height_out) *height_out = h;
    return img;
}

void write_pfm(const std::filesystem::path& path, const Mat& image, int width, int height) {
    require(image.rows() == static_cast<long>(width) * height && image.cols() == 1,
            "write_pfm: image shape mismatch");
    std::ofstream out(path, std::ios::binary);
    ensure(out.good(), "cannot write PFM file: " + path.string());
    out << "Pf\n" << width << " " << height << "\n-1.0\n";
    std::vector<float> row(width);
    for (int r = height - 1; r >= 0; --r) {
        for (int c = 0; c < width; ++c) row[c] = static_cast<float>(image(r * width + c, 0));
        out.write(reinterpret_cast<const char*>(row.data()), sizeof(float) * width);
    }
}

TokenFile read_tokens_json(const std::filesystem::path& path) {
    json j = json::parse(read_text_file(path));
    TokenFile tf;
    tf.n = j.at("n").get<int>();
    tf.s = j.at("s").get<int>();
    tf.codec_fingerprint = j.at("codec_fingerprint").get<std::string>();
    tf.tokens = j.at("tokens").get<std::vector<int>>();
    ensure(static_cast<int>(tf.tokens.size()) == tf.n, "token file: length does not match n");
    for (int t : tf.tokens)
        require(t >= 0 && t < tf.s, "token file: index out of range");
    return tf;
}

void write_tokens_json(const std::filesystem::path& path, const TokenFile& tf) {
    json j;
    j["n"] = tf.n;
    j["s"] = tf.s;
    j["codec_fingerprint"] = tf.codec_fingerprint;
    j["tokens"] = tf.tokens;
    write_text_file(path, j.dump());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    ensure(in.good(), "cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    ensure(out.good(), "cannot write file: " + path.string());
    out << content;
}

}  // namespace meshtok
