#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "meshtok/codec.hpp"
#include "meshtok/hash.hpp"
#include "meshtok/io.hpp"
#include "meshtok/metrics.hpp"
#include "meshtok/model.hpp"
#include "meshtok/synth.hpp"
#include "meshtok/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace meshtok;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

void print_summary(const std::string& command, const std::vector<std::string>& artifacts,
                   json extra = json::object()) {
    json out;
    out["command"] = command;
    out["exit_code"] = 0;
    out["artifacts"] = artifacts;
    out["summary"] = std::move(extra);
    std::cout << out.dump(2) << std::endl;
}

TopologyPtr resolve_topology(const std::string& topology_path, const fs::path& data_dir) {
    if (!topology_path.empty())
        return std::make_shared<MeshTopology>(read_topology_json(topology_path));
    if (!data_dir.empty() && fs::exists(data_dir / "topology.json"))
        return std::make_shared<MeshTopology>(read_topology_json(data_dir / "topology.json"));
    return build_desk_template().rest_mesh.topology;
}

JointRegressor resolve_regressor(const std::string& regressor_path, const fs::path& data_dir) {
    if (!regressor_path.empty()) return read_regressor_json(regressor_path);
    if (!data_dir.empty() && fs::exists(data_dir / "regressor.json"))
        return read_regressor_json(data_dir / "regressor.json");
    return build_joint_regressor(build_desk_template());
}

TrainConfig load_train_config(const std::string& path) {
    if (path.empty()) return TrainConfig{};
    return train_config_from_json(read_text_file(path));
}

std::vector<int> parse_index_list(const std::string& csv) {
    std::vector<int> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    return out;
}

Mat grid_from_tokens(const MeshCodec& codec, const TokenFile& tf, const std::string& label) {
    require(tf.codec_fingerprint == to_hex(codec.fingerprint()),
            label + ": token file was produced by a different codec (fingerprint mismatch)");
    require(tf.n == codec.cell_count(), label + ": token count does not match the codec");
    require(tf.s == codec.config().codebook_size, label + ": codebook size does not match");
    return codec.dequantize(tf.tokens);
}

int cmd_gen_data(int count, uint64_t seed, const std::string& out_dir, int image_size,
                 const std::string& codec_path) {
    ArticulatedTemplate tmpl = build_desk_template();
    std::shared_ptr<MeshCodec> codec;
    if (!codec_path.empty())
        codec = std::make_shared<MeshCodec>(MeshCodec::load(codec_path, tmpl.rest_mesh.topology));

    Dataset ds = build_dataset(tmpl, count, seed, codec.get(), image_size);
    save_dataset(out_dir, ds);
    write_topology_json(fs::path(out_dir) / "topology.json", *tmpl.rest_mesh.topology);
    write_regressor_json(fs::path(out_dir) / "regressor.json", build_joint_regressor(tmpl));

    print_summary("gen-data",
                  {out_dir + "/manifest.json", out_dir + "/topology.json",
                   out_dir + "/regressor.json"},
                  {{"count", count},
                   {"seed", seed},
                   {"fingerprint", to_hex(ds.fingerprint())},
                   {"splits",
                    {{"train", ds.train_idx.size()},
                     {"val", ds.val_idx.size()},
                     {"test", ds.test_idx.size()}}}});
    return kOk;
}

int cmd_train(const std::string& stage, const std::string& config_path,
              const std::string& data_dir, const std::string& out_dir,
              const std::string& codec_path, const std::string& topology_path,
              const std::string& regressor_path, const std::vector<std::string>& ablations,
              int epochs_override, double lr_override, uint64_t seed_override) {
    TrainConfig cfg = load_train_config(config_path);
    cfg.stage = stage;
    for (const std::string& a : ablations) {
        if (a == "loss_3d")
            cfg.ablation_loss_3d = true;
        else if (a == "no_reprojection")
            cfg.ablation_no_reprojection = true;
        else
            require(false, "unknown ablation flag: " + a);
    }
    if (epochs_override > 0) cfg.epochs = epochs_override;
    if (lr_override > 0) cfg.learning_rate = lr_override;
    if (seed_override != 0) cfg.seed = seed_override;
    cfg.validate();

    TopologyPtr topo = resolve_topology(topology_path, data_dir);
    Dataset ds = load_dataset(data_dir, topo);
    fs::create_directories(out_dir);
    std::ofstream log_stream(fs::path(out_dir) / "train_log.jsonl");

    if (stage == "codec") {
        CodecConfig ccfg;
        CodecTrainResult res = train_codec(cfg, ds, topo, ccfg, &log_stream);
        fs::path bin = fs::path(out_dir) / "codec.bin";
        fs::path man = fs::path(out_dir) / "codec.manifest.json";
        res.codec->save(bin, man, to_hex(ds.fingerprint()), res.val_pve_mm);
        if (res.diverged) {
            std::cerr << res.divergence_message << "\n";
            return kRuntime;
        }
        print_summary("train", {bin.string(), man.string(), (fs::path(out_dir) / "train_log.jsonl").string()},
                      {{"stage", "codec"},
                       {"epochs_run", res.epochs_run},
                       {"val_pve_mm", res.val_pve_mm}});
        return kOk;
    }

    require(!codec_path.empty(), "predictor training needs --codec");
    auto codec = std::make_shared<const MeshCodec>(MeshCodec::load(codec_path, topo));
    JointRegressor reg = resolve_regressor(regressor_path, data_dir);
    ModelConfig mc;
    mc.image_h = ds.image_size;
    mc.image_w = ds.image_size;
    mc.cells = codec->cell_count();
    mc.codebook_size = codec->config().codebook_size;
    Mat pose = initial_pose_constant(build_desk_template());
    mc.pose_joints = static_cast<int>(pose.rows());

    PredictorTrainResult res = train_predictor(cfg, ds, codec, mc, pose, reg, &log_stream);
    fs::path bin = fs::path(out_dir) / "model.bin";
    fs::path man = fs::path(out_dir) / "model.manifest.json";
    res.model->save(bin, man);
    if (res.diverged) {
        std::cerr << res.divergence_message << "\n";
        return kRuntime;
    }
    print_summary("train", {bin.string(), man.string(), (fs::path(out_dir) / "train_log.jsonl").string()},
                  {{"stage", "predictor"},
                   {"epochs_run", res.epochs_run},
                   {"val_pve_mm", res.val_pve_mm},
                   {"val_token_acc", res.val_token_acc}});
    return kOk;
}

int cmd_eval(const std::string& model_path, const std::string& codec_path,
             const std::string& data_dir, const std::string& report_prefix,
             const std::string& split, const std::string& topology_path,
             const std::string& regressor_path) {
    ensure(fs::exists(model_path), "model checkpoint not found: " + model_path);
    ensure(fs::exists(codec_path), "codec checkpoint not found: " + codec_path);
    TopologyPtr topo = resolve_topology(topology_path, data_dir);
    auto codec = std::make_shared<const MeshCodec>(MeshCodec::load(codec_path, topo));
    VqhpsModel model = VqhpsModel::load(model_path, codec);
    Dataset ds = load_dataset(data_dir, topo);
    JointRegressor reg = resolve_regressor(regressor_path, data_dir);

    EvalReport rep = evaluate(model, *codec, ds, split, reg);
    std::string json_path = report_prefix + ".json";
    std::string csv_path = report_prefix + ".csv";
    write_text_file(json_path, rep.to_json());
    write_text_file(csv_path, rep.to_csv());

    json summary = {{"split", rep.split},
                    {"count", rep.count},
                    {"pve_mm", rep.pve_mm},
                    {"mpjpe_mm", rep.mpjpe_mm},
                    {"pa_mpjpe_mm", rep.pa_mpjpe_mm},
                    {"token_top1", rep.token_top1}};
    if (!rep.warning.empty()) summary["warning"] = rep.warning;
    print_summary("eval", {json_path, csv_path}, summary);
    return kOk;
}

int cmd_codec(const std::string& action, const std::string& codec_path,
              const std::string& mesh_path, const std::string& tokens_path,
              const std::string& out_path, const std::string& topology_path) {
    TopologyPtr topo = resolve_topology(topology_path, "");
    MeshCodec codec = MeshCodec::load(codec_path, topo);

    if (action == "encode") {
        ObjData obj = read_obj(mesh_path);
        CanonicalMesh mesh;
        mesh.topology = topo;
        mesh.vertices = obj.vertices;
        QuantizeResult q = codec.quantize(codec.encode(mesh));
        TokenFile tf;
        tf.n = codec.cell_count();
        tf.s = codec.config().codebook_size;
        tf.codec_fingerprint = to_hex(codec.fingerprint());
        tf.tokens = q.tokens;
        write_tokens_json(out_path, tf);
        print_summary("codec", {out_path}, {{"action", "encode"}, {"tokens", q.tokens}});
        return kOk;
    }

    TokenFile tf = read_tokens_json(tokens_path);
    Mat grid = grid_from_tokens(codec, tf, tokens_path);
    CanonicalMesh mesh = codec.decode(grid);
    write_obj(out_path, mesh.vertices, topo->faces);
    print_summary("codec", {out_path}, {{"action", "decode"}});
    return kOk;
}

int cmd_edit(const std::string& action, const std::string& codec_path, const std::string& a_path,
             const std::string& b_path, const std::string& indices_csv, const std::string& part,
             double t_value, int frames, const std::string& out_prefix,
             const std::string& topology_path) {
    TopologyPtr topo = resolve_topology(topology_path, "");
    MeshCodec codec = MeshCodec::load(codec_path, topo);
    TokenFile ta = read_tokens_json(a_path);
    TokenFile tb = read_tokens_json(b_path);
    grid_from_tokens(codec, ta, a_path);
    grid_from_tokens(codec, tb, b_path);

    std::vector<std::string> artifacts;
    if (action == "swap") {
        std::vector<int> indices;
        if (!part.empty()) {
            require(indices_csv.empty(), "pass either --indices or --part, not both");
            Rng rng(1234);
            auto parts = identify_part_indices(codec, build_desk_template().part_labels, 8, rng);
            require(parts.count(part) > 0, "no latent cells attributed to part: " + part);
            indices = parts[part];
        } else {
            indices = parse_index_list(indices_csv);
        }
        std::vector<int> swapped = swap_body_part(ta.tokens, tb.tokens, indices);
        CanonicalMesh mesh = codec.decode(codec.dequantize(swapped));
        std::string obj_path = out_prefix + ".obj";
        std::string tok_path = out_prefix + ".tokens.json";
        write_obj(obj_path, mesh.vertices, topo->faces);
        TokenFile tf;
        tf.n = codec.cell_count();
        tf.s = codec.config().codebook_size;
        tf.codec_fingerprint = to_hex(codec.fingerprint());
        tf.tokens = swapped;
        write_tokens_json(tok_path, tf);
        artifacts = {obj_path, tok_path};
        print_summary("edit", artifacts,
                      {{"action", "swap"}, {"swapped_cells", indices.size()}});
        return kOk;
    }

    Mat za = codec.dequantize(ta.tokens);
    Mat zb = codec.dequantize(tb.tokens);
    if (frames > 0) {
        for (int i = 0; i < frames; ++i) {
            double t = static_cast<double>(i + 1) / (frames + 1);
            CanonicalMesh mesh = interpolate_latent(codec, za, zb, t);
            char name[32];
            std::snprintf(name, sizeof(name), "_%03d.obj", i);
            std::string path = out_prefix + name;
            write_obj(path, mesh.vertices, topo->faces);
            artifacts.push_back(path);
        }
    } else {
        CanonicalMesh mesh = interpolate_latent(codec, za, zb, t_value);
        std::string path = out_prefix + ".obj";
        write_obj(path, mesh.vertices, topo->faces);
        artifacts.push_back(path);
    }
    print_summary("edit", artifacts, {{"action", "interp"}, {"frames", artifacts.size()}});
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vector-quantized human mesh codec and token predictor"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic body dataset");
    int gen_count = 0;
    uint64_t gen_seed = 1;
    std::string gen_out;
    int gen_image_size = 64;
    std::string gen_codec;
    gen->add_option("--count", gen_count, "Number of samples")->required();
    gen->add_option("--seed", gen_seed, "Generation seed");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--image-size", gen_image_size, "Square image resolution");
    gen->add_option("--codec", gen_codec, "Codec checkpoint for ground-truth tokens");

    auto* train = app.add_subcommand("train", "Train the codec or the predictor");
    std::string train_stage, train_config, train_data, train_out, train_codec_path;
    std::string train_topology, train_regressor;
    std::vector<std::string> train_ablations;
    int train_epochs = 0;
    double train_lr = 0;
    uint64_t train_seed = 0;
    train->add_option("--stage", train_stage, "codec | predictor")
        ->required()
        ->check(CLI::IsMember({"codec", "predictor"}));
    train->add_option("--config", train_config, "Training config JSON");
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--out", train_out, "Output directory")->required();
    train->add_option("--codec", train_codec_path, "Frozen codec checkpoint (predictor stage)");
    train->add_option("--topology", train_topology, "Topology JSON override");
    train->add_option("--regressor", train_regressor, "Joint regressor JSON override");
    train->add_option("--ablation", train_ablations, "loss_3d | no_reprojection");
    train->add_option("--epochs", train_epochs, "Override epoch count");
    train->add_option("--lr", train_lr, "Override learning rate");
    train->add_option("--seed", train_seed, "Override seed");

    auto* eval = app.add_subcommand("eval", "Evaluate a predictor checkpoint");
    std::string eval_model, eval_codec, eval_data, eval_report, eval_split = "test";
    std::string eval_topology, eval_regressor;
    eval->add_option("--model", eval_model, "Model checkpoint")->required();
    eval->add_option("--codec", eval_codec, "Codec checkpoint")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();
    eval->add_option("--report", eval_report, "Report path prefix")->required();
    eval->add_option("--split", eval_split, "Dataset split")
        ->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--topology", eval_topology, "Topology JSON override");
    eval->add_option("--regressor", eval_regressor, "Joint regressor JSON override");

    auto* codec_cmd = app.add_subcommand("codec", "Encode a mesh to tokens or decode tokens");
    std::string codec_action, codec_path, codec_mesh, codec_tokens, codec_out, codec_topology;
    codec_cmd->add_option("action", codec_action, "encode | decode")
        ->required()
        ->check(CLI::IsMember({"encode", "decode"}));
    codec_cmd->add_option("--codec", codec_path, "Codec checkpoint")->required();
    codec_cmd->add_option("--mesh", codec_mesh, "Input OBJ (encode)");
    codec_cmd->add_option("--tokens", codec_tokens, "Input token file (decode)");
    codec_cmd->add_option("--out", codec_out, "Output path")->required();
    codec_cmd->add_option("--topology", codec_topology, "Topology JSON override");

    auto* edit = app.add_subcommand("edit", "Latent-space editing: part swap or interpolation");
    std::string edit_action, edit_codec, edit_a, edit_b, edit_indices, edit_part, edit_out;
    std::string edit_topology;
    double edit_t = 0.5;
    int edit_frames = 0;
    edit->add_option("action", edit_action, "swap | interp")
        ->required()
        ->check(CLI::IsMember({"swap", "interp"}));
    edit->add_option("--codec", edit_codec, "Codec checkpoint")->required();
    edit->add_option("--a", edit_a, "Token file A")->required();
    edit->add_option("--b", edit_b, "Token file B")->required();
    edit->add_option("--indices", edit_indices, "Comma-separated latent cell indices (swap)");
    edit->add_option("--part", edit_part, "Named body part to swap (desk template)");
    edit->add_option("--t", edit_t, "Interpolation parameter in [0,1]");
    edit->add_option("--frames", edit_frames, "Emit this many intermediate frames");
    edit->add_option("--out", edit_out, "Output path prefix")->required();
    edit->add_option("--topology", edit_topology, "Topology JSON override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return kUsage;
    }

    try {
        if (gen->parsed()) {
            if (gen_count <= 0) {
                std::cerr << "gen-data: --count must be a positive integer\n";
                return kUsage;
            }
            return cmd_gen_data(gen_count, gen_seed, gen_out, gen_image_size, gen_codec);
        }
        if (train->parsed())
            return cmd_train(train_stage, train_config, train_data, train_out, train_codec_path,
                             train_topology, train_regressor, train_ablations, train_epochs,
                             train_lr, train_seed);
        if (eval->parsed())
            return cmd_eval(eval_model, eval_codec, eval_data, eval_report, eval_split,
                            eval_topology, eval_regressor);
        if (codec_cmd->parsed()) {
            if (codec_action == "encode" && codec_mesh.empty()) {
                std::cerr << "codec encode: --mesh is required\n";
                return kUsage;
            }
            if (codec_action == "decode" && codec_tokens.empty()) {
                std::cerr << "codec decode: --tokens is required\n";
                return kUsage;
            }
            return cmd_codec(codec_action, codec_path, codec_mesh, codec_tokens, codec_out,
                             codec_topology);
        }
        if (edit->parsed()) {
            // --indices "" is a legitimate empty swap set; only a fully absent
            // selection is a usage error.
            if (edit_action == "swap" && edit->count("--indices") == 0 && edit_part.empty()) {
                std::cerr << "edit swap: pass --indices or --part\n";
                return kUsage;
            }
            return cmd_edit(edit_action, edit_codec, edit_a, edit_b, edit_indices, edit_part,
                            edit_t, edit_frames, edit_out, edit_topology);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}
