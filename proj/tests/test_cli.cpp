#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "meshtok/codec.hpp"
#include "meshtok/io.hpp"
#include "meshtok/metrics.hpp"
#include "meshtok/synth.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace meshtok;
using nlohmann::json;

namespace {

int run_cli(const std::string& args, const fs::path& capture, const std::string& env = "") {
    std::string cmd = env + (env.empty() ? "" : " ") + MESHTOK_CLI_PATH + " " + args + " > " +
                      capture.string() + " 2> " + capture.string() + ".err";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("cli usage errors") {
    auto dir = testutil::scratch_dir("cli_usage");
    fs::path cap = dir / "out.txt";

    CHECK(run_cli("frobnicate", cap) == 1);
    CHECK(run_cli("", cap) == 1);
    CHECK(run_cli("gen-data --count 0 --out " + (dir / "ds").string(), cap) == 1);
    CHECK(run_cli("codec encode --codec missing.bin --out x.json", cap) == 1);  // no --mesh
    CHECK(run_cli("codec decode --codec missing.bin --out x.obj", cap) == 1);   // no --tokens
    CHECK(run_cli("train --stage warmup --data x --out y", cap) == 1);
}

TEST_CASE("cli pipeline: data, training, evaluation, codec round trip, edits") {
    auto dir = testutil::scratch_dir("cli_pipe");
    fs::path cap = dir / "out.txt";
    const std::string ds1 = (dir / "ds1").string();
    const std::string ds1b = (dir / "ds1b").string();
    const std::string ds2 = (dir / "ds2").string();
    const std::string runc = (dir / "run_codec").string();
    const std::string runp = (dir / "run_pred").string();

    // Synthetic data generation is reproducible across runs and directories.
    REQUIRE(run_cli("gen-data --count 12 --seed 77 --out " + ds1 + " --image-size 32", cap) == 0);
    CHECK(fs::exists(ds1 + "/manifest.json"));
    CHECK(fs::exists(ds1 + "/topology.json"));
    CHECK(fs::exists(ds1 + "/regressor.json"));
    CHECK(fs::exists(ds1 + "/train/000000.obj"));
    json gen_summary = json::parse(slurp(cap));
    CHECK(gen_summary["command"] == "gen-data");
    CHECK(gen_summary["summary"]["splits"]["train"].get<int>() == 9);
    CHECK(gen_summary["summary"]["splits"]["val"].get<int>() == 1);
    CHECK(gen_summary["summary"]["splits"]["test"].get<int>() == 2);

    REQUIRE(run_cli("gen-data --count 12 --seed 77 --out " + ds1b + " --image-size 32", cap,
                    "MESHTOK_DETERMINISTIC=1") == 0);
    CHECK(slurp(ds1 + "/manifest.json") == slurp(ds1b + "/manifest.json"));
    CHECK(slurp(ds1 + "/test/000000.obj") == slurp(ds1b + "/test/000000.obj"));
    CHECK(slurp(ds1 + "/test/000000.pfm") == slurp(ds1b + "/test/000000.pfm"));

    // Stage 1: codec training emits a checkpoint, a manifest, and a log.
    REQUIRE(run_cli("train --stage codec --data " + ds1 + " --out " + runc +
                        " --epochs 2 --seed 5",
                    cap) == 0);
    REQUIRE(fs::exists(runc + "/codec.bin"));
    json codec_manifest = json::parse(slurp(runc + "/codec.manifest.json"));
    CHECK(codec_manifest["n"].get<int>() == 16);
    CHECK(codec_manifest["s"].get<int>() == 512);
    CHECK(codec_manifest["fingerprint"].is_string());
    CHECK(!split_lines(slurp(runc + "/train_log.jsonl")).empty());

    // Tokens attach when a codec is supplied.
    REQUIRE(run_cli("gen-data --count 12 --seed 77 --out " + ds2 + " --image-size 32 --codec " +
                        runc + "/codec.bin",
                    cap) == 0);
    json ds2_manifest = json::parse(slurp(ds2 + "/manifest.json"));
    CHECK(ds2_manifest["codec_fingerprint"] == codec_manifest["fingerprint"]);
    CHECK(slurp(ds2 + "/test/000000.json").find("\"tokens\"") != std::string::npos);

    // Predictor training without tokens fails validation.
    CHECK(run_cli("train --stage predictor --data " + ds1 + " --codec " + runc +
                      "/codec.bin --out " + (dir / "run_bad").string() + " --epochs 1",
                  cap) == 2);

    // Stage 2: predictor training on the tokenized dataset.
    REQUIRE(run_cli("train --stage predictor --data " + ds2 + " --codec " + runc +
                        "/codec.bin --out " + runp + " --epochs 2 --seed 6",
                    cap) == 0);
    REQUIRE(fs::exists(runp + "/model.bin"));
    CHECK(fs::exists(runp + "/model.manifest.json"));
    {
        auto lines = split_lines(slurp(runp + "/train_log.jsonl"));
        REQUIRE(lines.size() == 2);
        json line = json::parse(lines[0]);
        CHECK(line["stage"] == "predictor");
        CHECK(line["mesh_ce"].get<double>() > 0.0);
        CHECK(line["recon_3d"].get<double>() == 0.0);
    }

    // The soft-3D ablation swaps the logged loss terms.
    REQUIRE(run_cli("train --stage predictor --data " + ds2 + " --codec " + runc +
                        "/codec.bin --out " + (dir / "run_3d").string() +
                        " --epochs 1 --seed 6 --ablation loss_3d",
                    cap) == 0);
    {
        auto lines = split_lines(slurp((dir / "run_3d").string() + "/train_log.jsonl"));
        REQUIRE(!lines.empty());
        json line = json::parse(lines[0]);
        CHECK(line["mesh_ce"].get<double>() == 0.0);
        CHECK(line["recon_3d"].get<double>() > 0.0);
    }

    // Evaluation writes both report formats and keeps PA-MPJPE <= MPJPE.
    const std::string rep = (dir / "rep").string();
    REQUIRE(run_cli("eval --model " + runp + "/model.bin --codec " + runc + "/codec.bin --data " +
                        ds2 + " --report " + rep + " --split test",
                    cap) == 0);
    json rj = json::parse(slurp(rep + ".json"));
    CHECK(rj["split"] == "test");
    CHECK(rj["count"].get<int>() == 2);
    CHECK(rj["pve_mm"].get<double>() > 0.0);
    {
        auto lines = split_lines(slurp(rep + ".csv"));
        REQUIRE(lines.size() == 3);
        CHECK(lines[0] == "index,pve_mm,mpjpe_mm,pa_mpjpe_mm,token_acc");
        for (size_t i = 1; i < lines.size(); ++i) {
            std::istringstream row(lines[i]);
            std::string cell;
            std::vector<double> vals;
            while (std::getline(row, cell, ',')) vals.push_back(std::stod(cell));
            REQUIRE(vals.size() == 5);
            CHECK(vals[3] <= vals[2] + 1e-9);  // pa_mpjpe <= mpjpe
        }
    }

    // Missing checkpoints are runtime failures, not crashes.
    CHECK(run_cli("eval --model " + runp + "/absent.bin --codec " + runc + "/codec.bin --data " +
                      ds2 + " --report " + rep + "2 --split test",
                  cap) == 3);

    // Codec round trip through files: encode then decode approximates the
    // library reconstruction bit for bit at OBJ precision.
    const std::string mesh_a = ds2 + "/test/000000.obj";
    const std::string mesh_b = ds2 + "/train/000000.obj";
    const std::string tok_a = (dir / "a.tokens.json").string();
    const std::string tok_b = (dir / "b.tokens.json").string();
    REQUIRE(run_cli("codec encode --codec " + runc + "/codec.bin --mesh " + mesh_a + " --out " +
                        tok_a,
                    cap) == 0);
    REQUIRE(run_cli("codec encode --codec " + runc + "/codec.bin --mesh " + mesh_b + " --out " +
                        tok_b,
                    cap) == 0);
    TokenFile tfa = read_tokens_json(tok_a);
    CHECK(tfa.n == 16);
    CHECK(tfa.s == 512);
    REQUIRE(tfa.tokens.size() == 16);
    for (int tok : tfa.tokens) {
        CHECK(tok >= 0);
        CHECK(tok < 512);
    }

    const std::string recon_a = (dir / "recon_a.obj").string();
    const std::string recon_b = (dir / "recon_b.obj").string();
    REQUIRE(run_cli("codec decode --codec " + runc + "/codec.bin --tokens " + tok_a + " --out " +
                        recon_a,
                    cap) == 0);
    REQUIRE(run_cli("codec decode --codec " + runc + "/codec.bin --tokens " + tok_b + " --out " +
                        recon_b,
                    cap) == 0);

    {
        TopologyPtr topo = build_desk_template().rest_mesh.topology;
        MeshCodec codec = MeshCodec::load(runc + "/codec.bin", topo);
        CanonicalMesh orig;
        orig.topology = topo;
        orig.vertices = read_obj(mesh_a).vertices;
        CanonicalMesh lib_recon = codec.reconstruct(orig);

        CanonicalMesh cli_recon;
        cli_recon.topology = topo;
        cli_recon.vertices = read_obj(recon_a).vertices;
        CHECK(pve(cli_recon, lib_recon) < 1e-3);  // mm; OBJ keeps 9 significant digits

        double floor = pve(lib_recon, orig);
        CHECK(pve(cli_recon, orig) <= floor * 1.01 + 1e-6);
    }

    // Token files are validated before use.
    {
        json tampered = json::parse(slurp(tok_a));
        tampered["tokens"][0] = 512;
        write_text_file(dir / "oob.tokens.json", tampered.dump());
        CHECK(run_cli("codec decode --codec " + runc + "/codec.bin --tokens " +
                          (dir / "oob.tokens.json").string() + " --out " +
                          (dir / "oob.obj").string(),
                      cap) == 2);

        json forged = json::parse(slurp(tok_a));
        forged["codec_fingerprint"] = "00000000deadbeef";
        write_text_file(dir / "forged.tokens.json", forged.dump());
        CHECK(run_cli("codec decode --codec " + runc + "/codec.bin --tokens " +
                          (dir / "forged.tokens.json").string() + " --out " +
                          (dir / "forged.obj").string(),
                      cap) == 2);

        json short_file = json::parse(slurp(tok_a));
        short_file["n"] = 8;
        short_file["tokens"] = std::vector<int>(8, 0);
        write_text_file(dir / "short.tokens.json", short_file.dump());
        CHECK(run_cli("codec decode --codec " + runc + "/codec.bin --tokens " +
                          (dir / "short.tokens.json").string() + " --out " +
                          (dir / "short.obj").string(),
                      cap) == 2);
    }

    // Swap edits: the empty index set reproduces mesh A, the full set mesh B.
    const std::string swap_cmd = "edit swap --codec " + runc + "/codec.bin --a " + tok_a +
                                 " --b " + tok_b;
    CHECK(run_cli("edit swap --codec " + runc + "/codec.bin --a " + tok_a + " --b " + tok_b +
                      " --out " + (dir / "swap_none").string(),
                  cap) == 1);  // neither --indices nor --part

    REQUIRE(run_cli(swap_cmd + " --indices \"\" --out " + (dir / "swap_empty").string(), cap) ==
            0);
    CHECK(slurp(dir / "swap_empty.obj") == slurp(recon_a));

    REQUIRE(run_cli(swap_cmd + " --indices 0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15 --out " +
                        (dir / "swap_full").string(),
                    cap) == 0);
    CHECK(slurp(dir / "swap_full.obj") == slurp(recon_b));

    REQUIRE(run_cli(swap_cmd + " --indices 1,4 --out " + (dir / "swap_partial").string(), cap) ==
            0);
    {
        TokenFile sw = read_tokens_json(dir / "swap_partial.tokens.json");
        TokenFile tfb = read_tokens_json(tok_b);
        REQUIRE(sw.tokens.size() == 16);
        for (int i = 0; i < 16; ++i) {
            int expect = (i == 1 || i == 4) ? tfb.tokens[i] : tfa.tokens[i];
            CHECK(sw.tokens[i] == expect);
        }
    }

    CHECK(run_cli(swap_cmd + " --indices 99 --out " + (dir / "swap_oob").string(), cap) == 2);
    CHECK(run_cli(swap_cmd + " --part tail --out " + (dir / "swap_part").string(), cap) == 2);

    // Interpolation endpoints reproduce the plain decodes byte for byte.
    const std::string interp_cmd = "edit interp --codec " + runc + "/codec.bin --a " + tok_a +
                                   " --b " + tok_b;
    REQUIRE(run_cli(interp_cmd + " --t 0 --out " + (dir / "interp0").string(), cap) == 0);
    CHECK(slurp(dir / "interp0.obj") == slurp(recon_a));
    REQUIRE(run_cli(interp_cmd + " --t 1 --out " + (dir / "interp1").string(), cap) == 0);
    CHECK(slurp(dir / "interp1.obj") == slurp(recon_b));
    REQUIRE(run_cli(interp_cmd + " --t 0.5 --out " + (dir / "interp_mid").string(), cap) == 0);
    CHECK(fs::exists(dir / "interp_mid.obj"));
    CHECK(run_cli(interp_cmd + " --t 1.5 --out " + (dir / "interp_bad").string(), cap) == 2);

    REQUIRE(run_cli(interp_cmd + " --frames 5 --out " + (dir / "anim").string(), cap) == 0);
    for (int i = 0; i < 5; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "anim_%03d.obj", i);
        CHECK(fs::exists(dir / name));
    }
    CHECK(!fs::exists(dir / "anim_005.obj"));
}
