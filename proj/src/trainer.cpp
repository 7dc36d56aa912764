#include "meshtok/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>

#include <json.hpp>

#include "meshtok/hash.hpp"
#include "meshtok/metrics.hpp"

namespace meshtok {

using nlohmann::json;

void TrainConfig::validate() const {
    require(stage == "codec" || stage == "predictor", "stage must be codec or predictor");
    require(epochs > 0, "epochs must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(learning_rate > 0, "learning_rate must be positive");
    require(clip_norm > 0, "clip_norm must be positive");
    require(early_stop_patience >= 0, "early_stop_patience must be non-negative");
    require(logit_head == "mlp" || logit_head == "self_attention",
            "logit_head must be mlp or self_attention");
    require(loss_weights.mesh_ce >= 0 && loss_weights.rot_mse >= 0 &&
                loss_weights.reproj_l1 >= 0 && loss_weights.recon_3d >= 0,
            "loss weights must be non-negative");
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        require(false, std::string("malformed training config: ") + e.what());
    }
    const std::set<std::string> allowed = {
        "stage",       "epochs",     "batch_size",          "learning_rate",
        "clip_norm",   "seed",       "loss_weights",        "ablation",
        "logit_head",  "cosine_decay", "early_stop_patience"};
    for (const auto& [key, _] : j.items())
        require(allowed.count(key) > 0, "unknown training config key: " + key);

    TrainConfig c;
    if (j.contains("stage")) c.stage = j["stage"].get<std::string>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("logit_head")) c.logit_head = j["logit_head"].get<std::string>();
    if (j.contains("cosine_decay")) c.cosine_decay = j["cosine_decay"].get<bool>();
    if (j.contains("early_stop_patience"))
        c.early_stop_patience = j["early_stop_patience"].get<int>();
    if (j.contains("loss_weights")) {
        const json& w = j["loss_weights"];
        const std::set<std::string> wkeys = {"mesh_ce", "rot_mse", "reproj_l1", "recon_3d"};
        for (const auto& [key, _] : w.items())
            require(wkeys.count(key) > 0, "unknown loss weight: " + key);
        if (w.contains("mesh_ce")) c.loss_weights.mesh_ce = w["mesh_ce"].get<double>();
        if (w.contains("rot_mse")) c.loss_weights.rot_mse = w["rot_mse"].get<double>();
        if (w.contains("reproj_l1")) c.loss_weights.reproj_l1 = w["reproj_l1"].get<double>();
        if (w.contains("recon_3d")) c.loss_weights.recon_3d = w["recon_3d"].get<double>();
    }
    if (j.contains("ablation")) {
        const json& a = j["ablation"];
        const std::set<std::string> akeys = {"loss_3d", "no_reprojection"};
        for (const auto& [key, _] : a.items())
            require(akeys.count(key) > 0, "unknown ablation flag: " + key);
        if (a.contains("loss_3d")) c.ablation_loss_3d = a["loss_3d"].get<bool>();
        if (a.contains("no_reprojection"))
            c.ablation_no_reprojection = a["no_reprojection"].get<bool>();
    }
    c.validate();
    return c;
}

std::string train_config_to_json(const TrainConfig& c) {
    json j;
    j["stage"] = c.stage;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["clip_norm"] = c.clip_norm;
    j["seed"] = c.seed;
    j["logit_head"] = c.logit_head;
    j["cosine_decay"] = c.cosine_decay;
    j["early_stop_patience"] = c.early_stop_patience;
    j["loss_weights"] = {{"mesh_ce", c.loss_weights.mesh_ce},
                         {"rot_mse", c.loss_weights.rot_mse},
                         {"reproj_l1", c.loss_weights.reproj_l1},
                         {"recon_3d", c.loss_weights.recon_3d}};
    j["ablation"] = {{"loss_3d", c.ablation_loss_3d},
                     {"no_reprojection", c.ablation_no_reprojection}};
    return j.dump(2);
}

namespace {

std::vector<Mat> snapshot_params(const ParamStore& store) {
    std::vector<Mat> snap;
    snap.reserve(store.all().size());
    for (const auto& p : store.all()) snap.push_back(p->value);
    return snap;
}

void restore_params(const ParamStore& store, const std::vector<Mat>& snap) {
    ensure(snap.size() == store.all().size(), "parameter snapshot size drifted");
    for (size_t i = 0; i < snap.size(); ++i) store.all()[i]->value = snap[i];
}

void scale_grads(const ParamStore& store, double factor) {
    for (const auto& p : store.all()) p->grad *= factor;
}

std::vector<int> shuffled(const std::vector<int>& idx, Rng& rng) {
    std::vector<int> order = idx;
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);
    return order;
}

double cosine_lr(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
    if (!cfg.cosine_decay || total_steps <= 1) return cfg.learning_rate;
    double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * std::min(frac, 1.0)));
}

void emit(std::vector<std::string>& lines, std::ostream* log, const json& j) {
    lines.push_back(j.dump());
    if (log) (*log) << lines.back() << '\n';
}

// Reservoir of latent rows collected while streaming an epoch.
class RowReservoir {
public:
    RowReservoir(int capacity, int dim, uint64_t seed)
        : pool_(capacity, dim), rng_(seed) {}

    void offer(const Mat& rows) {
        for (int r = 0; r < rows.rows(); ++r) {
            ++seen_;
            if (filled_ < pool_.rows()) {
                pool_.row(filled_++) = rows.row(r);
            } else {
                int64_t j = static_cast<int64_t>(rng_.next_u64() % static_cast<uint64_t>(seen_));
                if (j < pool_.rows()) pool_.row(j) = rows.row(r);
            }
        }
    }

    Mat rows() const { return pool_.topRows(filled_); }
    void clear() { filled_ = 0; seen_ = 0; }

private:
    Mat pool_;
    Rng rng_;
    int64_t filled_ = 0;
    int64_t seen_ = 0;
};

}  // namespace

CodecTrainResult train_codec(const TrainConfig& cfg, const Dataset& data, TopologyPtr topology,
                             const CodecConfig& codec_cfg, std::ostream* log) {
    cfg.validate();
    require(cfg.stage == "codec", "train_codec needs a codec-stage config");
    require(!data.records.empty(), "dataset is empty");
    const std::vector<int>& train = data.train_idx;
    require(!train.empty(), "train split is empty");
    const std::vector<int>& eval_idx = data.val_idx.empty() ? data.train_idx : data.val_idx;

    Rng rng(cfg.seed);
    CodecTrainResult result;
    result.codec = std::make_shared<MeshCodec>(topology, codec_cfg, rng);
    MeshCodec& codec = *result.codec;
    const int cells = codec.cell_count();
    const int latent_dim = codec_cfg.latent_dim;

    Adam adam({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.clip_norm});
    const int64_t batches_per_epoch = (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) /
                                      cfg.batch_size;
    const int64_t total_steps = batches_per_epoch * cfg.epochs;

    std::vector<Mat> best_params = snapshot_params(codec.params());
    Codebook best_codebook = codec.codebook();
    double best_pve = std::numeric_limits<double>::infinity();
    int patience = 0;
    int64_t step = 0;

    auto fail = [&](const std::string& msg) {
        result.diverged = true;
        result.divergence_message = msg;
        restore_params(codec.params(), best_params);
        codec.codebook() = best_codebook;
    };

    for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        Rng order_rng = rng.fork(1000 + static_cast<uint64_t>(epoch));
        std::vector<int> order = shuffled(train, order_rng);
        RowReservoir reservoir(8192, latent_dim, cfg.seed ^ (0xabcdULL + epoch));
        std::vector<int64_t> epoch_usage(static_cast<size_t>(codec_cfg.codebook_size), 0);
        const bool warmup = epoch == 0;

        double epoch_recon = 0.0, epoch_commit = 0.0;
        int64_t sample_count = 0;

        for (int64_t b = 0; b < batches_per_epoch && !result.diverged; ++b) {
            codec.params().zero_grad();
            int64_t lo = b * cfg.batch_size;
            int64_t hi = std::min<int64_t>(lo + cfg.batch_size, static_cast<int64_t>(order.size()));
            int nb = static_cast<int>(hi - lo);
            if (nb == 0) continue;

            Mat batch_latents(nb * cells, latent_dim);
            std::vector<int> batch_tokens;
            batch_tokens.reserve(static_cast<size_t>(nb) * cells);

            for (int64_t k = lo; k < hi; ++k) {
                const SampleRecord& rec = data.records[static_cast<size_t>(order[k])];
                Tape t;
                Var x = t.constant(rec.gt_canonical.vertices);
                Var z = codec.encode_t(t, x);
                const Mat& zval = t.val(z);
                reservoir.offer(zval);

                Var dec_in = z;
                double commit_val = 0.0;
                Var total;
                if (warmup) {
                    Var y = codec.decode_t(t, dec_in);
                    total = t.mean_row_norm(t.sub(y, x));
                } else {
                    QuantizeResult q = codec.quantize(zval);
                    for (int tok : q.tokens) {
                        ++epoch_usage[static_cast<size_t>(tok)];
                        batch_tokens.push_back(tok);
                    }
                    batch_latents.middleRows((k - lo) * cells, cells) = zval;
                    dec_in = t.st_quantize(z, q.grid);
                    Var commit = t.mean_sq(t.sub(z, t.constant(q.grid)));
                    Var y = codec.decode_t(t, dec_in);
                    Var recon = t.mean_row_norm(t.sub(y, x));
                    total = t.add(recon, t.scale(commit, codec_cfg.commitment_weight));
                    commit_val = t.val(commit)(0, 0);
                    epoch_recon += t.val(recon)(0, 0);
                    epoch_commit += commit_val;
                }
                double lv = t.val(total)(0, 0);
                if (!std::isfinite(lv)) {
                    fail("codec loss became non-finite at epoch " + std::to_string(epoch) +
                         ", restored best checkpoint");
                    break;
                }
                if (warmup) epoch_recon += lv;
                ++sample_count;
                t.backward(total);
            }
            if (result.diverged) break;

            if (!warmup) codec.ema_update(batch_latents.topRows(nb * cells), batch_tokens);
            scale_grads(codec.params(), 1.0 / nb);
            double gnorm = adam.step(codec.params(), cosine_lr(cfg, step, total_steps));
            ++step;
            if (!std::isfinite(gnorm)) {
                fail("codec gradients became non-finite at epoch " + std::to_string(epoch) +
                     ", restored best checkpoint");
                break;
            }
        }
        if (result.diverged) break;

        int reseeded = 0;
        int used = 0;
        if (warmup) {
            // Fresh encoder outputs give the k-means a stable target.
            int probe = std::min<int>(512, static_cast<int>(train.size()));
            Mat latents(probe * cells, latent_dim);
            for (int i = 0; i < probe; ++i) {
                const SampleRecord& rec = data.records[static_cast<size_t>(train[i])];
                latents.middleRows(i * cells, cells) = codec.encode(rec.gt_canonical);
            }
            Rng init_rng = rng.fork(77);
            codec.init_codebook(latents, init_rng);
        } else {
            Mat pool = reservoir.rows();
            if (pool.rows() > 0) {
                Rng reseed_rng = rng.fork(500 + static_cast<uint64_t>(epoch));
                reseeded = codec.reseed_dead_entries(pool, epoch_usage, reseed_rng);
            }
            for (int64_t u : epoch_usage)
                if (u > 0) ++used;
        }

        double val_pve = 0.0;
        for (int i : eval_idx) {
            const SampleRecord& rec = data.records[static_cast<size_t>(i)];
            val_pve += pve(codec.reconstruct(rec.gt_canonical), rec.gt_canonical);
        }
        val_pve /= static_cast<double>(eval_idx.size());

        result.epochs_run = epoch + 1;
        emit(result.log_lines, log,
             json{{"stage", "codec"},
                  {"epoch", epoch},
                  {"recon_m", sample_count ? epoch_recon / sample_count : 0.0},
                  {"commit", sample_count ? epoch_commit / sample_count : 0.0},
                  {"val_pve_mm", val_pve},
                  {"codebook_used", used},
                  {"reseeded", reseeded},
                  {"lr", cosine_lr(cfg, step, total_steps)}});

        if (val_pve < best_pve - 1e-9) {
            best_pve = val_pve;
            best_params = snapshot_params(codec.params());
            best_codebook = codec.codebook();
            patience = 0;
        } else if (++patience > cfg.early_stop_patience) {
            break;
        }
    }

    if (!result.diverged) {
        restore_params(codec.params(), best_params);
        codec.codebook() = best_codebook;
    }
    result.val_pve_mm = best_pve;
    return result;
}

PredictorTrainResult train_predictor(const TrainConfig& cfg, const Dataset& data,
                                     std::shared_ptr<const MeshCodec> codec,
                                     const ModelConfig& model_cfg, const Mat& initial_pose,
                                     const JointRegressor& regressor, std::ostream* log) {
    cfg.validate();
    require(cfg.stage == "predictor", "train_predictor needs a predictor-stage config");
    require(!data.records.empty(), "dataset is empty");
    require(!data.train_idx.empty(), "train split is empty");
    require(codec != nullptr, "predictor training needs a codec");
    require(data.codec_fingerprint == to_hex(codec->fingerprint()),
            "dataset tokens were produced by a different codec (fingerprint mismatch)");
    for (int i : data.train_idx)
        require(static_cast<int>(data.records[static_cast<size_t>(i)].gt_tokens.size()) ==
                    codec->cell_count(),
                "train record lacks ground-truth tokens");

    ModelConfig mc = model_cfg;
    mc.logit_head = cfg.logit_head;
    mc.validate();

    const uint64_t codec_fp = codec->fingerprint();
    Rng rng(cfg.seed);
    PredictorTrainResult result;
    result.model = std::make_shared<VqhpsModel>(mc, codec, initial_pose, rng);
    VqhpsModel& model = *result.model;

    const std::vector<int>& train = data.train_idx;
    const std::vector<int>& eval_idx = data.val_idx.empty() ? data.train_idx : data.val_idx;

    Adam adam({cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.clip_norm});
    const int64_t batches_per_epoch = (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) /
                                      cfg.batch_size;
    const int64_t total_steps = batches_per_epoch * cfg.epochs;

    std::vector<Mat> best_params = snapshot_params(model.params());
    double best_pve = std::numeric_limits<double>::infinity();
    double best_acc = 0.0;
    int patience = 0;
    int64_t step = 0;

    auto fail = [&](const std::string& msg) {
        result.diverged = true;
        result.divergence_message = msg;
        restore_params(model.params(), best_params);
    };

    const LossWeights& w = cfg.loss_weights;
    for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        Rng order_rng = rng.fork(2000 + static_cast<uint64_t>(epoch));
        std::vector<int> order = shuffled(train, order_rng);

        double ep_ce = 0, ep_rot = 0, ep_reproj = 0, ep_recon3 = 0;
        int64_t sample_count = 0;

        for (int64_t b = 0; b < batches_per_epoch && !result.diverged; ++b) {
            model.params().zero_grad();
            int64_t lo = b * cfg.batch_size;
            int64_t hi = std::min<int64_t>(lo + cfg.batch_size, static_cast<int64_t>(order.size()));
            int nb = static_cast<int>(hi - lo);
            if (nb == 0) continue;

            for (int64_t k = lo; k < hi; ++k) {
                const SampleRecord& rec = data.records[static_cast<size_t>(order[k])];
                Tape t;
                TrainNodes nodes = model.build_train_graph(t, rec.image);

                Var total;
                bool have_total = false;
                auto add_term = [&](Var term, double weight) {
                    Var scaled = t.scale(term, weight);
                    total = have_total ? t.add(total, scaled) : scaled;
                    have_total = true;
                };

                if (cfg.ablation_loss_3d) {
                    Var probs = t.softmax_rows(nodes.logits);
                    Var mix = t.matmul(probs, t.constant(codec->codebook().entries));
                    Var verts = codec->decode_frozen(t, mix);
                    Var recon3 = t.mean_row_norm(t.sub(verts, t.constant(rec.gt_canonical.vertices)));
                    ep_recon3 += t.val(recon3)(0, 0);
                    add_term(recon3, w.recon_3d);
                } else {
                    Var ce = t.cross_entropy_rows(nodes.logits, rec.gt_tokens);
                    ep_ce += t.val(ce)(0, 0);
                    add_term(ce, w.mesh_ce);
                }

                Var rot_term = rotation_mse_t(t, nodes.rot, rec.gt_rotation);
                ep_rot += t.val(rot_term)(0, 0);
                add_term(rot_term, w.rot_mse);

                if (!cfg.ablation_no_reprojection) {
                    // Joints of the decoded token mesh are constants here, so
                    // the 2D term reaches only the rotation and camera heads.
                    Mat canon = codec->decode(codec->dequantize(nodes.tokens)).vertices;
                    Mat jc = regressor.matrix * canon;
                    Var j3 = t.matmul_nt(t.constant(jc), nodes.rot);
                    Var reproj = reprojection_l1_t(t, j3, nodes.cam_s, nodes.cam_t,
                                                   rec.gt_joints_2d);
                    ep_reproj += t.val(reproj)(0, 0);
                    add_term(reproj, w.reproj_l1);
                }

                double lv = t.val(total)(0, 0);
                if (!std::isfinite(lv)) {
                    fail("predictor loss became non-finite at epoch " + std::to_string(epoch) +
                         ", restored best checkpoint");
                    break;
                }
                ++sample_count;
                t.backward(total);
            }
            if (result.diverged) break;

            scale_grads(model.params(), 1.0 / nb);
            double gnorm = adam.step(model.params(), cosine_lr(cfg, step, total_steps));
            ++step;
            if (!std::isfinite(gnorm)) {
                fail("predictor gradients became non-finite at epoch " + std::to_string(epoch) +
                     ", restored best checkpoint");
                break;
            }
        }
        if (result.diverged) break;

        double val_pve = 0.0, val_acc = 0.0;
        for (int i : eval_idx) {
            const SampleRecord& rec = data.records[static_cast<size_t>(i)];
            ForwardResult f = model.forward(rec.image);
            RegisteredMesh gt_posed = apply_orientation(rec.gt_canonical, rec.gt_rotation);
            val_pve += pve(f.posed, gt_posed);
            if (!rec.gt_tokens.empty()) {
                int hit = 0;
                for (size_t n = 0; n < rec.gt_tokens.size(); ++n)
                    if (f.tokens[n] == rec.gt_tokens[n]) ++hit;
                val_acc += static_cast<double>(hit) / rec.gt_tokens.size();
            }
        }
        val_pve /= static_cast<double>(eval_idx.size());
        val_acc /= static_cast<double>(eval_idx.size());

        result.epochs_run = epoch + 1;
        emit(result.log_lines, log,
             json{{"stage", "predictor"},
                  {"epoch", epoch},
                  {"mesh_ce", sample_count && !cfg.ablation_loss_3d ? ep_ce / sample_count : 0.0},
                  {"recon_3d", sample_count && cfg.ablation_loss_3d ? ep_recon3 / sample_count : 0.0},
                  {"rot_mse", sample_count ? ep_rot / sample_count : 0.0},
                  {"reproj_l1",
                   sample_count && !cfg.ablation_no_reprojection ? ep_reproj / sample_count : 0.0},
                  {"val_pve_mm", val_pve},
                  {"val_token_acc", val_acc},
                  {"lr", cosine_lr(cfg, step, total_steps)}});

        if (val_pve < best_pve - 1e-9) {
            best_pve = val_pve;
            best_acc = val_acc;
            best_params = snapshot_params(model.params());
            patience = 0;
        } else if (++patience > cfg.early_stop_patience) {
            break;
        }
    }

    if (!result.diverged) restore_params(model.params(), best_params);
    ensure(codec->fingerprint() == codec_fp, "codec changed during predictor training");
    result.val_pve_mm = best_pve;
    result.val_token_acc = best_acc;
    return result;
}

std::vector<int> mean_token_baseline(const Dataset& data, int cells) {
    require(cells > 0, "cell count must be positive");
    std::vector<std::map<int, int>> counts(static_cast<size_t>(cells));
    int contributors = 0;
    auto tally = [&](const std::vector<int>& pool) {
        for (int i : pool) {
            const auto& toks = data.records[static_cast<size_t>(i)].gt_tokens;
            if (static_cast<int>(toks.size()) != cells) continue;
            ++contributors;
            for (int n = 0; n < cells; ++n)
                ++counts[static_cast<size_t>(n)][toks[static_cast<size_t>(n)]];
        }
    };
    tally(data.train_idx);
    if (contributors == 0) {
        std::vector<int> everything(data.records.size());
        std::iota(everything.begin(), everything.end(), 0);
        tally(everything);
    }
    if (contributors == 0) return {};
    std::vector<int> mode(static_cast<size_t>(cells), 0);
    for (int n = 0; n < cells; ++n) {
        int best_tok = -1, best_count = -1;
        for (const auto& [tok, cnt] : counts[static_cast<size_t>(n)]) {
            if (cnt > best_count) {
                best_count = cnt;
                best_tok = tok;
            }
        }
        mode[static_cast<size_t>(n)] = best_tok;
    }
    return mode;
}

EvalReport evaluate(const Predictor& predict, const MeshCodec& codec, const Dataset& data,
                    const std::string& split, const JointRegressor& regressor) {
    const std::vector<int>& idx = data.split(split);

    EvalReport rep;
    rep.split = split;
    rep.count = static_cast<int>(idx.size());
    if (idx.empty()) {
        rep.warning = "split has no samples: " + split;
        return rep;
    }

    std::vector<int> mode_tokens = mean_token_baseline(data, codec.cell_count());
    rep.baseline_valid = !mode_tokens.empty();
    CanonicalMesh baseline_canonical;
    if (rep.baseline_valid) baseline_canonical = codec.decode(codec.dequantize(mode_tokens));

    int64_t token_samples = 0;
    double token_sum = 0.0;
    for (int i : idx) {
        const SampleRecord& rec = data.records[static_cast<size_t>(i)];
        Prediction pred = predict(rec);
        require_rotation(pred.rotation);

        CanonicalMesh canon = codec.decode(codec.dequantize(pred.tokens));
        RegisteredMesh posed = apply_orientation(canon, pred.rotation);
        RegisteredMesh gt_posed = apply_orientation(rec.gt_canonical, rec.gt_rotation);

        JointSet pj = regress_joints(posed, regressor);
        JointSet gj = rec.gt_joints_3d.joints.rows() > 0 ? rec.gt_joints_3d
                                                         : regress_joints(gt_posed, regressor);

        SampleMetrics sm;
        sm.index = i;
        sm.pve_mm = pve(posed, gt_posed);
        sm.mpjpe_mm = mpjpe(pj, gj);
        sm.pa_mpjpe_mm = pa_mpjpe(pj, gj);
        if (rec.gt_tokens.size() == pred.tokens.size() && !pred.tokens.empty()) {
            int hit = 0;
            for (size_t n = 0; n < pred.tokens.size(); ++n)
                if (pred.tokens[n] == rec.gt_tokens[n]) ++hit;
            sm.token_acc = static_cast<double>(hit) / pred.tokens.size();
            token_sum += sm.token_acc;
            ++token_samples;
        }
        rep.samples.push_back(sm);
        rep.pve_mm += sm.pve_mm;
        rep.mpjpe_mm += sm.mpjpe_mm;
        rep.pa_mpjpe_mm += sm.pa_mpjpe_mm;

        if (rep.baseline_valid) {
            RegisteredMesh posed_b = apply_orientation(baseline_canonical, pred.rotation);
            JointSet bj = regress_joints(posed_b, regressor);
            rep.baseline_pve_mm += pve(posed_b, gt_posed);
            rep.baseline_mpjpe_mm += mpjpe(bj, gj);
            rep.baseline_pa_mpjpe_mm += pa_mpjpe(bj, gj);
        }
    }
    const double n = static_cast<double>(idx.size());
    rep.pve_mm /= n;
    rep.mpjpe_mm /= n;
    rep.pa_mpjpe_mm /= n;
    rep.token_top1 = token_samples > 0 ? token_sum / static_cast<double>(token_samples) : 0.0;
    if (rep.baseline_valid) {
        rep.baseline_pve_mm /= n;
        rep.baseline_mpjpe_mm /= n;
        rep.baseline_pa_mpjpe_mm /= n;
    }
    return rep;
}

EvalReport evaluate(const VqhpsModel& model, const MeshCodec& codec, const Dataset& data,
                    const std::string& split, const JointRegressor& regressor) {
    Predictor p = [&model](const SampleRecord& rec) {
        ForwardResult f = model.forward(rec.image);
        return Prediction{f.tokens, f.rotation, f.camera};
    };
    return evaluate(p, codec, data, split, regressor);
}

std::string EvalReport::to_json() const {
    json j;
    j["split"] = split;
    if (!warning.empty()) j["warning"] = warning;
    j["count"] = count;
    j["pve_mm"] = pve_mm;
    j["mpjpe_mm"] = mpjpe_mm;
    j["pa_mpjpe_mm"] = pa_mpjpe_mm;
    j["token_top1"] = token_top1;
    if (baseline_valid) {
        j["mean_token_baseline"] = {{"pve_mm", baseline_pve_mm},
                                    {"mpjpe_mm", baseline_mpjpe_mm},
                                    {"pa_mpjpe_mm", baseline_pa_mpjpe_mm}};
    } else {
        j["mean_token_baseline"] = nullptr;
    }
    json rows = json::array();
    for (const auto& s : samples)
        rows.push_back({{"index", s.index},
                        {"pve_mm", s.pve_mm},
                        {"mpjpe_mm", s.mpjpe_mm},
                        {"pa_mpjpe_mm", s.pa_mpjpe_mm},
                        {"token_acc", s.token_acc}});
    j["samples"] = rows;
    return j.dump(2);
}

std::string EvalReport::to_csv() const {
    std::string out = "index,pve_mm,mpjpe_mm,pa_mpjpe_mm,token_acc\n";
    char buf[160];
    for (const auto& s : samples) {
        std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f\n", s.index, s.pve_mm, s.mpjpe_mm,
                      s.pa_mpjpe_mm, s.token_acc);
        out += buf;
    }
    return out;
}

}  // namespace meshtok
