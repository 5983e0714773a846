#include "xraygan/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace xraygan {

namespace {

void require_valid(const TrainConfig& cfg) {
    auto errs = validate_config(cfg);
    if (errs.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw std::invalid_argument(msg);
}

}  // namespace

const StudyRecord& Dataset::record(const std::string& study_id) const {
    for (const auto& r : records) {
        if (r.study_id == study_id) return r;
    }
    throw std::invalid_argument("unknown study id " + study_id);
}

Dataset load_dataset(const std::string& manifest_path, const TrainConfig& cfg) {
    require_valid(cfg);
    Dataset d;
    d.records = parse_manifest(manifest_path);
    d.split = split_dataset(d.records, cfg.split_ratios(), cfg.seed);
    std::vector<std::string> train_texts;
    train_texts.reserve(d.split.train.size());
    for (const auto& id : d.split.train) train_texts.push_back(d.record(id).report_text);
    d.vocab = build_vocabulary(train_texts, cfg.vocab_min_freq);
    return d;
}

TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocab) {
    require_valid(cfg);
    TrainState s;
    s.config = cfg;
    s.vocab = vocab;
    Rng root(cfg.seed);
    s.encoder = init_encoder(cfg.encoder_config(vocab.size()), root.derive("encoder").next_u64());
    s.generator = init_generator(cfg.stage_config(), root.derive("generator").next_u64());
    s.discriminator = init_discriminator(cfg.stage_config(), root.derive("discriminator").next_u64());
    s.rng = root.derive("train");
    return s;
}

std::uint64_t vcn_seed(const TrainConfig& cfg, int stage) {
    return Rng(cfg.seed).derive("vcn-stage-" + std::to_string(stage)).next_u64();
}

std::uint64_t vcn_pair_seed(const TrainConfig& cfg, int stage) {
    return Rng(cfg.seed).derive("vcn-pairs-" + std::to_string(stage)).next_u64();
}

namespace {

struct StageData {
    std::vector<Report> reports;
    std::vector<Tensor> front, lat;  // [S,S] at the stage resolution
};

StageData preload(const std::vector<std::string>& ids, const Dataset& data, const Vocabulary& vocab,
                  std::int64_t res) {
    StageData sd;
    for (const auto& id : ids) {
        const StudyRecord& rec = data.record(id);
        sd.reports.push_back(tokenize_report(rec.report_text, vocab));
        for (auto [path, into] : {std::pair{&rec.frontal_path, &sd.front}, {&rec.lateral_path, &sd.lat}}) {
            Image img = read_png_gray(*path);
            Tensor t(Shape{img.h, img.w}, img.pixels);
            into->push_back(resize_pow2(t, res));
        }
    }
    return sd;
}

Tensor stack_images(const std::vector<Tensor>& imgs, const std::vector<std::size_t>& order,
                    std::size_t at, std::size_t bsz, std::int64_t s) {
    Tensor out(Shape{static_cast<std::int64_t>(bsz), 1, s, s});
    for (std::size_t b = 0; b < bsz; ++b) {
        const Tensor& im = imgs[order[at + b]];
        std::copy(im.vec().begin(), im.vec().end(),
                  out.vec().begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(s * s)));
    }
    return out;
}

ad::Var encode_batch(const std::vector<Report>& reports, const std::vector<std::size_t>& order,
                     std::size_t at, std::size_t bsz, const EncoderParams& enc) {
    std::vector<ad::Var> rows;
    rows.reserve(bsz);
    for (std::size_t b = 0; b < bsz; ++b) {
        rows.push_back(encode_report(reports[order[at + b]], enc).c);
    }
    return ad::stack_rows(rows);
}

ad::Var gen_to_stage(const ad::Var& c, View view, int stage, const GeneratorParams& g) {
    ad::Var x = generate_base_var(c, view, g);
    for (int st = 2; st <= stage; ++st) x = generate_progressive_var(x, c, view, st, g);
    return x;
}

// Generator-side trainables for a stage: the encoder plus, per view, the
// base generator and every refiner up to the stage. Earlier-stage refiners
// stay trainable because the residual path runs through them.
nn::ParamList g_side_params(TrainState& s, int stage) {
    nn::ParamList ps;
    s.encoder.register_params(ps, "encoder");
    for (View v : {View::frontal, View::lateral}) {
        std::string vp = std::string("generator.") + view_name(v);
        auto vi = static_cast<std::size_t>(view_index(v));
        s.generator.base[vi].register_params(ps, vp + ".base");
        for (int st = 2; st <= stage; ++st) {
            s.generator.prog[vi][static_cast<std::size_t>(st - 2)].register_params(
                ps, vp + ".stage" + std::to_string(st));
        }
    }
    return ps;
}

// Critic-side trainables: this stage's critics only, both views.
nn::ParamList d_side_params(TrainState& s, int stage) {
    nn::ParamList ps;
    for (View v : {View::frontal, View::lateral}) {
        auto vi = static_cast<std::size_t>(view_index(v));
        s.discriminator.stages[vi][static_cast<std::size_t>(stage - 1)].register_params(
            ps, std::string("discriminator.") + view_name(v) + ".stage" + std::to_string(stage));
    }
    return ps;
}

nlohmann::json report_json(const LossReport& r) {
    nlohmann::json j;
    j["adv_g"] = r.adv_g;
    j["adv_d"] = r.adv_d;
    j["gp"] = r.gp;
    j["recon"] = r.recon;
    j["vc_reward"] = r.vc_reward;
    j["total_g"] = r.total_g;
    return j;
}

}  // namespace

void train_stage(TrainState& state, int stage, const Dataset& data, const VcnParams& vcn,
                 std::ostream* loss_log) {
    const TrainConfig& cfg = state.config;
    require_valid(cfg);
    if (stage < 1 || stage > cfg.n_stages) {
        throw std::invalid_argument("stage " + std::to_string(stage) + " out of range 1.." +
                                    std::to_string(cfg.n_stages));
    }
    std::int64_t s = cfg.stage_config().resolution(stage);
    if (vcn.cfg.resolution != s) {
        throw std::invalid_argument("scorer resolution " + std::to_string(vcn.cfg.resolution) +
                                    " does not match stage resolution " + std::to_string(s));
    }
    if (data.split.train.empty()) throw std::invalid_argument("empty training split");

    StageData sd = preload(data.split.train, data, state.vocab, s);
    StageData vd = preload(data.split.val, data, state.vocab, s);

    nn::ParamList gp = g_side_params(state, stage);
    nn::ParamList dp = d_side_params(state, stage);
    auto g_vars = gp.vars();
    auto d_vars = dp.vars();

    nn::Adam opt_g, opt_d;
    opt_g.beta1 = opt_d.beta1 = cfg.adam_beta1;
    opt_g.beta2 = opt_d.beta2 = cfg.adam_beta2;
    opt_g.init(g_vars);
    opt_d.init(d_vars);

    const double lr0 = cfg.stage_lrs[static_cast<std::size_t>(stage - 1)];
    const auto batch = static_cast<std::size_t>(cfg.stage_batches[static_cast<std::size_t>(stage - 1)]);
    const int epochs = cfg.stage_epochs[static_cast<std::size_t>(stage - 1)];
    const LossWeights weights = cfg.loss_weights();

    std::vector<std::size_t> order(sd.reports.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        double lr = lr_at_epoch(lr0, cfg.lr_decay, cfg.lr_decay_every, e);
        opt_g.lr = opt_d.lr = lr;
        state.rng.shuffle(order);

        for (std::size_t at = 0; at < order.size(); at += batch) {
            std::size_t bsz = std::min(batch, order.size() - at);
            ad::Var c = encode_batch(sd.reports, order, at, bsz, state.encoder);
            Tensor real_f = stack_images(sd.front, order, at, bsz, s);
            Tensor real_l = stack_images(sd.lat, order, at, bsz, s);
            ad::Var fake_f = gen_to_stage(c, View::frontal, stage, state.generator);
            ad::Var fake_l = gen_to_stage(c, View::lateral, stage, state.generator);

            LossReport rep_f, rep_l;
            rep_f.stage = rep_l.stage = stage;
            rep_f.view = View::frontal;
            rep_l.view = View::lateral;

            // Critic updates on cut-off fakes: only critic parameters move.
            ad::Var fake_f_d = ad::detach(fake_f);
            ad::Var fake_l_d = ad::detach(fake_l);
            ad::Var c_d = ad::detach(c);
            for (int k = 0; k < cfg.critic_steps; ++k) {
                AdvLosses af = wgan_gp_losses(ad::constant(real_f), fake_f_d, c_d, View::frontal,
                                              stage, state.discriminator, cfg.gp_coefficient,
                                              state.rng);
                AdvLosses al = wgan_gp_losses(ad::constant(real_l), fake_l_d, c_d, View::lateral,
                                              stage, state.discriminator, cfg.gp_coefficient,
                                              state.rng);
                ad::Var loss_d = ad::add(af.adv_d, al.adv_d);
                opt_d.step(d_vars, ad::grad(loss_d, d_vars));
                rep_f.adv_d = af.adv_d.value().item();
                rep_f.gp = af.gp.value().item();
                rep_l.adv_d = al.adv_d.value().item();
                rep_l.gp = al.gp.value().item();
            }

            // Generator update against the just-updated critics.
            ad::Var adv_gf = ad::mul(critic_mean(fake_f, c, View::frontal, stage, state.discriminator), -1.0);
            ad::Var adv_gl = ad::mul(critic_mean(fake_l, c, View::lateral, stage, state.discriminator), -1.0);
            ad::Var recon_f = reconstruction_loss(fake_f, ad::constant(real_f));
            ad::Var recon_l = reconstruction_loss(fake_l, ad::constant(real_l));
            ad::Var vc = view_consistency_reward(fake_f, fake_l, vcn);
            ad::Var total_f = total_generator_loss(adv_gf, recon_f, vc, weights);
            ad::Var total_l = total_generator_loss(adv_gl, recon_l, vc, weights);
            ad::Var loss_g = ad::add(total_f, total_l);
            opt_g.step(g_vars, ad::grad(loss_g, g_vars));

            rep_f.adv_g = adv_gf.value().item();
            rep_l.adv_g = adv_gl.value().item();
            rep_f.recon = recon_f.value().item();
            rep_l.recon = recon_l.value().item();
            rep_f.vc_reward = rep_l.vc_reward = vc.value().item();
            rep_f.total_g = total_f.value().item();
            rep_l.total_g = total_l.value().item();
            ++state.global_step;

            if (loss_log) {
                nlohmann::json j;
                j["type"] = "step";
                j["stage"] = stage;
                j["epoch"] = e;
                j["step"] = state.global_step;
                j["lr"] = lr;
                j["frontal"] = report_json(rep_f);
                j["lateral"] = report_json(rep_l);
                *loss_log << j.dump() << "\n";
            }
        }

        if (loss_log && !vd.reports.empty()) {
            std::vector<std::size_t> vorder(vd.reports.size());
            for (std::size_t i = 0; i < vorder.size(); ++i) vorder[i] = i;
            double recon_acc = 0.0;
            for (std::size_t i = 0; i < vorder.size(); ++i) {
                ad::Var vc_row = encode_batch(vd.reports, vorder, i, 1, state.encoder);
                ad::Var ff = gen_to_stage(vc_row, View::frontal, stage, state.generator);
                ad::Var fl = gen_to_stage(vc_row, View::lateral, stage, state.generator);
                Tensor rf = stack_images(vd.front, vorder, i, 1, s);
                Tensor rl = stack_images(vd.lat, vorder, i, 1, s);
                recon_acc += 0.5 * (reconstruction_loss(ff, ad::constant(rf)).value().item() +
                                    reconstruction_loss(fl, ad::constant(rl)).value().item());
            }
            nlohmann::json j;
            j["type"] = "val";
            j["stage"] = stage;
            j["epoch"] = e;
            j["recon"] = recon_acc / static_cast<double>(vorder.size());
            *loss_log << j.dump() << "\n";
        }
    }

    state.opt_g = opt_g.state;
    state.opt_d = opt_d.state;
}

TrainArtifacts train_full(const Dataset& data, const TrainConfig& cfg, const std::string& out_dir,
                          const std::string& resume_path) {
    require_valid(cfg);
    if (data.split.train.empty()) throw std::invalid_argument("empty training split");
    std::filesystem::create_directories(out_dir);

    TrainArtifacts art;
    if (resume_path.empty()) {
        art.state = init_train_state(cfg, data.vocab);
    } else {
        art.state = load_checkpoint(resume_path);
        if (config_hash(art.state.config) != config_hash(cfg)) {
            throw std::invalid_argument("resume checkpoint was written with a different config");
        }
    }

    art.log_path = out_dir + "/train_log.jsonl";
    std::ofstream log(art.log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw std::runtime_error("cannot open loss log " + art.log_path);

    std::vector<StudyRecord> train_records;
    train_records.reserve(data.split.train.size());
    for (const auto& id : data.split.train) train_records.push_back(data.record(id));

    for (int stage = art.state.stages_done + 1; stage <= cfg.n_stages; ++stage) {
        std::int64_t s = cfg.stage_config().resolution(stage);
        auto pairs = sample_pairs(train_records, s, cfg.vcn_negatives, vcn_pair_seed(cfg, stage));
        auto vcn = train_vcn(pairs, cfg.vcn_config(stage), cfg.vcn_epochs, cfg.vcn_lr,
                             vcn_seed(cfg, stage));
        std::string vpath = out_dir + "/vcn-stage-" + std::to_string(stage) + ".ckpt";
        save_vcn_checkpoint(vcn.params, config_hash(cfg), vpath);
        art.vcn_checkpoints.push_back(vpath);

        train_stage(art.state, stage, data, vcn.params, &log);
        art.state.stages_done = stage;
        std::string cpath = out_dir + "/train-stage-" + std::to_string(stage) + ".ckpt";
        save_checkpoint(art.state, cpath);
        art.stage_checkpoints.push_back(cpath);
    }
    return art;
}

std::pair<Image, Image> generate_pair(const std::string& report_text, const TrainState& state) {
    Report rep = tokenize_report(report_text, state.vocab);
    ReportEmbedding emb = encode_report(rep, state.encoder);
    auto run = [&](View v) {
        StageImage x = generate_base(emb, v, state.generator);
        for (int st = 2; st <= state.config.n_stages; ++st) {
            x = generate_progressive(x, emb, st, state.generator);
        }
        return tensor_to_image(x.pixels);
    };
    return {run(View::frontal), run(View::lateral)};
}

}  // namespace xraygan
