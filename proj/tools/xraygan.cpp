#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xraygan/config.hpp"
#include "xraygan/corpus.hpp"
#include "xraygan/image.hpp"
#include "xraygan/metrics.hpp"
#include "xraygan/trainer.hpp"
#include "xraygan/vcn.hpp"

namespace fs = std::filesystem;
using namespace xraygan;

namespace {

struct ConfigArgs {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd) {
        auto* cfg = cmd->add_option("--config", config_path, "JSON config file");
        auto* pre = cmd->add_option("--preset", preset, "named preset")
                        ->check(CLI::IsMember({"desk"}));
        cfg->excludes(pre);
        pre->excludes(cfg);
        std::uint64_t* slot = nullptr;
        (void)slot;
        cmd->add_option_function<std::uint64_t>(
            "--seed", [this](std::uint64_t v) { seed = v; }, "override the config seed");
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (preset == "desk") {
            cfg = desk_preset();
        } else if (!config_path.empty()) {
            cfg = load_config(config_path);
        }
        if (seed) cfg.seed = *seed;
        auto errs = validate_config(cfg);
        if (!errs.empty()) {
            std::string msg = "invalid config:";
            for (const auto& e : errs) msg += "\n  " + e;
            throw std::invalid_argument(msg);
        }
        return cfg;
    }
};

std::string read_report_arg(const std::string& arg) {
    if (fs::exists(arg) && fs::is_regular_file(arg)) {
        std::ifstream in(arg);
        if (!in) throw std::runtime_error("cannot open report file " + arg);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }
    return arg;  // literal report text
}

void emit(bool json, const std::string& text, const nlohmann::json& j) {
    std::cout << text;
    if (json) std::cout << j.dump() << "\n";
}

Tensor image_as_tensor(const Image& img) {
    return Tensor(Shape{img.h, img.w}, img.pixels);
}

std::vector<StudyRecord> records_for(const Dataset& data, const std::vector<std::string>& ids) {
    std::vector<StudyRecord> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(data.record(id));
    return out;
}

int run_synth_data(std::int64_t n, std::int64_t size, std::uint64_t seed, const std::string& out,
                   bool json) {
    std::string manifest = generate_synthetic_corpus(n, size, seed, out);
    std::ostringstream text;
    text << "wrote " << n << " studies (" << 2 * n << " images) at " << size << "x" << size << "\n"
         << "manifest: " << manifest << "\n";
    emit(json, text.str(), {{"manifest", manifest}, {"n", n}, {"images", 2 * n}, {"size", size}});
    return 0;
}

int run_train_vcn(const ConfigArgs& cargs, const std::string& manifest, int stage,
                  const std::string& split, const std::string& out, bool json) {
    TrainConfig cfg = cargs.resolve();
    if (stage < 1 || stage > cfg.n_stages) {
        throw std::invalid_argument("stage must be in 1.." + std::to_string(cfg.n_stages));
    }
    Dataset data = load_dataset(manifest, cfg);

    std::vector<std::string> ids;
    std::uint64_t pair_seed, seed;
    if (split == "train") {
        ids = data.split.train;
        pair_seed = vcn_pair_seed(cfg, stage);
        seed = vcn_seed(cfg, stage);
    } else {  // held-out studies, for the evaluation scorer
        ids = data.split.val;
        ids.insert(ids.end(), data.split.test.begin(), data.split.test.end());
        pair_seed = Rng(cfg.seed).derive("eval-vcn-pairs-" + std::to_string(stage)).next_u64();
        seed = Rng(cfg.seed).derive("eval-vcn-" + std::to_string(stage)).next_u64();
    }
    if (ids.empty()) throw std::invalid_argument("selected split has no studies");

    std::int64_t res = cfg.stage_config().resolution(stage);
    auto pairs = sample_pairs(records_for(data, ids), res, cfg.vcn_negatives, pair_seed);
    auto result = train_vcn(pairs, cfg.vcn_config(stage), cfg.vcn_epochs, cfg.vcn_lr, seed);
    save_vcn_checkpoint(result.params, config_hash(cfg), out);

    std::ostringstream text;
    text << "trained stage-" << stage << " scorer on " << pairs.size() << " pairs (" << split
         << " split, " << res << "x" << res << ")\n";
    if (!result.epoch_loss.empty()) {
        text << "loss: " << result.epoch_loss.front() << " -> " << result.epoch_loss.back() << "\n";
    }
    text << "checkpoint: " << out << "\n";
    nlohmann::json j{{"checkpoint", out}, {"stage", stage}, {"pairs", pairs.size()}, {"split", split}};
    if (!result.epoch_loss.empty()) j["final_loss"] = result.epoch_loss.back();
    emit(json, text.str(), j);
    return 0;
}

int run_train(const ConfigArgs& cargs, const std::string& manifest, const std::string& out,
              const std::string& resume, bool json) {
    TrainConfig cfg = cargs.resolve();
    Dataset data = load_dataset(manifest, cfg);
    TrainArtifacts art = train_full(data, cfg, out, resume);

    std::ostringstream text;
    text << "trained " << art.state.stages_done << " of " << cfg.n_stages << " stages ("
         << art.state.global_step << " steps)\n";
    for (const auto& p : art.stage_checkpoints) text << "checkpoint: " << p << "\n";
    for (const auto& p : art.vcn_checkpoints) text << "scorer: " << p << "\n";
    text << "loss log: " << art.log_path << "\n";
    nlohmann::json j;
    j["stages_done"] = art.state.stages_done;
    j["steps"] = art.state.global_step;
    j["checkpoints"] = art.stage_checkpoints;
    j["scorers"] = art.vcn_checkpoints;
    j["loss_log"] = art.log_path;
    emit(json, text.str(), j);
    return 0;
}

int run_generate(const std::string& report_arg, const std::string& ckpt, const std::string& out,
                 bool json) {
    TrainState state = load_checkpoint(ckpt);
    std::string text = read_report_arg(report_arg);
    auto [frontal, lateral] = generate_pair(text, state);
    fs::create_directories(out);
    std::string fpath = out + "/frontal.png";
    std::string lpath = out + "/lateral.png";
    write_png_gray(fpath, frontal);
    write_png_gray(lpath, lateral);

    std::ostringstream msg;
    msg << "generated " << frontal.w << "x" << frontal.h << " pair\n";
    if (state.stages_done < state.config.n_stages) {
        msg << "note: checkpoint has trained " << state.stages_done << " of "
            << state.config.n_stages << " stages\n";
    }
    msg << "frontal: " << fpath << "\nlateral: " << lpath << "\n";
    emit(json, msg.str(),
         {{"frontal", fpath}, {"lateral", lpath}, {"resolution", frontal.w}});
    return 0;
}

int run_evaluate(const std::string& manifest, const std::string& ckpt, const std::string& eval_vcn,
                 int n_splits, bool json) {
    TrainState state = load_checkpoint(ckpt);
    const TrainConfig& cfg = state.config;
    std::uint64_t hash = config_hash(cfg);
    VcnParams scorer = load_vcn_checkpoint(eval_vcn, &hash);
    std::int64_t res = cfg.final_resolution();
    if (scorer.cfg.resolution != res) {
        throw std::invalid_argument("evaluation scorer resolution " +
                                    std::to_string(scorer.cfg.resolution) +
                                    " does not match the final resolution " + std::to_string(res));
    }

    Dataset data = load_dataset(manifest, cfg);
    if (data.split.test.empty()) throw std::invalid_argument("test split is empty");

    // Generated and real test images at the final resolution.
    std::vector<Tensor> gen_f, real_f;
    std::vector<std::pair<Tensor, Tensor>> gen_pairs;
    for (const auto& id : data.split.test) {
        const StudyRecord& rec = data.record(id);
        auto [f, l] = generate_pair(rec.report_text, state);
        Tensor tf = image_as_tensor(f);
        Tensor tl = image_as_tensor(l);
        gen_f.push_back(tf);
        gen_pairs.emplace_back(tf, tl);
        real_f.push_back(resize_pow2(image_as_tensor(read_png_gray(rec.frontal_path)), res));
    }

    // The feature extractor is a finding classifier fit on the training
    // split, so evaluation never sees its own inputs during fitting.
    std::vector<Tensor> train_imgs;
    std::vector<int> train_labels;
    for (const auto& id : data.split.train) {
        const StudyRecord& rec = data.record(id);
        train_imgs.push_back(resize_pow2(image_as_tensor(read_png_gray(rec.frontal_path)), res));
        train_labels.push_back(parse_opacity_finding(rec.report_text));
    }
    SyntheticFindingExtractor extractor(res, 16, 3, 8,
                                        Rng(cfg.seed).derive("extractor").next_u64());
    extractor.train(train_imgs, train_labels, 10, 1e-3,
                    Rng(cfg.seed).derive("extractor-train").next_u64());

    MetricReport report;
    report.n_samples = static_cast<int>(gen_f.size());
    report.extractor_id = extractor.id();
    std::tie(report.is_mean, report.is_std) = inception_score(gen_f, extractor, n_splits);

    std::vector<Tensor> feat_gen, feat_real;
    for (const auto& t : gen_f) feat_gen.push_back(extractor.features(t));
    for (const auto& t : real_f) feat_real.push_back(extractor.features(t));
    report.fid = fid(feat_gen, feat_real);

    double ssim_acc = 0.0;
    for (std::size_t i = 0; i < gen_f.size(); ++i) ssim_acc += ssim(gen_f[i], real_f[i]);
    report.ssim_mean = ssim_acc / static_cast<double>(gen_f.size());
    report.vc_mean = vc_metric(gen_pairs, scorer);

    nlohmann::json j;
    j["is_mean"] = report.is_mean;
    j["is_std"] = report.is_std;
    j["fid"] = report.fid;
    j["ssim"] = report.ssim_mean;
    j["vc"] = report.vc_mean;
    j["n"] = report.n_samples;
    j["extractor"] = report.extractor_id;
    emit(json, format_metric_table(report), j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"report-conditioned chest X-ray pair generator"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "write a synthetic paired corpus");
    std::int64_t sd_n = 16, sd_size = 32;
    std::uint64_t sd_seed = 1;
    std::string sd_out;
    bool sd_json = false;
    synth->add_option("--n", sd_n, "number of studies")->required()->check(CLI::PositiveNumber);
    synth->add_option("--size", sd_size, "image side in pixels (power of two, >= 16)");
    synth->add_option("--seed", sd_seed, "generation seed");
    synth->add_option("--out", sd_out, "output directory")->required();
    synth->add_flag("--json", sd_json, "also print a JSON summary");

    // train-vcn
    auto* tvcn = app.add_subcommand("train-vcn", "train a view-consistency scorer for one stage");
    ConfigArgs tvcn_cfg;
    std::string tvcn_manifest, tvcn_out, tvcn_split = "train";
    int tvcn_stage = 1;
    bool tvcn_json = false;
    tvcn->add_option("--manifest", tvcn_manifest, "corpus manifest")->required();
    tvcn->add_option("--stage", tvcn_stage, "pipeline stage (sets the resolution)");
    tvcn->add_option("--split", tvcn_split, "training studies: train, or eval for held-out")
        ->check(CLI::IsMember({"train", "eval"}));
    tvcn->add_option("--out", tvcn_out, "checkpoint file to write")->required();
    tvcn->add_flag("--json", tvcn_json, "also print a JSON summary");
    tvcn_cfg.attach(tvcn);

    // train
    auto* train = app.add_subcommand("train", "run the full training pipeline");
    ConfigArgs train_cfg;
    std::string train_manifest, train_out, train_resume;
    bool train_json = false;
    train->add_option("--manifest", train_manifest, "corpus manifest")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--resume", train_resume, "continue after this stage checkpoint");
    train->add_flag("--json", train_json, "also print a JSON summary");
    train_cfg.attach(train);

    // generate
    auto* gen = app.add_subcommand("generate", "generate a frontal/lateral pair from a report");
    std::string gen_report, gen_ckpt, gen_out;
    bool gen_json = false;
    gen->add_option("--report", gen_report, "report file or literal text")->required();
    gen->add_option("--checkpoint", gen_ckpt, "training checkpoint")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--json", gen_json, "also print a JSON summary");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "score generated test-split pairs");
    std::string eval_manifest, eval_ckpt, eval_vcn;
    int eval_splits = 1;
    bool eval_json = false;
    eval->add_option("--manifest", eval_manifest, "corpus manifest")->required();
    eval->add_option("--checkpoint", eval_ckpt, "training checkpoint")->required();
    eval->add_option("--eval-vcn", eval_vcn, "held-out view-consistency scorer checkpoint")
        ->required();
    eval->add_option("--n-splits", eval_splits, "inception score splits")
        ->check(CLI::PositiveNumber);
    eval->add_flag("--json", eval_json, "also print a JSON summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) return run_synth_data(sd_n, sd_size, sd_seed, sd_out, sd_json);
        if (tvcn->parsed()) {
            return run_train_vcn(tvcn_cfg, tvcn_manifest, tvcn_stage, tvcn_split, tvcn_out,
                                 tvcn_json);
        }
        if (train->parsed()) {
            return run_train(train_cfg, train_manifest, train_out, train_resume, train_json);
        }
        if (gen->parsed()) return run_generate(gen_report, gen_ckpt, gen_out, gen_json);
        if (eval->parsed()) {
            return run_evaluate(eval_manifest, eval_ckpt, eval_vcn, eval_splits, eval_json);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;  // unreachable: a subcommand is required
}
