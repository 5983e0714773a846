#include <sys/wait.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "xraygan/config.hpp"
#include "xraygan/corpus.hpp"
#include "xraygan/image.hpp"
#include "xraygan/trainer.hpp"
#include "xraygan/vcn.hpp"

using namespace xraygan;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Runs the installed command-line binary with redirected streams. The
// binary path is baked in at compile time by the build.
RunResult run_cli(const std::string& args) {
    static int counter = 0;
    auto base = fs::temp_directory_path() / "xraygan-cli-tests" / "streams";
    fs::create_directories(base);
    std::string out_file = (base / ("out-" + std::to_string(counter) + ".txt")).string();
    std::string err_file = (base / ("err-" + std::to_string(counter) + ".txt")).string();
    ++counter;

    std::string cmd = std::string(XRAYGAN_CLI) + " " + args + " > " + out_file + " 2> " + err_file;
    int raw = std::system(cmd.c_str());
    REQUIRE(raw != -1);
    REQUIRE(WIFEXITED(raw));

    RunResult r;
    r.code = WEXITSTATUS(raw);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

nlohmann::json last_json_line(const std::string& out) {
    std::istringstream in(out);
    std::string line, last;
    while (std::getline(in, line)) {
        if (!line.empty()) last = line;
    }
    REQUIRE(!last.empty());
    REQUIRE(last.front() == '{');
    return nlohmann::json::parse(last);
}

std::string fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / "xraygan-cli-tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
}

// Same shrunken two-stage setup the trainer tests use, routed through a
// config file so the CLI exercises its loading path.
TrainConfig tiny_config() {
    TrainConfig c;
    c.n_stages = 2;
    c.base_resolution = 16;
    c.stage_channels = {4, 4};
    c.cond_channels = 2;
    c.base_blocks = 2;
    c.refine_blocks = 1;
    c.embed_dim = 4;
    c.hidden_dim = 4;
    c.attention_dim = 4;
    c.stage_lrs = {1e-3, 1e-3};
    c.stage_batches = {4, 4};
    c.stage_epochs = {1, 1};
    c.vcn_epochs = 1;
    c.vcn_width = 2;
    c.vcn_embed_dim = 4;
    c.seed = 11;
    return c;
}

std::size_t count_pngs(const std::string& dir) {
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".png") ++n;
    }
    return n;
}

// One corpus, config file, training run, evaluation scorer, and generated
// pair, shared by the contract cases below.
struct CliRun {
    std::string dir;
    std::string manifest;
    std::string config_path;
    std::string run_dir;
    std::string final_ckpt, stage1_ckpt;
    std::string eval_vcn;
    std::string report_path;
    std::string report_text;
    std::string gen_dir;
};

const CliRun& cli_run() {
    static CliRun r = [] {
        CliRun q;
        q.dir = fresh_dir("pipeline");

        RunResult synth = run_cli("synth-data --n 12 --size 32 --seed 17 --out " + q.dir +
                                  "/corpus --json");
        REQUIRE_MESSAGE(synth.code == 0, synth.err);
        q.manifest = last_json_line(synth.out).at("manifest").get<std::string>();

        q.config_path = q.dir + "/config.json";
        std::ofstream(q.config_path) << config_to_json(tiny_config());

        q.run_dir = q.dir + "/run";
        RunResult train = run_cli("train --manifest " + q.manifest + " --config " + q.config_path +
                                  " --out " + q.run_dir + " --json");
        REQUIRE_MESSAGE(train.code == 0, train.err);
        auto tj = last_json_line(train.out);
        q.stage1_ckpt = tj.at("checkpoints").at(0).get<std::string>();
        q.final_ckpt = tj.at("checkpoints").at(1).get<std::string>();

        q.eval_vcn = q.dir + "/eval-vcn.ckpt";
        RunResult tvcn = run_cli("train-vcn --manifest " + q.manifest + " --config " +
                                 q.config_path + " --stage 2 --split eval --out " + q.eval_vcn +
                                 " --json");
        REQUIRE_MESSAGE(tvcn.code == 0, tvcn.err);

        q.report_text = parse_manifest(q.manifest).front().report_text;
        q.report_path = q.dir + "/report.txt";
        std::ofstream(q.report_path) << q.report_text;

        q.gen_dir = q.dir + "/gen";
        RunResult gen = run_cli("generate --report " + q.report_path + " --checkpoint " +
                                q.final_ckpt + " --out " + q.gen_dir + " --json");
        REQUIRE_MESSAGE(gen.code == 0, gen.err);
        return q;
    }();
    return r;
}

}  // namespace

TEST_CASE("synth-data writes the declared corpus and is seed-deterministic") {
    const CliRun& p = cli_run();
    CHECK(fs::exists(p.manifest));
    CHECK(count_pngs(p.dir + "/corpus/images") == 24);
    CHECK(parse_manifest(p.manifest).size() == 12);

    // Image paths in the manifest are relative, so an identically seeded
    // corpus in another directory is byte-identical.
    std::string other = fresh_dir("corpus-again");
    RunResult again = run_cli("synth-data --n 12 --size 32 --seed 17 --out " + other + " --json");
    REQUIRE(again.code == 0);
    auto j = last_json_line(again.out);
    CHECK(j.at("n") == 12);
    CHECK(j.at("images") == 24);
    CHECK(slurp(other + "/manifest.jsonl") == slurp(p.manifest));
    CHECK(slurp(other + "/images/syn-0000_frontal.png") ==
          slurp(p.dir + "/corpus/images/syn-0000_frontal.png"));

    std::string differes = fresh_dir("corpus-reseeded");
    RunResult reseeded = run_cli("synth-data --n 12 --size 32 --seed 18 --out " + differes);
    REQUIRE(reseeded.code == 0);
    CHECK(slurp(differes + "/manifest.jsonl") != slurp(p.manifest));
}

TEST_CASE("train reports checkpoints, scorers, and the loss log") {
    const CliRun& p = cli_run();
    CHECK(fs::exists(p.stage1_ckpt));
    CHECK(fs::exists(p.final_ckpt));
    CHECK(fs::exists(p.run_dir + "/vcn-stage-1.ckpt"));
    CHECK(fs::exists(p.run_dir + "/vcn-stage-2.ckpt"));
    CHECK(fs::exists(p.run_dir + "/train_log.jsonl"));

    // Resuming from the stage-1 checkpoint yields the same final stage as
    // the uninterrupted run.
    std::string resume_dir = fresh_dir("resume");
    RunResult resumed = run_cli("train --manifest " + p.manifest + " --config " + p.config_path +
                                " --out " + resume_dir + " --resume " + p.stage1_ckpt + " --json");
    REQUIRE_MESSAGE(resumed.code == 0, resumed.err);
    auto j = last_json_line(resumed.out);
    CHECK(j.at("checkpoints").size() == 1);
    CHECK(slurp(j.at("checkpoints").at(0).get<std::string>()) == slurp(p.final_ckpt));
}

TEST_CASE("generate writes a frontal and a lateral PNG at the final resolution") {
    const CliRun& p = cli_run();
    Image frontal = read_png_gray(p.gen_dir + "/frontal.png");
    Image lateral = read_png_gray(p.gen_dir + "/lateral.png");
    CHECK(frontal.w == 32);
    CHECK(frontal.h == 32);
    CHECK(lateral.w == 32);
    CHECK(lateral.h == 32);

    // Literal report text takes the same path as a report file.
    std::string lit_dir = fresh_dir("gen-literal");
    RunResult lit = run_cli("generate --report '" + p.report_text + "' --checkpoint " +
                            p.final_ckpt + " --out " + lit_dir + " --json");
    REQUIRE_MESSAGE(lit.code == 0, lit.err);
    CHECK(last_json_line(lit.out).at("resolution") == 32);
    CHECK(slurp(lit_dir + "/frontal.png") == slurp(p.gen_dir + "/frontal.png"));
    CHECK(slurp(lit_dir + "/lateral.png") == slurp(p.gen_dir + "/lateral.png"));

    // A partially trained checkpoint still renders at full size but says so.
    std::string part_dir = fresh_dir("gen-partial");
    RunResult part = run_cli("generate --report " + p.report_path + " --checkpoint " +
                             p.stage1_ckpt + " --out " + part_dir);
    REQUIRE(part.code == 0);
    CHECK(part.out.find("note:") != std::string::npos);
    CHECK(read_png_gray(part_dir + "/frontal.png").w == 32);
}

TEST_CASE("evaluate prints the four metric columns and a structured summary") {
    const CliRun& p = cli_run();
    RunResult r = run_cli("evaluate --manifest " + p.manifest + " --checkpoint " + p.final_ckpt +
                          " --eval-vcn " + p.eval_vcn + " --json");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (const char* col : {"IS", "FID", "SSIM", "VC"}) {
        CHECK_MESSAGE(r.out.find(col) != std::string::npos, "missing column " << col);
    }
    auto j = last_json_line(r.out);
    CHECK(j.at("is_mean").get<double>() >= 1.0 - 1e-6);
    CHECK(j.at("is_std").get<double>() == 0.0);  // single split
    CHECK(j.at("fid").get<double>() >= 0.0);
    CHECK(j.at("ssim").get<double>() <= 1.0 + 1e-9);
    CHECK(j.at("vc").get<double>() > 0.0);
    CHECK(j.at("vc").get<double>() < 1.0);
    CHECK(j.at("n").get<int>() >= 1);
    CHECK(!j.at("extractor").get<std::string>().empty());
}

TEST_CASE("train-vcn writes a stage-tagged scorer and honors seed overrides") {
    const CliRun& p = cli_run();
    std::string dir = fresh_dir("tvcn");

    RunResult a = run_cli("train-vcn --manifest " + p.manifest + " --config " + p.config_path +
                          " --stage 1 --out " + dir + "/a.ckpt --json");
    REQUIRE_MESSAGE(a.code == 0, a.err);
    auto j = last_json_line(a.out);
    CHECK(j.at("stage") == 1);
    CHECK(j.at("split") == "train");
    CHECK(j.at("pairs").get<int>() > 0);
    VcnParams scorer = load_vcn_checkpoint(dir + "/a.ckpt");
    CHECK(scorer.cfg.resolution == 16);

    RunResult b = run_cli("train-vcn --manifest " + p.manifest + " --config " + p.config_path +
                          " --stage 1 --out " + dir + "/b.ckpt");
    REQUIRE(b.code == 0);
    CHECK(slurp(dir + "/b.ckpt") == slurp(dir + "/a.ckpt"));

    RunResult c = run_cli("train-vcn --manifest " + p.manifest + " --config " + p.config_path +
                          " --seed 99 --stage 1 --out " + dir + "/c.ckpt");
    REQUIRE(c.code == 0);
    CHECK(slurp(dir + "/c.ckpt") != slurp(dir + "/a.ckpt"));
}

TEST_CASE("the desk preset flag applies the desk configuration") {
    const CliRun& p = cli_run();
    std::string out = fresh_dir("preset") + "/desk-vcn.ckpt";
    RunResult r = run_cli("train-vcn --manifest " + p.manifest + " --preset desk --stage 1 --out " +
                          out);
    REQUIRE_MESSAGE(r.code == 0, r.err);

    std::uint64_t hash = config_hash(desk_preset());
    VcnParams scorer = load_vcn_checkpoint(out, &hash);
    CHECK(scorer.cfg.resolution == desk_preset().base_resolution);
    CHECK(scorer.cfg.width == desk_preset().vcn_width);
    CHECK(scorer.cfg.embed_dim == desk_preset().vcn_embed_dim);
}

TEST_CASE("help output names every subcommand and flag") {
    RunResult top = run_cli("--help");
    CHECK(top.code == 0);
    for (const char* sub : {"synth-data", "train-vcn", "train", "generate", "evaluate"}) {
        CHECK_MESSAGE(top.out.find(sub) != std::string::npos, "missing subcommand " << sub);
    }

    RunResult gen = run_cli("generate --help");
    CHECK(gen.code == 0);
    for (const char* flag : {"--report", "--checkpoint", "--out", "--json"}) {
        CHECK_MESSAGE(gen.out.find(flag) != std::string::npos, "missing flag " << flag);
    }

    RunResult train = run_cli("train --help");
    CHECK(train.code == 0);
    for (const char* flag :
         {"--manifest", "--out", "--resume", "--config", "--preset", "--seed", "--json"}) {
        CHECK_MESSAGE(train.out.find(flag) != std::string::npos, "missing flag " << flag);
    }

    RunResult synth = run_cli("synth-data --help");
    CHECK(synth.code == 0);
    for (const char* flag : {"--n", "--size", "--seed", "--out", "--json"}) {
        CHECK_MESSAGE(synth.out.find(flag) != std::string::npos, "missing flag " << flag);
    }
}

TEST_CASE("user errors exit 1 with a message and no stack trace") {
    const CliRun& p = cli_run();
    std::string dir = fresh_dir("errors");

    auto expect_user_error = [&](const std::string& args, const std::string& needle) {
        RunResult r = run_cli(args);
        CHECK_MESSAGE(r.code == 1, "args: " << args << " code: " << r.code);
        CHECK_MESSAGE(r.err.find(needle) != std::string::npos,
                      "args: " << args << "\nexpected '" << needle << "' in: " << r.err);
        CHECK(r.err.find("terminate") == std::string::npos);
    };

    expect_user_error("bogus-command", "subcommand");
    expect_user_error("synth-data --n 4 --out " + dir + " --bogus", "--bogus");
    expect_user_error("synth-data --out " + dir, "--n");
    expect_user_error("synth-data --n 0 --out " + dir, "--n");
    expect_user_error("synth-data --n 4 --size 12 --out " + dir, "power of two");
    expect_user_error("generate --report x --checkpoint " + dir + "/absent.ckpt --out " + dir,
                      "cannot open checkpoint file");
    expect_user_error("generate --report ' . ' --checkpoint " + p.final_ckpt + " --out " + dir,
                      "empty");
    expect_user_error("train --manifest " + dir + "/absent.jsonl --config " + p.config_path +
                          " --out " + dir,
                      "cannot open manifest");
    expect_user_error("train-vcn --manifest " + p.manifest + " --config " + p.config_path +
                          " --stage 5 --out " + dir + "/v.ckpt",
                      "stage must be in 1..2");
    expect_user_error("evaluate --manifest " + p.manifest + " --checkpoint " + p.final_ckpt +
                          " --eval-vcn " + p.run_dir + "/vcn-stage-1.ckpt",
                      "does not match the final resolution");

    // Config problems are named per key.
    std::string bad1 = dir + "/unknown-key.json";
    std::ofstream(bad1) << "{\"gp_strength\": 1.0}\n";
    expect_user_error("train --manifest " + p.manifest + " --config " + bad1 + " --out " + dir,
                      "unknown key");

    std::string bad2 = dir + "/negative-lr.json";
    std::ofstream(bad2) << "{\"n_stages\": 2, \"stage_channels\": [4, 4], \"stage_batches\": "
                           "[4, 4], \"stage_epochs\": [1, 1], \"stage_lrs\": [-1e-4, 1e-4]}\n";
    expect_user_error("train --manifest " + p.manifest + " --config " + bad2 + " --out " + dir,
                      "stage_lrs");

    std::string bad3 = dir + "/short-list.json";
    std::ofstream(bad3) << "{\"n_stages\": 2, \"stage_lrs\": [1e-4]}\n";
    expect_user_error("train --manifest " + p.manifest + " --config " + bad3 + " --out " + dir,
                      "length must equal n_stages");

    // --config and --preset are mutually exclusive.
    RunResult both = run_cli("train --manifest " + p.manifest + " --config " + p.config_path +
                             " --preset desk --out " + dir);
    CHECK(both.code == 1);
}
