#include "xraygan/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "xraygan/rng.hpp"

namespace xraygan {

std::int64_t TrainConfig::final_resolution() const {
    return base_resolution << (n_stages - 1);
}

StageConfig TrainConfig::stage_config() const {
    StageConfig s;
    s.n_stages = n_stages;
    s.base_resolution = base_resolution;
    s.alpha = alpha;
    s.channels = stage_channels;
    s.cond_dim = cond_dim();
    s.cond_channels = cond_channels;
    s.base_blocks = base_blocks;
    s.refine_blocks = refine_blocks;
    return s;
}

EncoderConfig TrainConfig::encoder_config(std::int64_t vocab_size) const {
    EncoderConfig e;
    e.vocab_size = vocab_size;
    e.embed_dim = embed_dim;
    e.hidden_dim = hidden_dim;
    e.attention_dim = attention_dim;
    return e;
}

LossWeights TrainConfig::loss_weights() const {
    LossWeights w;
    w.w_adv = w_adv;
    w.w_recon = w_recon;
    w.w_vc = w_vc;
    w.gp_coefficient = gp_coefficient;
    return w;
}

VcnConfig TrainConfig::vcn_config(int stage) const {
    VcnConfig v;
    v.stage = stage;
    v.resolution = stage_config().resolution(stage);
    v.width = vcn_width;
    v.embed_dim = vcn_embed_dim;
    return v;
}

SplitRatios TrainConfig::split_ratios() const { return {split_train, split_val, split_test}; }

TrainConfig desk_preset() {
    TrainConfig c;
    c.n_stages = 2;
    c.base_resolution = 16;
    c.stage_channels = {16, 16};
    c.cond_channels = 4;
    c.base_blocks = 4;
    c.refine_blocks = 3;
    c.embed_dim = 32;
    c.hidden_dim = 32;
    c.attention_dim = 32;
    c.stage_lrs = {3e-4, 3e-4};
    c.lr_decay_every = 50;
    c.stage_batches = {8, 8};
    c.stage_epochs = {100, 30};
    c.vcn_width = 8;
    c.vcn_embed_dim = 16;
    return c;
}

double lr_at_epoch(double lr0, double decay, int every, int epoch) {
    if (every < 1) throw std::invalid_argument("decay interval must be >= 1");
    if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
    double lr = lr0;
    for (int k = 0; k < epoch / every; ++k) lr *= decay;
    return lr;
}

std::vector<std::string> validate_config(const TrainConfig& cfg) {
    std::vector<std::string> errs;
    auto bad = [&](const std::string& key, const std::string& why) { errs.push_back(key + ": " + why); };

    if (cfg.n_stages < 1) bad("n_stages", "must be >= 1");
    if (cfg.base_resolution < 16 || (cfg.base_resolution & (cfg.base_resolution - 1)) != 0) {
        bad("base_resolution", "must be a power of two >= 16");
    }
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) bad("alpha", "must be in [0,1]");

    auto check_len = [&](const std::string& key, std::size_t len) {
        if (cfg.n_stages >= 1 && len != static_cast<std::size_t>(cfg.n_stages)) {
            bad(key, "length must equal n_stages (" + std::to_string(cfg.n_stages) + ")");
        }
    };
    check_len("stage_channels", cfg.stage_channels.size());
    check_len("stage_lrs", cfg.stage_lrs.size());
    check_len("stage_batches", cfg.stage_batches.size());
    check_len("stage_epochs", cfg.stage_epochs.size());

    for (std::int64_t ch : cfg.stage_channels) {
        if (ch < 1) {
            bad("stage_channels", "entries must be >= 1");
            break;
        }
    }
    for (double lr : cfg.stage_lrs) {
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            bad("stage_lrs", "entries must be positive and finite");
            break;
        }
    }
    for (std::int64_t b : cfg.stage_batches) {
        if (b < 1) {
            bad("stage_batches", "entries must be >= 1");
            break;
        }
    }
    for (int e : cfg.stage_epochs) {
        if (e < 0) {
            bad("stage_epochs", "entries must be >= 0");
            break;
        }
    }

    if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) bad("lr_decay", "must be in (0,1]");
    if (cfg.lr_decay_every < 1) bad("lr_decay_every", "must be >= 1");
    if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0)) bad("adam_beta1", "must be in [0,1)");
    if (!(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0)) bad("adam_beta2", "must be in [0,1)");
    if (cfg.critic_steps < 1) bad("critic_steps", "must be >= 1");

    if (cfg.cond_channels < 1) bad("cond_channels", "must be >= 1");
    if (cfg.refine_blocks < 1) bad("refine_blocks", "must be >= 1");
    if (cfg.base_resolution >= 16 && (cfg.base_resolution & (cfg.base_resolution - 1)) == 0) {
        int need = 0;
        for (std::int64_t r = 4; r < cfg.base_resolution; r *= 2) ++need;
        if (cfg.base_blocks < need) {
            bad("base_blocks", "must be >= log2(base_resolution/4) = " + std::to_string(need));
        }
    }
    if (cfg.embed_dim < 1) bad("embed_dim", "must be >= 1");
    if (cfg.hidden_dim < 1) bad("hidden_dim", "must be >= 1");
    if (cfg.attention_dim < 1) bad("attention_dim", "must be >= 1");

    if (!std::isfinite(cfg.w_adv)) bad("w_adv", "must be finite");
    if (!std::isfinite(cfg.w_recon) || cfg.w_recon < 0.0) bad("w_recon", "must be finite and >= 0");
    if (!std::isfinite(cfg.w_vc)) bad("w_vc", "must be finite");
    if (!std::isfinite(cfg.gp_coefficient) || cfg.gp_coefficient < 0.0) {
        bad("gp_coefficient", "must be finite and >= 0");
    }

    if (cfg.vcn_epochs < 0) bad("vcn_epochs", "must be >= 0");
    if (!(cfg.vcn_lr > 0.0) || !std::isfinite(cfg.vcn_lr)) bad("vcn_lr", "must be positive and finite");
    if (cfg.vcn_width < 1) bad("vcn_width", "must be >= 1");
    if (cfg.vcn_embed_dim < 1) bad("vcn_embed_dim", "must be >= 1");
    if (cfg.vcn_negatives < 1) bad("vcn_negatives", "must be >= 1");

    if (cfg.split_train < 0.0) bad("split_train", "must be >= 0");
    if (cfg.split_val < 0.0) bad("split_val", "must be >= 0");
    if (cfg.split_test < 0.0) bad("split_test", "must be >= 0");
    double total = cfg.split_train + cfg.split_val + cfg.split_test;
    if (std::abs(total - 1.0) > 1e-9) bad("split_train", "splits must sum to 1");
    if (cfg.vocab_min_freq < 1) bad("vocab_min_freq", "must be >= 1");
    return errs;
}

namespace {

nlohmann::json config_json(const TrainConfig& c) {
    nlohmann::json j;
    j["n_stages"] = c.n_stages;
    j["base_resolution"] = c.base_resolution;
    j["alpha"] = c.alpha;
    j["stage_channels"] = c.stage_channels;
    j["cond_channels"] = c.cond_channels;
    j["base_blocks"] = c.base_blocks;
    j["refine_blocks"] = c.refine_blocks;
    j["embed_dim"] = c.embed_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["attention_dim"] = c.attention_dim;
    j["stage_lrs"] = c.stage_lrs;
    j["lr_decay"] = c.lr_decay;
    j["lr_decay_every"] = c.lr_decay_every;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["stage_batches"] = c.stage_batches;
    j["stage_epochs"] = c.stage_epochs;
    j["critic_steps"] = c.critic_steps;
    j["w_adv"] = c.w_adv;
    j["w_recon"] = c.w_recon;
    j["w_vc"] = c.w_vc;
    j["gp_coefficient"] = c.gp_coefficient;
    j["vcn_epochs"] = c.vcn_epochs;
    j["vcn_lr"] = c.vcn_lr;
    j["vcn_width"] = c.vcn_width;
    j["vcn_embed_dim"] = c.vcn_embed_dim;
    j["vcn_negatives"] = c.vcn_negatives;
    j["split_train"] = c.split_train;
    j["split_val"] = c.split_val;
    j["split_test"] = c.split_test;
    j["vocab_min_freq"] = c.vocab_min_freq;
    j["seed"] = c.seed;
    return j;
}

template <typename T>
void take(const nlohmann::json& j, const std::string& key, T& into, const char* type_name,
          std::vector<std::string>& errs) {
    try {
        into = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        errs.push_back(key + ": expected " + type_name);
    }
}

}  // namespace

TrainConfig parse_config_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

    TrainConfig c;
    std::vector<std::string> errs;
    const nlohmann::json known = config_json(c);
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (!known.contains(key)) errs.push_back(key + ": unknown key");
    }

    auto want = [&](const char* key) { return j.contains(key); };
    if (want("n_stages")) take(j, "n_stages", c.n_stages, "integer", errs);
    if (want("base_resolution")) take(j, "base_resolution", c.base_resolution, "integer", errs);
    if (want("alpha")) take(j, "alpha", c.alpha, "number", errs);
    if (want("stage_channels")) take(j, "stage_channels", c.stage_channels, "integer array", errs);
    if (want("cond_channels")) take(j, "cond_channels", c.cond_channels, "integer", errs);
    if (want("base_blocks")) take(j, "base_blocks", c.base_blocks, "integer", errs);
    if (want("refine_blocks")) take(j, "refine_blocks", c.refine_blocks, "integer", errs);
    if (want("embed_dim")) take(j, "embed_dim", c.embed_dim, "integer", errs);
    if (want("hidden_dim")) take(j, "hidden_dim", c.hidden_dim, "integer", errs);
    if (want("attention_dim")) take(j, "attention_dim", c.attention_dim, "integer", errs);
    if (want("stage_lrs")) take(j, "stage_lrs", c.stage_lrs, "number array", errs);
    if (want("lr_decay")) take(j, "lr_decay", c.lr_decay, "number", errs);
    if (want("lr_decay_every")) take(j, "lr_decay_every", c.lr_decay_every, "integer", errs);
    if (want("adam_beta1")) take(j, "adam_beta1", c.adam_beta1, "number", errs);
    if (want("adam_beta2")) take(j, "adam_beta2", c.adam_beta2, "number", errs);
    if (want("stage_batches")) take(j, "stage_batches", c.stage_batches, "integer array", errs);
    if (want("stage_epochs")) take(j, "stage_epochs", c.stage_epochs, "integer array", errs);
    if (want("critic_steps")) take(j, "critic_steps", c.critic_steps, "integer", errs);
    if (want("w_adv")) take(j, "w_adv", c.w_adv, "number", errs);
    if (want("w_recon")) take(j, "w_recon", c.w_recon, "number", errs);
    if (want("w_vc")) take(j, "w_vc", c.w_vc, "number", errs);
    if (want("gp_coefficient")) take(j, "gp_coefficient", c.gp_coefficient, "number", errs);
    if (want("vcn_epochs")) take(j, "vcn_epochs", c.vcn_epochs, "integer", errs);
    if (want("vcn_lr")) take(j, "vcn_lr", c.vcn_lr, "number", errs);
    if (want("vcn_width")) take(j, "vcn_width", c.vcn_width, "integer", errs);
    if (want("vcn_embed_dim")) take(j, "vcn_embed_dim", c.vcn_embed_dim, "integer", errs);
    if (want("vcn_negatives")) take(j, "vcn_negatives", c.vcn_negatives, "integer", errs);
    if (want("split_train")) take(j, "split_train", c.split_train, "number", errs);
    if (want("split_val")) take(j, "split_val", c.split_val, "number", errs);
    if (want("split_test")) take(j, "split_test", c.split_test, "number", errs);
    if (want("vocab_min_freq")) take(j, "vocab_min_freq", c.vocab_min_freq, "integer", errs);
    if (want("seed")) take(j, "seed", c.seed, "unsigned integer", errs);

    if (errs.empty()) {
        auto v = validate_config(c);
        errs.insert(errs.end(), v.begin(), v.end());
    }
    if (!errs.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errs) msg += "\n  " + e;
        throw std::invalid_argument(msg);
    }
    return c;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_json(buf.str());
}

std::string config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

std::uint64_t config_hash(const TrainConfig& cfg) {
    std::string canon = config_json(cfg).dump();
    return fnv1a64(canon.data(), canon.size());
}

}  // namespace xraygan
