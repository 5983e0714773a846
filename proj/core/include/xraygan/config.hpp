#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xraygan/corpus.hpp"
#include "xraygan/encoder.hpp"
#include "xraygan/gan.hpp"
#include "xraygan/objective.hpp"
#include "xraygan/vcn.hpp"

namespace xraygan {

// Every knob of the training pipeline. Defaults are the full-scale
// settings; desk_preset() shrinks them to CPU-minutes.
struct TrainConfig {
    // architecture
    int n_stages = 4;
    std::int64_t base_resolution = 32;
    double alpha = 0.5;
    std::vector<std::int64_t> stage_channels = {64, 32, 16, 8};
    std::int64_t cond_channels = 8;
    int base_blocks = 8;
    int refine_blocks = 4;
    std::int64_t embed_dim = 128;
    std::int64_t hidden_dim = 128;
    std::int64_t attention_dim = 128;

    // optimization
    std::vector<double> stage_lrs = {3e-4, 3e-4, 2e-4, 1e-4};
    double lr_decay = 0.2;
    int lr_decay_every = 20;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    std::vector<std::int64_t> stage_batches = {96, 56, 24, 12};
    std::vector<int> stage_epochs = {50, 50, 50, 50};
    int critic_steps = 1;

    // objective weights
    double w_adv = 1.0;
    double w_recon = 100.0;
    double w_vc = -1.0;
    double gp_coefficient = 10.0;

    // view-consistency scorer
    int vcn_epochs = 20;
    double vcn_lr = 0.01;
    std::int64_t vcn_width = 16;
    std::int64_t vcn_embed_dim = 32;
    int vcn_negatives = 1;

    // data
    double split_train = 0.7;
    double split_val = 0.1;
    double split_test = 0.2;
    int vocab_min_freq = 1;
    std::uint64_t seed = 1;

    std::int64_t cond_dim() const { return 2 * hidden_dim; }
    std::int64_t final_resolution() const;

    StageConfig stage_config() const;
    EncoderConfig encoder_config(std::int64_t vocab_size) const;
    LossWeights loss_weights() const;
    VcnConfig vcn_config(int stage) const;
    SplitRatios split_ratios() const;
};

TrainConfig desk_preset();

// Empty list means the config is valid; otherwise one message per problem,
// each naming the offending key.
std::vector<std::string> validate_config(const TrainConfig& cfg);

// JSON object with one key per field. Unknown keys and wrong types are
// reported per key; missing keys keep their defaults. Validation failures
// throw with every message joined.
TrainConfig parse_config_json(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string config_to_json(const TrainConfig& cfg);

// Hash of the canonical (sorted-key, no-whitespace) JSON form.
std::uint64_t config_hash(const TrainConfig& cfg);

// lr0 scaled by decay once per `every` completed epochs (epoch is 0-based).
double lr_at_epoch(double lr0, double decay, int every, int epoch);

}  // namespace xraygan
