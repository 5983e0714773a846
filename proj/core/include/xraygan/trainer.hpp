#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "xraygan/config.hpp"
#include "xraygan/corpus.hpp"
#include "xraygan/encoder.hpp"
#include "xraygan/gan.hpp"
#include "xraygan/image.hpp"
#include "xraygan/objective.hpp"
#include "xraygan/rng.hpp"
#include "xraygan/vcn.hpp"

namespace xraygan {

// Manifest records plus the seeded patient-grouped split and a vocabulary
// built from the training-split reports only.
struct Dataset {
    std::vector<StudyRecord> records;
    DatasetSplit split;
    Vocabulary vocab;

    const StudyRecord& record(const std::string& study_id) const;
};

Dataset load_dataset(const std::string& manifest_path, const TrainConfig& cfg);

struct TrainState {
    TrainConfig config;
    Vocabulary vocab;
    EncoderParams encoder;
    GeneratorParams generator;
    DiscriminatorParams discriminator;
    int stages_done = 0;
    std::int64_t global_step = 0;
    Rng rng;
    // Moments of the most recently finished stage's optimizers. Each stage
    // starts fresh optimizers; these are carried for exact round-trips.
    nn::AdamState opt_g, opt_d;
};

TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocab);

// One progressive stage: alternating critic and generator updates over the
// training split, with the epoch-decayed stage learning rate. The scorer
// must match the stage resolution and stays frozen. Writes one JSON object
// per step (and one per-epoch validation line) to loss_log when non-null.
void train_stage(TrainState& state, int stage, const Dataset& data, const VcnParams& vcn,
                 std::ostream* loss_log);

struct TrainArtifacts {
    TrainState state;
    std::vector<std::string> stage_checkpoints;
    std::vector<std::string> vcn_checkpoints;
    std::string log_path;
};

// Full pipeline: per stage, train the stage scorer on the training split,
// then the stage itself; a checkpoint is written after every stage. When
// resume_path is non-empty, training continues after that checkpoint's
// last finished stage (its config hash must match cfg).
TrainArtifacts train_full(const Dataset& data, const TrainConfig& cfg, const std::string& out_dir,
                          const std::string& resume_path = "");

// Deterministic inference at the final resolution.
std::pair<Image, Image> generate_pair(const std::string& report_text, const TrainState& state);

// Binary checkpoint with a format version and the config hash; round-trips
// bit-exactly, including optimizer moments and the RNG state.
void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

void save_vcn_checkpoint(const VcnParams& params, std::uint64_t cfg_hash, const std::string& path);
// expect_hash, when non-null, must match the stored training-config hash.
VcnParams load_vcn_checkpoint(const std::string& path, const std::uint64_t* expect_hash = nullptr);

// Stage-wise seeds for scorer training and its pair sampling, derived from
// the config seed but independent of the training RNG stream.
std::uint64_t vcn_seed(const TrainConfig& cfg, int stage);
std::uint64_t vcn_pair_seed(const TrainConfig& cfg, int stage);

}  // namespace xraygan
