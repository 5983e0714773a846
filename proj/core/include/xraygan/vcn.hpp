#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xraygan/autodiff.hpp"
#include "xraygan/corpus.hpp"
#include "xraygan/nn.hpp"

namespace xraygan {

struct VcnConfig {
    int stage = 1;
    std::int64_t resolution = 32;
    std::int64_t width = 16;      // stem width; block widths double, capped at 8x
    std::int64_t embed_dim = 32;  // length of the image embedding
    void validate() const;
};

// Siamese scorer: sigmoid(sum_j w_j |f_j(a) - f_j(b)|). The argument has
// no bias term, so identical inputs score exactly 0.5. The combination
// weights start at zero, which pins the initial score to 0.5 for every
// input pair.
struct VcnParams {
    VcnConfig cfg;
    nn::Conv2d stem;
    std::vector<nn::ResBlock> blocks;
    nn::Linear head;
    ad::Var comb;  // [embed_dim]
    void register_params(nn::ParamList& ps, const std::string& prefix) const;
};

struct PairExample {
    Tensor frontal;  // [S, S]
    Tensor lateral;  // [S, S]
    bool consistent = false;
};

struct VcnTrainResult {
    VcnParams params;
    std::vector<double> epoch_loss;
};

VcnParams init_vcn(const VcnConfig& cfg, std::uint64_t seed);

// Copy whose parameters are plain constants: same values, no gradient flow.
VcnParams freeze(const VcnParams& params);

// Batched embeddings: [B,1,S,S] -> [B, embed_dim].
ad::Var embed_batch_var(const ad::Var& images, const VcnParams& params);
// Batched pair probabilities: [B,1].
ad::Var consistency_score_var(const ad::Var& frontal, const ad::Var& lateral,
                              const VcnParams& params);

Tensor embed_image(const Tensor& image, const VcnParams& params);  // [embed_dim]
double consistency_score(const Tensor& frontal, const Tensor& lateral, const VcnParams& params);

// One positive pair per study plus n_neg_per_pos cross-patient negatives,
// images loaded from the records and resized to stage_resolution.
std::vector<PairExample> sample_pairs(const std::vector<StudyRecord>& records,
                                      std::int64_t stage_resolution, int n_neg_per_pos,
                                      std::uint64_t seed);

VcnTrainResult train_vcn(const std::vector<PairExample>& pairs, const VcnConfig& cfg, int epochs,
                         double lr, std::uint64_t seed);

}  // namespace xraygan
