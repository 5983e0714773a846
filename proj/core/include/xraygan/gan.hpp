#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xraygan/autodiff.hpp"
#include "xraygan/encoder.hpp"
#include "xraygan/nn.hpp"

namespace xraygan {

enum class View { frontal, lateral };
inline int view_index(View v) { return v == View::frontal ? 0 : 1; }
const char* view_name(View v);

struct StageConfig {
    int n_stages = 4;
    std::int64_t base_resolution = 32;
    double alpha = 0.5;
    std::vector<std::int64_t> channels;  // feature width per stage
    std::int64_t cond_dim = 256;         // dimension of the report embedding c
    int base_blocks = 8;     // residual blocks in the lowest-resolution generator
    int refine_blocks = 4;   // residual blocks per progressive refiner
    std::int64_t cond_channels = 8;  // channels of the tiled conditioning plane

    std::int64_t resolution(int stage) const;  // base_resolution * 2^(stage-1)
    std::int64_t patch_grid(int stage) const;  // resolution / 8
    void validate() const;
};

struct StageImage {
    Tensor pixels;  // [S, S], values in [-1, 1]
    int stage = 1;
    View view = View::frontal;
};

// Lowest-resolution generator: project c to a 4x4 seed map, then a chain
// of residual blocks whose tail doubles resolution up to base_resolution.
struct BaseGenerator {
    nn::Linear proj;
    std::vector<nn::ResBlock> blocks;
    nn::Conv2d out;
    void register_params(nn::ParamList& ps, const std::string& prefix) const;
};

// Stage n > 1 refiner: consumes the doubled previous image concatenated
// with a tiled projection of c and emits a same-size residual image.
struct ProgressiveGenerator {
    nn::Linear cond;
    std::vector<nn::ResBlock> blocks;
    nn::Conv2d out;
    void register_params(nn::ParamList& ps, const std::string& prefix) const;
};

// Patch critic: strided residual downsampling to an S/8 grid, conditioning
// plane concatenated, then two final convolutions to one score per patch.
// WGAN critic, so scores are unbounded.
struct StageCritic {
    nn::Linear cond;
    std::vector<nn::ResBlock> down;
    nn::Conv2d mix;
    nn::Conv2d score;
    void register_params(nn::ParamList& ps, const std::string& prefix) const;
};

struct GeneratorParams {
    StageConfig cfg;
    std::array<BaseGenerator, 2> base;                       // [view]
    std::array<std::vector<ProgressiveGenerator>, 2> prog;   // [view][stage-2]
    void register_params(nn::ParamList& ps, const std::string& prefix) const;
    nn::ParamList stage_params(View view, int stage) const;
};

struct DiscriminatorParams {
    StageConfig cfg;
    std::array<std::vector<StageCritic>, 2> stages;  // [view][stage-1]
    void register_params(nn::ParamList& ps, const std::string& prefix) const;
    nn::ParamList stage_params(View view, int stage) const;
};

GeneratorParams init_generator(const StageConfig& cfg, std::uint64_t seed);
DiscriminatorParams init_discriminator(const StageConfig& cfg, std::uint64_t seed);

// Differentiable batched pipeline. c: [B, cond_dim], images: [B,1,S,S].
ad::Var generate_base_var(const ad::Var& c, View view, const GeneratorParams& params);
ad::Var upsample_var(const ad::Var& x);
ad::Var generate_progressive_var(const ad::Var& x_prev, const ad::Var& c, View view, int stage,
                                 const GeneratorParams& params);
ad::Var discriminate_var(const ad::Var& x, const ad::Var& c, View view, int stage,
                         const DiscriminatorParams& params);

// Value-level single-image entry points.
StageImage generate_base(const ReportEmbedding& c, View view, const GeneratorParams& params);
StageImage upsample(const StageImage& x);
StageImage generate_progressive(const StageImage& x_prev, const ReportEmbedding& c, int stage,
                                const GeneratorParams& params);
Tensor discriminate(const StageImage& x, const ReportEmbedding& c, int stage,
                    const DiscriminatorParams& params);

}  // namespace xraygan
