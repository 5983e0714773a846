#pragma once

#include <cstdint>

#include "xraygan/autodiff.hpp"
#include "xraygan/gan.hpp"
#include "xraygan/rng.hpp"
#include "xraygan/vcn.hpp"

namespace xraygan {

struct LossWeights {
    double w_adv = 1.0;
    double w_recon = 100.0;
    double w_vc = -1.0;
    double gp_coefficient = 10.0;
    void validate() const;  // all finite; w_recon >= 0; gp_coefficient >= 0
};

// Per-step scalars for one view at one stage.
struct LossReport {
    int stage = 0;
    View view = View::frontal;
    double adv_g = 0.0;
    double adv_d = 0.0;
    double gp = 0.0;
    double recon = 0.0;
    double vc_reward = 0.0;
    double total_g = 0.0;
};

struct AdvLosses {
    ad::Var adv_d;  // E[D(fake)] - E[D(real)] + gp_coefficient * gp
    ad::Var adv_g;  // -E[D(fake)]
    ad::Var gp;     // E[(||grad_xhat D(xhat)||_2 - 1)^2]
};

// Scalar critic output: patch scores averaged over the grid and the batch.
ad::Var critic_mean(const ad::Var& images, const ad::Var& c, View view, int stage,
                    const DiscriminatorParams& params);

// Critic losses for one view at one stage. real/fake are [B,1,S,S], c is
// [B,cond_dim]. The interpolation point uses one epsilon per sample and is
// cut off from both inputs, so the penalty differentiates the critic alone.
AdvLosses wgan_gp_losses(const ad::Var& real, const ad::Var& fake, const ad::Var& c, View view,
                         int stage, const DiscriminatorParams& params, double gp_coefficient,
                         Rng& rng);

// Mean squared pixel difference.
ad::Var reconstruction_loss(const ad::Var& fake, const ad::Var& real);

// Mean consistency score of generated pairs under a frozen scorer: the
// result depends on the scorer's current values but carries no gradient
// into its parameters.
ad::Var view_consistency_reward(const ad::Var& x_f, const ad::Var& x_l, const VcnParams& vcn);

ad::Var total_generator_loss(const ad::Var& adv_g, const ad::Var& recon, const ad::Var& vc_reward,
                             const LossWeights& weights);
double total_generator_loss(double adv_g, double recon, double vc_reward,
                            const LossWeights& weights);

}  // namespace xraygan
