#include "xraygan/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace xraygan {

void LossWeights::validate() const {
    if (!std::isfinite(w_adv) || !std::isfinite(w_recon) || !std::isfinite(w_vc) ||
        !std::isfinite(gp_coefficient)) {
        throw std::invalid_argument("loss weights must be finite");
    }
    if (w_recon < 0.0) throw std::invalid_argument("reconstruction weight must be >= 0");
    if (gp_coefficient < 0.0) throw std::invalid_argument("gradient penalty coefficient must be >= 0");
}

ad::Var critic_mean(const ad::Var& images, const ad::Var& c, View view, int stage,
                    const DiscriminatorParams& params) {
    ad::Var scores = discriminate_var(images, c, view, stage, params);  // [B,1,g,g]
    return ad::mean(scores);
}

namespace {

// Per-sample mean of the patch grid: [B,1,g,g] -> [B].
ad::Var per_sample_score(const ad::Var& scores) {
    const Shape& s = scores.shape();
    double inv = 1.0 / static_cast<double>(s[1] * s[2] * s[3]);
    ad::Var r = ad::reduce_sum(ad::reduce_sum(ad::reduce_sum(scores, 3), 2), 1);
    return ad::mul(ad::reshape(r, Shape{s[0]}), inv);
}

}  // namespace

AdvLosses wgan_gp_losses(const ad::Var& real, const ad::Var& fake, const ad::Var& c, View view,
                         int stage, const DiscriminatorParams& params, double gp_coefficient,
                         Rng& rng) {
    if (!shapes_equal(real.shape(), fake.shape())) {
        throw std::invalid_argument("real/fake shape mismatch: " + shape_str(real.shape()) + " vs " +
                                    shape_str(fake.shape()));
    }
    std::int64_t batch = real.shape()[0];

    ad::Var d_fake = critic_mean(fake, c, view, stage, params);
    ad::Var d_real = critic_mean(real, c, view, stage, params);

    // One interpolation point per sample. The blend is built from values,
    // not from the input graphs: the penalty constrains the critic as a
    // function of its input, so only the critic may receive gradient.
    Tensor xhat(real.shape());
    const double* pr = real.value().data();
    const double* pf = fake.value().data();
    double* px = xhat.data();
    std::int64_t per = real.value().numel() / batch;
    for (std::int64_t b = 0; b < batch; ++b) {
        double eps = rng.uniform();
        for (std::int64_t i = 0; i < per; ++i) {
            std::int64_t at = b * per + i;
            px[at] = eps * pr[at] + (1.0 - eps) * pf[at];
        }
    }
    ad::Var x = ad::leaf(std::move(xhat), true);
    ad::Var s_hat = per_sample_score(discriminate_var(x, ad::detach(c), view, stage, params));
    ad::Var gx = ad::grad(ad::reduce_sum(s_hat, 0), {x}, {.create_graph = true})[0];  // [B,1,S,S]

    ad::Var sq = ad::reduce_sum(ad::reduce_sum(ad::reduce_sum(ad::square(gx), 3), 2), 1);
    ad::Var norm = ad::sqrt(ad::reshape(sq, Shape{batch}));  // [B]
    ad::Var gp = ad::mean(ad::square(ad::sub(norm, 1.0)));

    AdvLosses out;
    out.gp = gp;
    out.adv_d = ad::add(ad::sub(d_fake, d_real), ad::mul(gp, gp_coefficient));
    out.adv_g = ad::mul(d_fake, -1.0);
    return out;
}

ad::Var reconstruction_loss(const ad::Var& fake, const ad::Var& real) {
    if (!shapes_equal(fake.shape(), real.shape())) {
        throw std::invalid_argument("reconstruction shape mismatch: " + shape_str(fake.shape()) +
                                    " vs " + shape_str(real.shape()));
    }
    return ad::mean(ad::square(ad::sub(fake, real)));
}

ad::Var view_consistency_reward(const ad::Var& x_f, const ad::Var& x_l, const VcnParams& vcn) {
    VcnParams frozen = freeze(vcn);
    return ad::mean(consistency_score_var(x_f, x_l, frozen));
}

ad::Var total_generator_loss(const ad::Var& adv_g, const ad::Var& recon, const ad::Var& vc_reward,
                             const LossWeights& weights) {
    weights.validate();
    for (const ad::Var* v : {&adv_g, &recon, &vc_reward}) {
        if (v->shape() != Shape{} && shape_numel(v->shape()) != 1) {
            throw std::invalid_argument("loss components must be scalars");
        }
        if (!std::isfinite(v->value().item())) {
            throw std::invalid_argument("non-finite loss component");
        }
    }
    return ad::add(ad::add(ad::mul(adv_g, weights.w_adv), ad::mul(recon, weights.w_recon)),
                   ad::mul(vc_reward, weights.w_vc));
}

double total_generator_loss(double adv_g, double recon, double vc_reward,
                            const LossWeights& weights) {
    weights.validate();
    if (!std::isfinite(adv_g) || !std::isfinite(recon) || !std::isfinite(vc_reward)) {
        throw std::invalid_argument("non-finite loss component");
    }
    return weights.w_adv * adv_g + weights.w_recon * recon + weights.w_vc * vc_reward;
}

}  // namespace xraygan
