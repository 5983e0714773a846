#include "xraygan/gan.hpp"

#include <cmath>
#include <stdexcept>

namespace xraygan {

const char* view_name(View v) {
    return v == View::frontal ? "frontal" : "lateral";
}

std::int64_t StageConfig::resolution(int stage) const {
    if (stage < 1 || stage > n_stages) {
        throw std::invalid_argument("stage " + std::to_string(stage) + " out of range 1.." +
                                    std::to_string(n_stages));
    }
    return base_resolution << (stage - 1);
}

std::int64_t StageConfig::patch_grid(int stage) const {
    return resolution(stage) / 8;
}

void StageConfig::validate() const {
    if (n_stages < 1) throw std::invalid_argument("n_stages must be >= 1");
    if (base_resolution < 16 || (base_resolution & (base_resolution - 1)) != 0) {
        throw std::invalid_argument("base_resolution must be a power of two >= 16");
    }
    if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in [0,1]");
    if (static_cast<int>(channels.size()) != n_stages) {
        throw std::invalid_argument("channels must list one width per stage");
    }
    for (auto c : channels) {
        if (c < 1) throw std::invalid_argument("stage channel width must be >= 1");
    }
    if (cond_dim < 1) throw std::invalid_argument("cond_dim must be >= 1");
    int ups = 0;
    for (std::int64_t r = 4; r < base_resolution; r *= 2) ++ups;
    if (base_blocks < ups) {
        throw std::invalid_argument("base_blocks too few to reach base_resolution from 4x4");
    }
    if (refine_blocks < 1) throw std::invalid_argument("refine_blocks must be >= 1");
    if (cond_channels < 1) throw std::invalid_argument("cond_channels must be >= 1");
}

namespace {

void check_finite(const Tensor& t, const char* what) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i])) throw std::invalid_argument(std::string(what) + " is not finite");
    }
}

BaseGenerator make_base(const StageConfig& cfg, Rng& rng) {
    BaseGenerator g;
    std::int64_t ch = cfg.channels[0];
    g.proj = nn::Linear(cfg.cond_dim, ch * 4 * 4, rng);
    int ups = 0;
    for (std::int64_t r = 4; r < cfg.base_resolution; r *= 2) ++ups;
    for (int b = 0; b < cfg.base_blocks; ++b) {
        bool up = b >= cfg.base_blocks - ups;
        g.blocks.emplace_back(ch, ch, up, 1, nn::Act::relu, rng);
    }
    g.out = nn::Conv2d(ch, 1, 3, 1, 1, rng);
    return g;
}

ProgressiveGenerator make_prog(const StageConfig& cfg, int stage, Rng& rng) {
    ProgressiveGenerator g;
    std::int64_t ch = cfg.channels[static_cast<std::size_t>(stage - 1)];
    g.cond = nn::Linear(cfg.cond_dim, cfg.cond_channels, rng);
    for (int b = 0; b < cfg.refine_blocks; ++b) {
        std::int64_t in = b == 0 ? 1 + cfg.cond_channels : ch;
        g.blocks.emplace_back(in, ch, false, 1, nn::Act::relu, rng);
    }
    g.out = nn::Conv2d(ch, 1, 3, 1, 1, rng);
    return g;
}

StageCritic make_critic(const StageConfig& cfg, int stage, Rng& rng) {
    StageCritic d;
    std::int64_t ch = cfg.channels[static_cast<std::size_t>(stage - 1)];
    d.cond = nn::Linear(cfg.cond_dim, cfg.cond_channels, rng);
    std::int64_t in = 1;
    std::int64_t w = ch;
    for (int b = 0; b < 3; ++b) {
        d.down.emplace_back(in, w, false, 2, nn::Act::leaky_relu02, rng);
        in = w;
        w *= 2;
    }
    d.mix = nn::Conv2d(in + cfg.cond_channels, in, 3, 1, 1, rng);
    d.score = nn::Conv2d(in, 1, 1, 1, 0, rng);
    return d;
}

// [B, cond] -> [B, cond_channels, s, s] conditioning plane.
ad::Var tile_condition(const nn::Linear& proj, const ad::Var& c, std::int64_t s) {
    ad::Var t = proj(c);
    std::int64_t b = t.shape()[0], cc = t.shape()[1];
    return ad::broadcast_to(ad::reshape(t, Shape{b, cc, 1, 1}), Shape{b, cc, s, s});
}

void check_batch_cond(const ad::Var& c, const StageConfig& cfg) {
    if (c.shape().size() != 2 || c.shape()[1] != cfg.cond_dim) {
        throw std::invalid_argument("conditioning batch must be [B, " +
                                    std::to_string(cfg.cond_dim) + "]");
    }
    check_finite(c.value(), "conditioning vector");
}

void check_image_batch(const ad::Var& x, std::int64_t res, const char* what) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != res || s[3] != res) {
        throw std::invalid_argument(std::string(what) + " must be [B,1," + std::to_string(res) +
                                    "," + std::to_string(res) + "], got " + shape_str(s));
    }
}

ad::Var cond_row(const ReportEmbedding& c) {
    ad::Var v = ad::detach(c.c);
    return ad::reshape(v, Shape{1, v.shape()[0]});
}

Tensor clamp_unit(Tensor t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (t[i] > 1.0) t[i] = 1.0;
        if (t[i] < -1.0) t[i] = -1.0;
    }
    return t;
}

}  // namespace

void BaseGenerator::register_params(nn::ParamList& ps, const std::string& prefix) const {
    proj.register_params(ps, prefix + ".proj");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].register_params(ps, prefix + ".block" + std::to_string(i));
    }
    out.register_params(ps, prefix + ".out");
}

void ProgressiveGenerator::register_params(nn::ParamList& ps, const std::string& prefix) const {
    cond.register_params(ps, prefix + ".cond");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].register_params(ps, prefix + ".block" + std::to_string(i));
    }
    out.register_params(ps, prefix + ".out");
}

void StageCritic::register_params(nn::ParamList& ps, const std::string& prefix) const {
    cond.register_params(ps, prefix + ".cond");
    for (std::size_t i = 0; i < down.size(); ++i) {
        down[i].register_params(ps, prefix + ".down" + std::to_string(i));
    }
    mix.register_params(ps, prefix + ".mix");
    score.register_params(ps, prefix + ".score");
}

void GeneratorParams::register_params(nn::ParamList& ps, const std::string& prefix) const {
    for (View v : {View::frontal, View::lateral}) {
        std::string vp = prefix + "." + view_name(v);
        base[static_cast<std::size_t>(view_index(v))].register_params(ps, vp + ".base");
        const auto& pr = prog[static_cast<std::size_t>(view_index(v))];
        for (std::size_t i = 0; i < pr.size(); ++i) {
            pr[i].register_params(ps, vp + ".stage" + std::to_string(i + 2));
        }
    }
}

nn::ParamList GeneratorParams::stage_params(View view, int stage) const {
    nn::ParamList ps;
    auto vi = static_cast<std::size_t>(view_index(view));
    if (stage == 1) {
        base[vi].register_params(ps, "g");
    } else {
        if (stage < 2 || stage > cfg.n_stages) throw std::invalid_argument("stage out of range");
        prog[vi][static_cast<std::size_t>(stage - 2)].register_params(ps, "g");
    }
    return ps;
}

void DiscriminatorParams::register_params(nn::ParamList& ps, const std::string& prefix) const {
    for (View v : {View::frontal, View::lateral}) {
        std::string vp = prefix + "." + view_name(v);
        const auto& st = stages[static_cast<std::size_t>(view_index(v))];
        for (std::size_t i = 0; i < st.size(); ++i) {
            st[i].register_params(ps, vp + ".stage" + std::to_string(i + 1));
        }
    }
}

nn::ParamList DiscriminatorParams::stage_params(View view, int stage) const {
    if (stage < 1 || stage > cfg.n_stages) throw std::invalid_argument("stage out of range");
    nn::ParamList ps;
    stages[static_cast<std::size_t>(view_index(view))][static_cast<std::size_t>(stage - 1)]
        .register_params(ps, "d");
    return ps;
}

GeneratorParams init_generator(const StageConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    GeneratorParams p;
    p.cfg = cfg;
    for (int v = 0; v < 2; ++v) {
        p.base[static_cast<std::size_t>(v)] = make_base(cfg, rng);
        for (int stage = 2; stage <= cfg.n_stages; ++stage) {
            p.prog[static_cast<std::size_t>(v)].push_back(make_prog(cfg, stage, rng));
        }
    }
    return p;
}

DiscriminatorParams init_discriminator(const StageConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    DiscriminatorParams p;
    p.cfg = cfg;
    for (int v = 0; v < 2; ++v) {
        for (int stage = 1; stage <= cfg.n_stages; ++stage) {
            p.stages[static_cast<std::size_t>(v)].push_back(make_critic(cfg, stage, rng));
        }
    }
    return p;
}

ad::Var generate_base_var(const ad::Var& c, View view, const GeneratorParams& params) {
    check_batch_cond(c, params.cfg);
    const BaseGenerator& g = params.base[static_cast<std::size_t>(view_index(view))];
    std::int64_t b = c.shape()[0];
    std::int64_t ch = params.cfg.channels[0];
    ad::Var h = ad::reshape(g.proj(c), Shape{b, ch, 4, 4});
    for (const auto& block : g.blocks) h = block(h);
    return ad::tanh(g.out(h));
}

ad::Var upsample_var(const ad::Var& x) {
    return ad::upsample_bilinear2x(x);
}

ad::Var generate_progressive_var(const ad::Var& x_prev, const ad::Var& c, View view, int stage,
                                 const GeneratorParams& params) {
    const StageConfig& cfg = params.cfg;
    if (stage < 2 || stage > cfg.n_stages) {
        throw std::invalid_argument("progressive stage " + std::to_string(stage) +
                                    " out of range 2.." + std::to_string(cfg.n_stages));
    }
    check_batch_cond(c, cfg);
    check_image_batch(x_prev, cfg.resolution(stage - 1), "previous-stage image");
    const ProgressiveGenerator& g =
        params.prog[static_cast<std::size_t>(view_index(view))][static_cast<std::size_t>(stage - 2)];
    std::int64_t s = cfg.resolution(stage);
    ad::Var u = upsample_var(x_prev);
    ad::Var plane = tile_condition(g.cond, c, s);
    ad::Var h = ad::concat({u, plane}, 1);
    for (const auto& block : g.blocks) h = block(h);
    ad::Var refined = ad::tanh(g.out(h));
    return ad::add(ad::mul(refined, cfg.alpha), ad::mul(u, 1.0 - cfg.alpha));
}

ad::Var discriminate_var(const ad::Var& x, const ad::Var& c, View view, int stage,
                         const DiscriminatorParams& params) {
    const StageConfig& cfg = params.cfg;
    check_batch_cond(c, cfg);
    check_image_batch(x, cfg.resolution(stage), "critic input");
    const StageCritic& d =
        params.stages[static_cast<std::size_t>(view_index(view))][static_cast<std::size_t>(stage - 1)];
    ad::Var h = x;
    for (const auto& block : d.down) h = block(h);
    ad::Var plane = tile_condition(d.cond, c, cfg.patch_grid(stage));
    h = ad::concat({h, plane}, 1);
    h = ad::leaky_relu(d.mix(h), 0.2);
    return d.score(h);
}

StageImage generate_base(const ReportEmbedding& c, View view, const GeneratorParams& params) {
    ad::Var img = generate_base_var(cond_row(c), view, params);
    std::int64_t s = params.cfg.base_resolution;
    return {clamp_unit(img.value().reshaped(Shape{s, s})), 1, view};
}

StageImage upsample(const StageImage& x) {
    std::int64_t s = x.pixels.shape()[0];
    ad::Var t = ad::constant(x.pixels.reshaped(Shape{1, 1, s, s}));
    return {upsample_var(t).value().reshaped(Shape{2 * s, 2 * s}), x.stage + 1, x.view};
}

StageImage generate_progressive(const StageImage& x_prev, const ReportEmbedding& c, int stage,
                                const GeneratorParams& params) {
    if (x_prev.stage != stage - 1) {
        throw std::invalid_argument("previous image is stage " + std::to_string(x_prev.stage) +
                                    ", expected " + std::to_string(stage - 1));
    }
    std::int64_t s = params.cfg.resolution(stage - 1);
    ad::Var prev = ad::constant(x_prev.pixels.reshaped(Shape{1, 1, s, s}));
    ad::Var img = generate_progressive_var(prev, cond_row(c), x_prev.view, stage, params);
    std::int64_t s2 = params.cfg.resolution(stage);
    return {clamp_unit(img.value().reshaped(Shape{s2, s2})), stage, x_prev.view};
}

Tensor discriminate(const StageImage& x, const ReportEmbedding& c, int stage,
                    const DiscriminatorParams& params) {
    std::int64_t s = params.cfg.resolution(stage);
    if (x.pixels.shape() != Shape{s, s}) {
        throw std::invalid_argument("image resolution does not match stage " + std::to_string(stage));
    }
    ad::Var xv = ad::constant(x.pixels.reshaped(Shape{1, 1, s, s}));
    ad::Var scores = discriminate_var(xv, cond_row(c), x.view, stage, params);
    std::int64_t g = params.cfg.patch_grid(stage);
    return scores.value().reshaped(Shape{g, g});
}

}  // namespace xraygan
