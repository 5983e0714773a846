#include "xraygan/vcn.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "xraygan/image.hpp"

namespace xraygan {

void VcnConfig::validate() const {
    if (stage < 1) throw std::invalid_argument("vcn stage must be >= 1");
    if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
        throw std::invalid_argument("vcn resolution must be a power of two >= 8");
    }
    if (width < 1 || embed_dim < 1) throw std::invalid_argument("vcn dims must be >= 1");
}

void VcnParams::register_params(nn::ParamList& ps, const std::string& prefix) const {
    stem.register_params(ps, prefix + ".stem");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].register_params(ps, prefix + ".block" + std::to_string(i));
    }
    head.register_params(ps, prefix + ".head");
    ps.add(prefix + ".comb", comb);
}

VcnParams init_vcn(const VcnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    VcnParams p;
    p.cfg = cfg;
    p.stem = nn::Conv2d(1, cfg.width, 3, 1, 1, rng);
    std::int64_t in = cfg.width;
    for (std::int64_t r = cfg.resolution; r > 4; r /= 2) {
        std::int64_t out = std::min(in * 2, cfg.width * 8);
        p.blocks.emplace_back(in, out, false, 2, nn::Act::relu, rng);
        in = out;
    }
    p.head = nn::Linear(in, cfg.embed_dim, rng);
    p.comb = ad::param(Tensor(Shape{cfg.embed_dim}, 0.0));
    return p;
}

namespace {

void detach_inplace(ad::Var& v) {
    if (v.defined()) v = ad::constant(v.value());
}

void detach_conv(nn::Conv2d& c) {
    detach_inplace(c.w);
    detach_inplace(c.b);
}

}  // namespace

VcnParams freeze(const VcnParams& params) {
    VcnParams p = params;
    detach_conv(p.stem);
    for (auto& b : p.blocks) {
        detach_conv(b.c1);
        detach_conv(b.c2);
        detach_conv(b.skip);
    }
    detach_inplace(p.head.w);
    detach_inplace(p.head.b);
    detach_inplace(p.comb);
    return p;
}

namespace {

void check_resolution(const Shape& s, const VcnParams& params, const char* what) {
    std::int64_t r = params.cfg.resolution;
    if (s.size() == 4) {
        if (s[1] == 1 && s[2] == r && s[3] == r) return;
    } else if (s.size() == 2) {
        if (s[0] == r && s[1] == r) return;
    }
    throw std::invalid_argument(std::string(what) + " does not match the stage resolution " +
                                std::to_string(r) + ": " + shape_str(s));
}

}  // namespace

ad::Var embed_batch_var(const ad::Var& images, const VcnParams& params) {
    check_resolution(images.shape(), params, "embed input");
    ad::Var h = ad::relu(params.stem(images));
    for (const auto& b : params.blocks) h = b(h);
    std::int64_t spatial = h.shape()[2] * h.shape()[3];
    ad::Var pooled = ad::mul(ad::reduce_sum(ad::reduce_sum(h, 3), 2), 1.0 / static_cast<double>(spatial));
    return params.head(pooled);  // [B, embed]
}

ad::Var consistency_score_var(const ad::Var& frontal, const ad::Var& lateral,
                              const VcnParams& params) {
    ad::Var ff = embed_batch_var(frontal, params);
    ad::Var fl = embed_batch_var(lateral, params);
    ad::Var d = ad::abs(ad::sub(ff, fl));  // [B, embed]
    ad::Var logits = ad::matmul(d, ad::reshape(params.comb, Shape{params.cfg.embed_dim, 1}));
    return ad::sigmoid(logits);  // [B, 1]
}

Tensor embed_image(const Tensor& image, const VcnParams& params) {
    check_resolution(image.shape(), params, "embed input");
    std::int64_t r = params.cfg.resolution;
    ad::Var x = ad::constant(image.reshaped(Shape{1, 1, r, r}));
    return embed_batch_var(x, params).value().reshaped(Shape{params.cfg.embed_dim});
}

double consistency_score(const Tensor& frontal, const Tensor& lateral, const VcnParams& params) {
    check_resolution(frontal.shape(), params, "frontal");
    check_resolution(lateral.shape(), params, "lateral");
    std::int64_t r = params.cfg.resolution;
    ad::Var f = ad::constant(frontal.reshaped(Shape{1, 1, r, r}));
    ad::Var l = ad::constant(lateral.reshaped(Shape{1, 1, r, r}));
    return consistency_score_var(f, l, params).value().item();
}

std::vector<PairExample> sample_pairs(const std::vector<StudyRecord>& records,
                                      std::int64_t stage_resolution, int n_neg_per_pos,
                                      std::uint64_t seed) {
    if (records.size() < 2) throw std::invalid_argument("need at least 2 studies to sample pairs");
    std::map<std::string, int> patients;
    for (const auto& r : records) patients.try_emplace(r.patient_id, 0);
    if (patients.size() < 2) {
        throw std::invalid_argument("cannot sample negatives from a single-patient corpus");
    }
    if (n_neg_per_pos < 0) throw std::invalid_argument("negative count must be >= 0");

    auto load = [&](const std::string& path) {
        Tensor t = image_to_tensor(read_png_gray(path));
        Shape flat{t.shape()[1], t.shape()[2]};
        return resize_pow2(t.reshaped(flat), stage_resolution);
    };

    std::vector<Tensor> fronts, lats;
    fronts.reserve(records.size());
    lats.reserve(records.size());
    for (const auto& r : records) {
        fronts.push_back(load(r.frontal_path));
        lats.push_back(load(r.lateral_path));
    }

    Rng rng(seed);
    std::vector<PairExample> out;
    auto n = static_cast<std::uint64_t>(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        out.push_back({fronts[i], lats[i], true});
        for (int k = 0; k < n_neg_per_pos; ++k) {
            std::uint64_t j;
            do {
                j = rng.bounded(n);
            } while (records[j].patient_id == records[i].patient_id);
            out.push_back({fronts[i], lats[j], false});
        }
    }
    return out;
}

VcnTrainResult train_vcn(const std::vector<PairExample>& pairs, const VcnConfig& cfg, int epochs,
                         double lr, std::uint64_t seed) {
    if (pairs.empty()) throw std::invalid_argument("empty pair set");
    bool has_pos = false, has_neg = false;
    for (const auto& p : pairs) {
        (p.consistent ? has_pos : has_neg) = true;
        if (p.frontal.shape() != Shape{cfg.resolution, cfg.resolution} ||
            p.lateral.shape() != Shape{cfg.resolution, cfg.resolution}) {
            throw std::invalid_argument("pair image does not match the configured resolution");
        }
    }
    if (!has_pos || !has_neg) {
        throw std::invalid_argument("degenerate pair set: need both labels");
    }
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");

    Rng rng(seed);
    VcnTrainResult result;
    result.params = init_vcn(cfg, rng.derive("init").next_u64());

    nn::ParamList ps;
    result.params.register_params(ps, "vcn");
    auto vars = ps.vars();
    nn::Adam opt;
    opt.lr = lr;
    opt.init(vars);

    const std::int64_t batch = 8;
    std::int64_t r = cfg.resolution;
    std::vector<std::size_t> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch)) {
            std::size_t bsz = std::min(static_cast<std::size_t>(batch), order.size() - at);
            Tensor fx(Shape{static_cast<std::int64_t>(bsz), 1, r, r});
            Tensor lx(Shape{static_cast<std::int64_t>(bsz), 1, r, r});
            Tensor ty(Shape{static_cast<std::int64_t>(bsz), 1});
            for (std::size_t b = 0; b < bsz; ++b) {
                const PairExample& ex = pairs[order[at + b]];
                std::copy(ex.frontal.vec().begin(), ex.frontal.vec().end(),
                          fx.vec().begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(r * r)));
                std::copy(ex.lateral.vec().begin(), ex.lateral.vec().end(),
                          lx.vec().begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(r * r)));
                ty[static_cast<std::int64_t>(b)] = ex.consistent ? 1.0 : 0.0;
            }
            // Train on logits so the loss stays finite for saturated scores.
            ad::Var ff = embed_batch_var(ad::constant(fx), result.params);
            ad::Var fl = embed_batch_var(ad::constant(lx), result.params);
            ad::Var d = ad::abs(ad::sub(ff, fl));
            ad::Var logits = ad::matmul(d, ad::reshape(result.params.comb, Shape{cfg.embed_dim, 1}));
            ad::Var loss = ad::mean(nn::bce_with_logits(logits, ad::constant(ty)));
            auto grads = ad::grad(loss, vars);
            opt.step(vars, grads);
            loss_sum += loss.value().item() * static_cast<double>(bsz);
        }
        result.epoch_loss.push_back(loss_sum / static_cast<double>(pairs.size()));
    }
    return result;
}

}  // namespace xraygan
