#include "xraygan/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace xraygan::nn {

void ParamList::add(std::string name, const ad::Var& v) {
    for (const auto& [n, _] : items) {
        if (n == name) throw std::logic_error("duplicate parameter name: " + name);
    }
    items.emplace_back(std::move(name), v);
}

std::vector<ad::Var> ParamList::vars() const {
    std::vector<ad::Var> out;
    out.reserve(items.size());
    for (const auto& [_, v] : items) out.push_back(v);
    return out;
}

std::int64_t ParamList::numel() const {
    std::int64_t n = 0;
    for (const auto& [_, v] : items) n += v.value().numel();
    return n;
}

const ad::Var* ParamList::find(const std::string& name) const {
    for (const auto& [n, v] : items) {
        if (n == name) return &v;
    }
    return nullptr;
}

Tensor init_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

Linear::Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias)
    : w(ad::param(init_uniform(Shape{in, out}, in, rng))) {
    if (bias) b = ad::param(Tensor(Shape{out}, 0.0));
}

ad::Var Linear::operator()(const ad::Var& x) const {
    ad::Var y = ad::matmul(x, w);
    if (b.defined()) y = ad::add(y, b);
    return y;
}

void Linear::register_params(ParamList& ps, const std::string& prefix) const {
    ps.add(prefix + ".w", w);
    if (b.defined()) ps.add(prefix + ".b", b);
}

Conv2d::Conv2d(std::int64_t in, std::int64_t out, int k, int stride, int pad, Rng& rng, bool bias)
    : w(ad::param(init_uniform(Shape{out, in, k, k}, in * k * k, rng))), stride(stride), pad(pad) {
    if (bias) b = ad::param(Tensor(Shape{out}, 0.0));
}

ad::Var Conv2d::operator()(const ad::Var& x) const {
    ad::Var y = ad::conv2d(x, w, stride, pad);
    if (b.defined()) {
        y = ad::add(y, ad::reshape(b, Shape{1, b.shape()[0], 1, 1}));
    }
    return y;
}

void Conv2d::register_params(ParamList& ps, const std::string& prefix) const {
    ps.add(prefix + ".w", w);
    if (b.defined()) ps.add(prefix + ".b", b);
}

LstmCell::LstmCell(std::int64_t input, std::int64_t hidden, Rng& rng)
    : wx(ad::param(init_uniform(Shape{input, 4 * hidden}, input, rng))),
      wh(ad::param(init_uniform(Shape{hidden, 4 * hidden}, hidden, rng))),
      b(ad::param(Tensor(Shape{4 * hidden}, 0.0))),
      hidden(hidden) {}

std::pair<ad::Var, ad::Var> LstmCell::operator()(const ad::Var& x, const ad::Var& h,
                                                 const ad::Var& c) const {
    ad::Var pre = ad::add(ad::add(ad::matmul(x, wx), ad::matmul(h, wh)), b);
    ad::Var i = ad::sigmoid(ad::slice(pre, 1, 0 * hidden, hidden));
    ad::Var f = ad::sigmoid(ad::slice(pre, 1, 1 * hidden, hidden));
    ad::Var g = ad::tanh(ad::slice(pre, 1, 2 * hidden, hidden));
    ad::Var o = ad::sigmoid(ad::slice(pre, 1, 3 * hidden, hidden));
    ad::Var c2 = ad::add(ad::mul(f, c), ad::mul(i, g));
    ad::Var h2 = ad::mul(o, ad::tanh(c2));
    return {h2, c2};
}

void LstmCell::register_params(ParamList& ps, const std::string& prefix) const {
    ps.add(prefix + ".wx", wx);
    ps.add(prefix + ".wh", wh);
    ps.add(prefix + ".b", b);
}

ad::Var activate(const ad::Var& x, Act act) {
    switch (act) {
        case Act::relu: return ad::relu(x);
        case Act::leaky_relu02: return ad::leaky_relu(x, 0.2);
    }
    throw std::logic_error("unknown activation");
}

ResBlock::ResBlock(std::int64_t in, std::int64_t out, bool up, int stride, Act act, Rng& rng)
    : up(up), act(act) {
    c1 = Conv2d(in, out, 3, stride, 1, rng);
    c2 = Conv2d(out, out, 3, 1, 1, rng);
    has_skip_conv = (in != out) || (stride != 1);
    if (has_skip_conv) skip = Conv2d(in, out, 1, stride, 0, rng);
}

ad::Var ResBlock::operator()(const ad::Var& x) const {
    ad::Var h = up ? ad::upsample_bilinear2x(x) : x;
    ad::Var y = activate(c1(h), act);
    y = c2(y);
    ad::Var s = has_skip_conv ? skip(h) : h;
    return activate(ad::add(y, s), act);
}

void ResBlock::register_params(ParamList& ps, const std::string& prefix) const {
    c1.register_params(ps, prefix + ".c1");
    c2.register_params(ps, prefix + ".c2");
    if (has_skip_conv) skip.register_params(ps, prefix + ".skip");
}

void Adam::init(const std::vector<ad::Var>& params) {
    state.m.clear();
    state.v.clear();
    state.t = 0;
    for (const auto& p : params) {
        state.m.emplace_back(p.shape(), 0.0);
        state.v.emplace_back(p.shape(), 0.0);
    }
}

void Adam::step(const std::vector<ad::Var>& params, const std::vector<ad::Var>& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw std::logic_error("adam: mismatched parameter/gradient/state counts");
    }
    state.t += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = const_cast<ad::Var&>(params[i]).value_mut();
        const Tensor& g = grads[i].value();
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            p[j] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

ad::Var bce_with_logits(const ad::Var& logits, const ad::Var& targets) {
    ad::Var pos = ad::relu(logits);
    ad::Var lin = ad::mul(logits, targets);
    ad::Var soft = ad::log(ad::add(ad::exp(ad::neg(ad::abs(logits))), 1.0));
    return ad::add(ad::sub(pos, lin), soft);
}

}  // namespace xraygan::nn
