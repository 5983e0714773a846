#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xraygan/autodiff.hpp"
#include "xraygan/rng.hpp"
#include "xraygan/tensor.hpp"

namespace xraygan::nn {

// Named parameters in registration order. The order is the serialization
// contract for checkpoints, so modules must register deterministically.
struct ParamList {
    std::vector<std::pair<std::string, ad::Var>> items;

    void add(std::string name, const ad::Var& v);
    std::vector<ad::Var> vars() const;
    std::int64_t numel() const;
    const ad::Var* find(const std::string& name) const;
};

// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
Tensor init_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

struct Linear {
    ad::Var w;  // [in, out]
    ad::Var b;  // [out], undefined when bias-free
    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, Rng& rng, bool bias = true);
    ad::Var operator()(const ad::Var& x) const;  // [N,in] -> [N,out]
    void register_params(ParamList& ps, const std::string& prefix) const;
};

struct Conv2d {
    ad::Var w;  // [out,in,k,k]
    ad::Var b;  // [out], undefined when bias-free
    int stride = 1;
    int pad = 0;
    Conv2d() = default;
    Conv2d(std::int64_t in, std::int64_t out, int k, int stride, int pad, Rng& rng, bool bias = true);
    ad::Var operator()(const ad::Var& x) const;
    void register_params(ParamList& ps, const std::string& prefix) const;
};

// Single LSTM step. Gate order in the packed weights is i, f, g, o.
struct LstmCell {
    ad::Var wx;  // [input, 4*hidden]
    ad::Var wh;  // [hidden, 4*hidden]
    ad::Var b;   // [4*hidden]
    std::int64_t hidden = 0;
    LstmCell() = default;
    LstmCell(std::int64_t input, std::int64_t hidden, Rng& rng);
    // x: [B,input], h/c: [B,hidden]. Returns {h', c'}.
    std::pair<ad::Var, ad::Var> operator()(const ad::Var& x, const ad::Var& h, const ad::Var& c) const;
    void register_params(ParamList& ps, const std::string& prefix) const;
};

enum class Act { relu, leaky_relu02 };

ad::Var activate(const ad::Var& x, Act act);

// Residual block with optional bilinear x2 upsampling or strided
// downsampling. The skip path gets a 1x1 conv whenever shape changes.
struct ResBlock {
    Conv2d c1, c2, skip;
    bool up = false;
    bool has_skip_conv = false;
    Act act = Act::relu;
    ResBlock() = default;
    ResBlock(std::int64_t in, std::int64_t out, bool up, int stride, Act act, Rng& rng);
    ad::Var operator()(const ad::Var& x) const;
    void register_params(ParamList& ps, const std::string& prefix) const;
};

struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t t = 0;
};

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    AdamState state;

    void init(const std::vector<ad::Var>& params);
    // Applies one update in place; grads align with params.
    void step(const std::vector<ad::Var>& params, const std::vector<ad::Var>& grads);
};

// Numerically safe binary cross-entropy on logits:
// relu(s) - s*y + log(1 + exp(-|s|)).
ad::Var bce_with_logits(const ad::Var& logits, const ad::Var& targets);

}  // namespace xraygan::nn
