#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "xraygan/tensor.hpp"

namespace xraygan::ad {

class Var;

// Backward closure: maps the output gradient to per-parent gradients.
// Entries of `need` that are false may be skipped (return an empty Var).
// Closures are written in terms of graph ops and recompute whatever they
// need from the parents, so gradients themselves stay differentiable.
using BackwardFn = std::function<std::vector<Var>(const Var& grad, const std::vector<char>& need)>;

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<Var> parents;
    BackwardFn backward;
    const char* op = "";
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node(std::move(n)) {}

    bool defined() const { return node != nullptr; }
    const Tensor& value() const { return node->value; }
    // Leaves only; used by optimizers to step parameters in place.
    Tensor& value_mut();
    const Shape& shape() const { return node->value.shape(); }
    bool requires_grad() const { return node && node->requires_grad; }

    std::shared_ptr<Node> node;
};

Var constant(Tensor v);
Var leaf(Tensor v, bool requires_grad);
inline Var param(Tensor v) { return leaf(std::move(v), true); }

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add(const Var& a, double b);
Var sub(const Var& a, double b);
Var sub(double a, const Var& b);
Var mul(const Var& a, double b);
Var div(const Var& a, double b);
Var div(double a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double b) { return add(a, b); }
inline Var operator+(double a, const Var& b) { return add(b, a); }
inline Var operator-(const Var& a, double b) { return sub(a, b); }
inline Var operator-(double a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double b) { return mul(a, b); }
inline Var operator*(double a, const Var& b) { return mul(b, a); }
inline Var operator/(const Var& a, double b) { return div(a, b); }
inline Var operator/(double a, const Var& b) { return div(a, b); }

Var exp(const Var& x);
Var log(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var abs(const Var& x);
// d/dx sqrt(x) is taken as 0 at x == 0.
Var sqrt(const Var& x);
Var square(const Var& x);

Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);

Var sum(const Var& x);
Var mean(const Var& x);
Var reduce_sum(const Var& x, int axis);
// Sums a tensor down to a broadcast-compatible target shape.
Var sum_to(const Var& x, const Shape& target);
Var broadcast_to(const Var& x, const Shape& target);

Var reshape(const Var& x, Shape s);
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t len);
// Places x into a zero tensor whose `axis` extent is `full`, at offset `start`.
Var embed_slice(const Var& x, int axis, std::int64_t start, std::int64_t full);
Var concat(const std::vector<Var>& xs, int axis);
// Stacks rank-1 tensors of equal length into a matrix.
Var stack_rows(const std::vector<Var>& xs);

Var index_rows(const Var& x, const std::vector<std::int64_t>& idx);
// Accumulates rows of x into a zero [rows, D] tensor at the given indices.
Var scatter_rows(const Var& x, const std::vector<std::int64_t>& idx, std::int64_t rows);

// x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], zero padding.
Var conv2d(const Var& x, const Var& w, int stride, int pad);
// Gradient of conv2d w.r.t. its input; needs the input spatial extent back.
Var conv2d_dx(const Var& g, const Var& w, int stride, int pad, std::int64_t h, std::int64_t w_in);
// Gradient of conv2d w.r.t. its weights.
Var conv2d_dw(const Var& x, const Var& g, int stride, int pad, std::int64_t kh, std::int64_t kw);

Var upsample_bilinear2x(const Var& x);
Var upsample_bilinear2x_adjoint(const Var& x);

Var detach(const Var& x);
Var softmax_lastdim(const Var& x);

struct GradOptions {
    bool create_graph = false;
    const Tensor* grad_output = nullptr;  // defaults to ones
};

// Gradients of `output` w.r.t. each entry of `wrt`. Inputs not connected
// to the output get zeros. With create_graph the results remain
// differentiable; otherwise they are detached constants.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, const GradOptions& opts = {});

}  // namespace xraygan::ad
