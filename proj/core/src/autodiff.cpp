#include "xraygan/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace xraygan::ad {

namespace {

std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
}

[[noreturn]] void fail(const std::string& msg) {
    throw std::invalid_argument("autodiff: " + msg);
}

Var make_node(Tensor value, std::vector<Var> parents, BackwardFn backward, const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->id = next_id();
    n->op = op;
    for (const auto& p : parents) {
        if (p.requires_grad()) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

// Elementwise helpers on equal shapes.
template <typename F>
Tensor map1(const Tensor& x, F f) {
    Tensor out(x.shape());
    const double* a = x.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = f(a[i]);
    return out;
}

template <typename F>
Tensor map2(const Tensor& x, const Tensor& y, F f) {
    Tensor out(x.shape());
    const double* a = x.data();
    const double* b = y.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = f(a[i], b[i]);
    return out;
}

std::pair<Var, Var> broadcast_pair(const Var& a, const Var& b) {
    if (shapes_equal(a.shape(), b.shape())) return {a, b};
    Shape os = broadcast_shapes(a.shape(), b.shape());
    Var aa = shapes_equal(a.shape(), os) ? a : broadcast_to(a, os);
    Var bb = shapes_equal(b.shape(), os) ? b : broadcast_to(b, os);
    return {aa, bb};
}

Shape keepdims_shape(const Shape& s, int axis) {
    Shape k = s;
    k[static_cast<std::size_t>(axis)] = 1;
    return k;
}

int normalize_axis(int axis, int rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) fail("axis out of range");
    return axis;
}

}  // namespace

Tensor& Var::value_mut() {
    if (!node->parents.empty()) throw std::logic_error("value_mut on non-leaf");
    return node->value;
}

Var constant(Tensor v) {
    return make_node(std::move(v), {}, nullptr, "constant");
}

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->id = next_id();
    n->requires_grad = requires_grad;
    n->op = "leaf";
    return Var(std::move(n));
}

Var add(const Var& a0, const Var& b0) {
    auto [a, b] = broadcast_pair(a0, b0);
    Tensor v = map2(a.value(), b.value(), [](double x, double y) { return x + y; });
    return make_node(std::move(v), {a, b},
                     [](const Var& g, const std::vector<char>& need) -> std::vector<Var> {
                         return {need[0] ? g : Var{}, need[1] ? g : Var{}};
                     },
                     "add");
}

Var sub(const Var& a0, const Var& b0) {
    auto [a, b] = broadcast_pair(a0, b0);
    Tensor v = map2(a.value(), b.value(), [](double x, double y) { return x - y; });
    return make_node(std::move(v), {a, b},
                     [](const Var& g, const std::vector<char>& need) -> std::vector<Var> {
                         return {need[0] ? g : Var{}, need[1] ? neg(g) : Var{}};
                     },
                     "sub");
}

Var mul(const Var& a0, const Var& b0) {
    auto [a, b] = broadcast_pair(a0, b0);
    Tensor v = map2(a.value(), b.value(), [](double x, double y) { return x * y; });
    return make_node(std::move(v), {a, b},
                     [a, b](const Var& g, const std::vector<char>& need) -> std::vector<Var> {
                         return {need[0] ? mul(g, b) : Var{}, need[1] ? mul(g, a) : Var{}};
                     },
                     "mul");
}

Var div(const Var& a0, const Var& b0) {
    auto [a, b] = broadcast_pair(a0, b0);
    Tensor v = map2(a.value(), b.value(), [](double x, double y) { return x / y; });
    return make_node(std::move(v), {a, b},
                     [a, b](const Var& g, const std::vector<char>& need) -> std::vector<Var> {
                         return {need[0] ? div(g, b) : Var{},
                                 need[1] ? neg(div(mul(g, a), mul(b, b))) : Var{}};
                     },
                     "div");
}

Var neg(const Var& a) {
    Tensor v = map1(a.value(), [](double x) { return -x; });
    return make_node(std::move(v), {a},
                     [](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {neg(g)};
                     },
                     "neg");
}

Var add(const Var& a, double b) { return add(a, constant(Tensor::scalar(b))); }
Var sub(const Var& a, double b) { return sub(a, constant(Tensor::scalar(b))); }
Var sub(double a, const Var& b) { return sub(constant(Tensor::scalar(a)), b); }
Var mul(const Var& a, double b) { return mul(a, constant(Tensor::scalar(b))); }
Var div(const Var& a, double b) { return div(a, constant(Tensor::scalar(b))); }
Var div(double a, const Var& b) { return div(constant(Tensor::scalar(a)), b); }

Var exp(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return std::exp(a); });
    return make_node(std::move(v), {x},
                     [x](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, exp(x))};
                     },
                     "exp");
}

Var log(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return std::log(a); });
    return make_node(std::move(v), {x},
                     [x](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {div(g, x)};
                     },
                     "log");
}

Var tanh(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return std::tanh(a); });
    return make_node(std::move(v), {x},
                     [x](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, sub(1.0, square(tanh(x))))};
                     },
                     "tanh");
}

Var sigmoid(const Var& x) {
    Tensor v = map1(x.value(), [](double a) {
        return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
    });
    return make_node(std::move(v), {x},
                     [x](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         Var s = sigmoid(x);
                         return {mul(mul(g, s), sub(1.0, s))};
                     },
                     "sigmoid");
}

Var relu(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return a > 0.0 ? a : 0.0; });
    Tensor mask = map1(x.value(), [](double a) { return a > 0.0 ? 1.0 : 0.0; });
    return make_node(std::move(v), {x},
                     [m = std::move(mask)](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, constant(m))};
                     },
                     "relu");
}

Var leaky_relu(const Var& x, double slope) {
    Tensor v = map1(x.value(), [slope](double a) { return a > 0.0 ? a : slope * a; });
    Tensor mask = map1(x.value(), [slope](double a) { return a > 0.0 ? 1.0 : slope; });
    return make_node(std::move(v), {x},
                     [m = std::move(mask)](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, constant(m))};
                     },
                     "leaky_relu");
}

Var abs(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return std::fabs(a); });
    Tensor sign = map1(x.value(), [](double a) { return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0); });
    return make_node(std::move(v), {x},
                     [s = std::move(sign)](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, constant(s))};
                     },
                     "abs");
}

namespace {

// d sqrt / dx with the subgradient at zero pinned to 0. Differentiable one
// level further so a gradient penalty built on a norm can be differentiated
// again for the critic update.
Var sqrt_grad_factor(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return a == 0.0 ? 0.0 : 0.5 / std::sqrt(a); });
    Tensor d2 = map1(x.value(), [](double a) {
        return a == 0.0 ? 0.0 : -0.25 / (a * std::sqrt(a));
    });
    return make_node(std::move(v), {x},
                     [d = std::move(d2)](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, constant(d))};
                     },
                     "sqrt_grad");
}

}  // namespace

Var sqrt(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return std::sqrt(a); });
    return make_node(std::move(v), {x},
                     [x](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(g, sqrt_grad_factor(x))};
                     },
                     "sqrt");
}

Var square(const Var& x) {
    Tensor v = map1(x.value(), [](double a) { return a * a; });
    return make_node(std::move(v), {x},
                     [x](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {mul(mul(g, 2.0), x)};
                     },
                     "square");
}

Var matmul(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2) fail("matmul expects rank-2 inputs");
    std::int64_t m = a.shape()[0], k = a.shape()[1];
    std::int64_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) fail("matmul inner dims " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out(Shape{m, n});
    const double* pa = a.value().data();
    const double* pb = b.value().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            double av = pa[i * k + kk];
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node(std::move(out), {a, b},
                     [a, b](const Var& g, const std::vector<char>& need) -> std::vector<Var> {
                         return {need[0] ? matmul(g, transpose2d(b)) : Var{},
                                 need[1] ? matmul(transpose2d(a), g) : Var{}};
                     },
                     "matmul");
}

Var transpose2d(const Var& a) {
    if (a.shape().size() != 2) fail("transpose2d expects rank-2 input");
    std::int64_t m = a.shape()[0], n = a.shape()[1];
    Tensor out(Shape{n, m});
    const double* pa = a.value().data();
    double* po = out.data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    return make_node(std::move(out), {a},
                     [](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {transpose2d(g)};
                     },
                     "transpose2d");
}

Var sum(const Var& x) {
    double acc = 0.0;
    const double* p = x.value().data();
    for (std::int64_t i = 0; i < x.value().numel(); ++i) acc += p[i];
    Shape xs = x.shape();
    return make_node(Tensor::scalar(acc), {x},
                     [xs](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {broadcast_to(g, xs)};
                     },
                     "sum");
}

Var mean(const Var& x) {
    if (x.value().numel() == 0) fail("mean of empty tensor");
    return mul(sum(x), 1.0 / static_cast<double>(x.value().numel()));
}

Var reduce_sum(const Var& x, int axis) {
    int rank = static_cast<int>(x.shape().size());
    axis = normalize_axis(axis, rank);
    const Shape& xs = x.shape();
    Shape os;
    for (int i = 0; i < rank; ++i)
        if (i != axis) os.push_back(xs[static_cast<std::size_t>(i)]);
    std::int64_t outer = 1, axis_n = xs[static_cast<std::size_t>(axis)], inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xs[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= xs[static_cast<std::size_t>(i)];
    Tensor out(os);
    const double* px = x.value().data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < axis_n; ++a)
            for (std::int64_t i = 0; i < inner; ++i)
                po[o * inner + i] += px[(o * axis_n + a) * inner + i];
    Shape keep = keepdims_shape(xs, axis);
    return make_node(std::move(out), {x},
                     [keep, xs](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {broadcast_to(reshape(g, keep), xs)};
                     },
                     "reduce_sum");
}

Var sum_to(const Var& x, const Shape& target) {
    if (shapes_equal(x.shape(), target)) return x;
    const Shape& xs = x.shape();
    if (target.size() > xs.size()) fail("sum_to target rank exceeds input rank");
    // Right-aligned: each target dim must equal the input dim or be 1.
    std::size_t off = xs.size() - target.size();
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] != xs[off + i] && target[i] != 1) fail("sum_to incompatible shapes");
    }
    Tensor out(target);
    std::int64_t rank = static_cast<std::int64_t>(xs.size());
    std::vector<std::int64_t> ostride(static_cast<std::size_t>(rank), 0);
    std::int64_t s = 1;
    for (std::int64_t i = rank - 1; i >= 0; --i) {
        std::size_t ti = static_cast<std::size_t>(i) >= off ? static_cast<std::size_t>(i) - off : target.size();
        if (ti < target.size() && target[ti] != 1) {
            ostride[static_cast<std::size_t>(i)] = s;
            s *= target[ti];
        }
    }
    const double* px = x.value().data();
    double* po = out.data();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    for (std::int64_t lin = 0; lin < x.value().numel(); ++lin) {
        std::int64_t oi = 0;
        for (std::int64_t d = 0; d < rank; ++d) oi += idx[static_cast<std::size_t>(d)] * ostride[static_cast<std::size_t>(d)];
        po[oi] += px[lin];
        for (std::int64_t d = rank - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            if (++idx[du] < xs[du]) break;
            idx[du] = 0;
        }
    }
    Shape xshape = xs;
    return make_node(std::move(out), {x},
                     [xshape](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {broadcast_to(g, xshape)};
                     },
                     "sum_to");
}

Var broadcast_to(const Var& x, const Shape& target) {
    if (shapes_equal(x.shape(), target)) return x;
    const Shape& xs = x.shape();
    if (xs.size() > target.size()) fail("broadcast_to rank shrink");
    std::size_t off = target.size() - xs.size();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] != target[off + i] && xs[i] != 1) {
            fail("broadcast_to incompatible: " + shape_str(xs) + " -> " + shape_str(target));
        }
    }
    Tensor out(target);
    std::int64_t rank = static_cast<std::int64_t>(target.size());
    std::vector<std::int64_t> xstride(static_cast<std::size_t>(rank), 0);
    std::int64_t s = 1;
    for (std::int64_t i = rank - 1; i >= 0; --i) {
        std::size_t xi = static_cast<std::size_t>(i) >= off ? static_cast<std::size_t>(i) - off : xs.size();
        if (xi < xs.size()) {
            if (xs[xi] != 1) xstride[static_cast<std::size_t>(i)] = s;
            s *= xs[xi];
        }
    }
    const double* px = x.value().data();
    double* po = out.data();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    for (std::int64_t lin = 0; lin < out.numel(); ++lin) {
        std::int64_t xi = 0;
        for (std::int64_t d = 0; d < rank; ++d) xi += idx[static_cast<std::size_t>(d)] * xstride[static_cast<std::size_t>(d)];
        po[lin] = px[xi];
        for (std::int64_t d = rank - 1; d >= 0; --d) {
            auto du = static_cast<std::size_t>(d);
            if (++idx[du] < target[du]) break;
            idx[du] = 0;
        }
    }
    Shape xshape = xs;
    return make_node(std::move(out), {x},
                     [xshape](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {sum_to(g, xshape)};
                     },
                     "broadcast_to");
}

Var reshape(const Var& x, Shape s) {
    Tensor v = x.value().reshaped(s);
    Shape orig = x.shape();
    return make_node(std::move(v), {x},
                     [orig](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {reshape(g, orig)};
                     },
                     "reshape");
}

Var slice(const Var& x, int axis, std::int64_t start, std::int64_t len) {
    int rank = static_cast<int>(x.shape().size());
    axis = normalize_axis(axis, rank);
    const Shape& xs = x.shape();
    std::int64_t full = xs[static_cast<std::size_t>(axis)];
    if (start < 0 || len < 0 || start + len > full) fail("slice out of range");
    Shape os = xs;
    os[static_cast<std::size_t>(axis)] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xs[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= xs[static_cast<std::size_t>(i)];
    Tensor out(os);
    const double* px = x.value().data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = px + (o * full + start) * inner;
        double* dst = po + o * len * inner;
        std::memcpy(dst, src, static_cast<std::size_t>(len * inner) * sizeof(double));
    }
    return make_node(std::move(out), {x},
                     [axis, start, full](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {embed_slice(g, axis, start, full)};
                     },
                     "slice");
}

Var embed_slice(const Var& x, int axis, std::int64_t start, std::int64_t full) {
    int rank = static_cast<int>(x.shape().size());
    axis = normalize_axis(axis, rank);
    const Shape& xs = x.shape();
    std::int64_t len = xs[static_cast<std::size_t>(axis)];
    if (start < 0 || start + len > full) fail("embed_slice out of range");
    Shape os = xs;
    os[static_cast<std::size_t>(axis)] = full;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xs[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= xs[static_cast<std::size_t>(i)];
    Tensor out(os);
    const double* px = x.value().data();
    double* po = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = px + o * len * inner;
        double* dst = po + (o * full + start) * inner;
        std::memcpy(dst, src, static_cast<std::size_t>(len * inner) * sizeof(double));
    }
    return make_node(std::move(out), {x},
                     [axis, start, len](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {slice(g, axis, start, len)};
                     },
                     "embed_slice");
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) fail("concat of nothing");
    int rank = static_cast<int>(xs[0].shape().size());
    axis = normalize_axis(axis, rank);
    Shape os = xs[0].shape();
    std::int64_t total = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (static_cast<int>(s.size()) != rank) fail("concat rank mismatch");
        for (int i = 0; i < rank; ++i) {
            if (i != axis && s[static_cast<std::size_t>(i)] != os[static_cast<std::size_t>(i)])
                fail("concat shape mismatch");
        }
        total += s[static_cast<std::size_t>(axis)];
    }
    os[static_cast<std::size_t>(axis)] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < rank; ++i) inner *= os[static_cast<std::size_t>(i)];
    Tensor out(os);
    double* po = out.data();
    std::int64_t off = 0;
    for (const auto& x : xs) {
        std::int64_t len = x.shape()[static_cast<std::size_t>(axis)];
        const double* px = x.value().data();
        for (std::int64_t o = 0; o < outer; ++o) {
            std::memcpy(po + (o * total + off) * inner, px + o * len * inner,
                        static_cast<std::size_t>(len * inner) * sizeof(double));
        }
        off += len;
    }
    std::vector<std::int64_t> lens;
    for (const auto& x : xs) lens.push_back(x.shape()[static_cast<std::size_t>(axis)]);
    return make_node(std::move(out), xs,
                     [axis, lens](const Var& g, const std::vector<char>& need) -> std::vector<Var> {
                         std::vector<Var> out_g(lens.size());
                         std::int64_t pos = 0;
                         for (std::size_t i = 0; i < lens.size(); ++i) {
                             if (need[i]) out_g[i] = slice(g, axis, pos, lens[i]);
                             pos += lens[i];
                         }
                         return out_g;
                     },
                     "concat");
}

Var stack_rows(const std::vector<Var>& xs) {
    if (xs.empty()) fail("stack_rows of nothing");
    std::vector<Var> rows;
    rows.reserve(xs.size());
    for (const auto& x : xs) {
        if (x.shape().size() != 1) fail("stack_rows expects rank-1 inputs");
        rows.push_back(reshape(x, Shape{1, x.shape()[0]}));
    }
    return concat(rows, 0);
}

Var index_rows(const Var& x, const std::vector<std::int64_t>& idx) {
    if (x.shape().size() != 2) fail("index_rows expects rank-2 input");
    std::int64_t v = x.shape()[0], d = x.shape()[1];
    Tensor out(Shape{static_cast<std::int64_t>(idx.size()), d});
    const double* px = x.value().data();
    double* po = out.data();
    for (std::size_t n = 0; n < idx.size(); ++n) {
        std::int64_t r = idx[n];
        if (r < 0 || r >= v) fail("index_rows row out of range");
        std::memcpy(po + static_cast<std::int64_t>(n) * d, px + r * d,
                    static_cast<std::size_t>(d) * sizeof(double));
    }
    return make_node(std::move(out), {x},
                     [idx, v](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {scatter_rows(g, idx, v)};
                     },
                     "index_rows");
}

Var scatter_rows(const Var& x, const std::vector<std::int64_t>& idx, std::int64_t rows) {
    if (x.shape().size() != 2) fail("scatter_rows expects rank-2 input");
    if (x.shape()[0] != static_cast<std::int64_t>(idx.size())) fail("scatter_rows index count mismatch");
    std::int64_t d = x.shape()[1];
    Tensor out(Shape{rows, d});
    const double* px = x.value().data();
    double* po = out.data();
    for (std::size_t n = 0; n < idx.size(); ++n) {
        std::int64_t r = idx[n];
        if (r < 0 || r >= rows) fail("scatter_rows row out of range");
        const double* src = px + static_cast<std::int64_t>(n) * d;
        double* dst = po + r * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    return make_node(std::move(out), {x},
                     [idx](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {index_rows(g, idx)};
                     },
                     "scatter_rows");
}

namespace {

struct ConvDims {
    std::int64_t n, ci, h, w, co, kh, kw, oh, ow;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int stride, int pad) {
    if (xs.size() != 4 || ws.size() != 4) fail("conv2d expects rank-4 input and weights");
    if (xs[1] != ws[1]) fail("conv2d channel mismatch");
    if (stride < 1) fail("conv2d stride must be positive");
    ConvDims d;
    d.n = xs[0];
    d.ci = xs[1];
    d.h = xs[2];
    d.w = xs[3];
    d.co = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
    d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw) fail("conv2d kernel larger than padded input");
    return d;
}

}  // namespace

Var conv2d(const Var& x, const Var& w, int stride, int pad) {
    ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
    Tensor out(Shape{d.n, d.co, d.oh, d.ow});
    const double* px = x.value().data();
    const double* pw = w.value().data();
    double* po = out.data();
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t co = 0; co < d.co; ++co) {
            for (std::int64_t oh = 0; oh < d.oh; ++oh) {
                for (std::int64_t ow = 0; ow < d.ow; ++ow) {
                    double acc = 0.0;
                    for (std::int64_t ci = 0; ci < d.ci; ++ci) {
                        const double* xi = px + ((n * d.ci + ci) * d.h) * d.w;
                        const double* wi = pw + ((co * d.ci + ci) * d.kh) * d.kw;
                        for (std::int64_t ki = 0; ki < d.kh; ++ki) {
                            std::int64_t ih = oh * stride - pad + ki;
                            if (ih < 0 || ih >= d.h) continue;
                            for (std::int64_t kj = 0; kj < d.kw; ++kj) {
                                std::int64_t iw = ow * stride - pad + kj;
                                if (iw < 0 || iw >= d.w) continue;
                                acc += xi[ih * d.w + iw] * wi[ki * d.kw + kj];
                            }
                        }
                    }
                    po[((n * d.co + co) * d.oh + oh) * d.ow + ow] = acc;
                }
            }
        }
    }
    std::int64_t h = d.h, w_in = d.w, kh = d.kh, kw = d.kw;
    return make_node(std::move(out), {x, w},
                     [x, w, stride, pad, h, w_in, kh, kw](const Var& g, const std::vector<char>& need)
                         -> std::vector<Var> {
                         return {need[0] ? conv2d_dx(g, w, stride, pad, h, w_in) : Var{},
                                 need[1] ? conv2d_dw(x, g, stride, pad, kh, kw) : Var{}};
                     },
                     "conv2d");
}

Var conv2d_dx(const Var& g, const Var& w, int stride, int pad, std::int64_t h, std::int64_t w_in) {
    const Shape& gs = g.shape();
    const Shape& ws = w.shape();
    if (gs.size() != 4 || ws.size() != 4) fail("conv2d_dx expects rank-4 inputs");
    if (gs[1] != ws[0]) fail("conv2d_dx channel mismatch");
    std::int64_t n = gs[0], co = gs[1], oh = gs[2], ow = gs[3];
    std::int64_t ci = ws[1], kh = ws[2], kw = ws[3];
    Tensor out(Shape{n, ci, h, w_in});
    const double* pg = g.value().data();
    const double* pw = w.value().data();
    double* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t c = 0; c < co; ++c) {
            const double* grow = pg + ((in * co + c) * oh) * ow;
            for (std::int64_t io = 0; io < oh; ++io) {
                for (std::int64_t jo = 0; jo < ow; ++jo) {
                    double gv = grow[io * ow + jo];
                    if (gv == 0.0) continue;
                    for (std::int64_t ic = 0; ic < ci; ++ic) {
                        double* xrow = po + ((in * ci + ic) * h) * w_in;
                        const double* wrow = pw + ((c * ci + ic) * kh) * kw;
                        for (std::int64_t ki = 0; ki < kh; ++ki) {
                            std::int64_t ih = io * stride - pad + ki;
                            if (ih < 0 || ih >= h) continue;
                            for (std::int64_t kj = 0; kj < kw; ++kj) {
                                std::int64_t iw = jo * stride - pad + kj;
                                if (iw < 0 || iw >= w_in) continue;
                                xrow[ih * w_in + iw] += gv * wrow[ki * kw + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    return make_node(std::move(out), {g, w},
                     [g, w, stride, pad, kh, kw](const Var& hgrad, const std::vector<char>& need)
                         -> std::vector<Var> {
                         return {need[0] ? conv2d(hgrad, w, stride, pad) : Var{},
                                 need[1] ? conv2d_dw(hgrad, g, stride, pad, kh, kw) : Var{}};
                     },
                     "conv2d_dx");
}

Var conv2d_dw(const Var& x, const Var& g, int stride, int pad, std::int64_t kh, std::int64_t kw) {
    const Shape& xs = x.shape();
    const Shape& gs = g.shape();
    if (xs.size() != 4 || gs.size() != 4) fail("conv2d_dw expects rank-4 inputs");
    if (xs[0] != gs[0]) fail("conv2d_dw batch mismatch");
    std::int64_t n = xs[0], ci = xs[1], h = xs[2], w_in = xs[3];
    std::int64_t co = gs[1], oh = gs[2], ow = gs[3];
    Tensor out(Shape{co, ci, kh, kw});
    const double* px = x.value().data();
    const double* pg = g.value().data();
    double* po = out.data();
    for (std::int64_t in = 0; in < n; ++in) {
        for (std::int64_t c = 0; c < co; ++c) {
            const double* grow = pg + ((in * co + c) * oh) * ow;
            for (std::int64_t io = 0; io < oh; ++io) {
                for (std::int64_t jo = 0; jo < ow; ++jo) {
                    double gv = grow[io * ow + jo];
                    if (gv == 0.0) continue;
                    for (std::int64_t ic = 0; ic < ci; ++ic) {
                        const double* xrow = px + ((in * ci + ic) * h) * w_in;
                        double* wrow = po + ((c * ci + ic) * kh) * kw;
                        for (std::int64_t ki = 0; ki < kh; ++ki) {
                            std::int64_t ih = io * stride - pad + ki;
                            if (ih < 0 || ih >= h) continue;
                            for (std::int64_t kj = 0; kj < kw; ++kj) {
                                std::int64_t iw = jo * stride - pad + kj;
                                if (iw < 0 || iw >= w_in) continue;
                                wrow[ki * kw + kj] += gv * xrow[ih * w_in + iw];
                            }
                        }
                    }
                }
            }
        }
    }
    std::int64_t hh = h, ww = w_in;
    return make_node(std::move(out), {x, g},
                     [x, g, stride, pad, hh, ww](const Var& hgrad, const std::vector<char>& need)
                         -> std::vector<Var> {
                         return {need[0] ? conv2d_dx(g, hgrad, stride, pad, hh, ww) : Var{},
                                 need[1] ? conv2d(x, hgrad, stride, pad) : Var{}};
                     },
                     "conv2d_dw");
}

namespace {

// Source taps for doubling one axis with half-pixel-centered bilinear
// interpolation. out[i] = w0*in[i0] + w1*in[i1].
struct Tap {
    std::int64_t i0, i1;
    double w0, w1;
};

std::vector<Tap> up2_taps(std::int64_t n) {
    std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
    for (std::int64_t i = 0; i < 2 * n; ++i) {
        double src = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
        std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
        double frac = src - static_cast<double>(lo);
        std::int64_t i0 = std::clamp<std::int64_t>(lo, 0, n - 1);
        std::int64_t i1 = std::clamp<std::int64_t>(lo + 1, 0, n - 1);
        taps[static_cast<std::size_t>(i)] = {i0, i1, 1.0 - frac, frac};
    }
    return taps;
}

}  // namespace

Var upsample_bilinear2x(const Var& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) fail("upsample_bilinear2x expects rank-4 input");
    std::int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    Tensor out(Shape{n, c, 2 * h, 2 * w});
    auto rt = up2_taps(h);
    auto ct = up2_taps(w);
    const double* px = x.value().data();
    double* po = out.data();
    for (std::int64_t img = 0; img < n * c; ++img) {
        const double* src = px + img * h * w;
        double* dst = po + img * 4 * h * w;
        for (std::int64_t i = 0; i < 2 * h; ++i) {
            const Tap& r = rt[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < 2 * w; ++j) {
                const Tap& cc = ct[static_cast<std::size_t>(j)];
                double v = r.w0 * (cc.w0 * src[r.i0 * w + cc.i0] + cc.w1 * src[r.i0 * w + cc.i1]) +
                           r.w1 * (cc.w0 * src[r.i1 * w + cc.i0] + cc.w1 * src[r.i1 * w + cc.i1]);
                dst[i * 2 * w + j] = v;
            }
        }
    }
    return make_node(std::move(out), {x},
                     [](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {upsample_bilinear2x_adjoint(g)};
                     },
                     "upsample_bilinear2x");
}

Var upsample_bilinear2x_adjoint(const Var& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) fail("upsample_bilinear2x_adjoint expects rank-4 input");
    if (xs[2] % 2 != 0 || xs[3] % 2 != 0) fail("upsample_bilinear2x_adjoint expects even spatial dims");
    std::int64_t n = xs[0], c = xs[1], h = xs[2] / 2, w = xs[3] / 2;
    Tensor out(Shape{n, c, h, w});
    auto rt = up2_taps(h);
    auto ct = up2_taps(w);
    const double* px = x.value().data();
    double* po = out.data();
    for (std::int64_t img = 0; img < n * c; ++img) {
        const double* src = px + img * 4 * h * w;
        double* dst = po + img * h * w;
        for (std::int64_t i = 0; i < 2 * h; ++i) {
            const Tap& r = rt[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < 2 * w; ++j) {
                const Tap& cc = ct[static_cast<std::size_t>(j)];
                double v = src[i * 2 * w + j];
                dst[r.i0 * w + cc.i0] += r.w0 * cc.w0 * v;
                dst[r.i0 * w + cc.i1] += r.w0 * cc.w1 * v;
                dst[r.i1 * w + cc.i0] += r.w1 * cc.w0 * v;
                dst[r.i1 * w + cc.i1] += r.w1 * cc.w1 * v;
            }
        }
    }
    return make_node(std::move(out), {x},
                     [](const Var& g, const std::vector<char>&) -> std::vector<Var> {
                         return {upsample_bilinear2x(g)};
                     },
                     "upsample_bilinear2x_adjoint");
}

Var detach(const Var& x) {
    return constant(x.value());
}

Var softmax_lastdim(const Var& x) {
    const Shape& xs = x.shape();
    if (xs.empty()) fail("softmax_lastdim needs rank >= 1");
    std::int64_t d = xs.back();
    std::int64_t rows = x.value().numel() / d;
    Shape mshape = xs;
    mshape.back() = 1;
    Tensor m(mshape);
    const double* px = x.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        double mx = px[r * d];
        for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, px[r * d + j]);
        m.data()[r] = mx;
    }
    Var e = exp(sub(x, constant(std::move(m))));
    Var s = reduce_sum(e, static_cast<int>(xs.size()) - 1);
    return div(e, reshape(s, mshape));
}

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, const GradOptions& opts) {
    if (!output.defined()) fail("grad of undefined output");
    Tensor seed = opts.grad_output ? *opts.grad_output : Tensor(output.shape(), 1.0);
    if (!shapes_equal(seed.shape(), output.shape())) fail("grad_output shape mismatch");

    // Reachable closure from the output, via parents.
    std::vector<Node*> order;
    {
        std::set<Node*> seen;
        std::vector<Node*> stack{output.node.get()};
        while (!stack.empty()) {
            Node* n = stack.back();
            stack.pop_back();
            if (!seen.insert(n).second) continue;
            order.push_back(n);
            for (const auto& p : n->parents) stack.push_back(p.node.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id < b->id; });

    // A node needs a gradient if it is requested or feeds one that is.
    std::set<Node*> wrt_set;
    for (const auto& v : wrt) {
        if (v.defined()) wrt_set.insert(v.node.get());
    }
    std::map<Node*, char> need;
    for (Node* n : order) {
        char nd = wrt_set.count(n) ? 1 : 0;
        if (!nd) {
            for (const auto& p : n->parents) {
                if (need[p.node.get()]) {
                    nd = 1;
                    break;
                }
            }
        }
        need[n] = nd;
    }

    std::map<Node*, Var> acc;
    acc[output.node.get()] = constant(std::move(seed));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        auto git = acc.find(n);
        if (git == acc.end()) continue;
        if (!n->backward || n->parents.empty() || !need[n]) continue;
        std::vector<char> mask(n->parents.size(), 0);
        bool any = false;
        for (std::size_t i = 0; i < n->parents.size(); ++i) {
            Node* p = n->parents[i].node.get();
            if (p->requires_grad && need[p]) {
                mask[i] = 1;
                any = true;
            }
        }
        if (!any) continue;
        std::vector<Var> gs = n->backward(git->second, mask);
        if (gs.size() != n->parents.size()) throw std::logic_error("backward arity mismatch");
        for (std::size_t i = 0; i < gs.size(); ++i) {
            if (!mask[i] || !gs[i].defined()) continue;
            if (!shapes_equal(gs[i].shape(), n->parents[i].shape())) {
                throw std::logic_error(std::string("backward shape mismatch in op ") + n->op);
            }
            Node* p = n->parents[i].node.get();
            auto ait = acc.find(p);
            if (ait == acc.end()) {
                acc.emplace(p, gs[i]);
            } else {
                ait->second = add(ait->second, gs[i]);
            }
        }
    }

    std::vector<Var> results;
    results.reserve(wrt.size());
    for (const auto& v : wrt) {
        if (!v.defined()) fail("grad wrt undefined input");
        auto it2 = acc.find(v.node.get());
        Var r = it2 != acc.end() ? it2->second : constant(Tensor(v.shape(), 0.0));
        results.push_back(opts.create_graph ? r : detach(r));
    }
    return results;
}

}  // namespace xraygan::ad
