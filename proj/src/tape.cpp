#include "das/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "das/errors.hpp"

namespace das {

Tape::Tape() {
    nodes_.reserve(1 << 12);
    val_.reserve(1 << 16);
    ints_.reserve(1 << 10);
}

void Tape::check_same_tape(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= int(nodes_.size()))
        throw std::invalid_argument("tape: var does not belong to this tape");
}

void Tape::check_shape_match(Var a, Var b) const {
    if (!(nodes_[a.id].shape == nodes_[b.id].shape))
        throw std::invalid_argument("tape: shape mismatch");
}

Var Tape::push(Op op, Shape s, int a, int b, int d) {
    Node n;
    n.shape = s;
    n.op = op;
    n.a = a;
    n.b = b;
    n.d = d;
    n.off = int(val_.size());
    val_.resize(val_.size() + std::size_t(s.size()), 0.0);
    nodes_.push_back(n);
    return Var{this, int(nodes_.size()) - 1};
}

Var Tape::leaf(Shape s, std::span<const double> values) {
    if (int(values.size()) != s.size())
        throw std::invalid_argument("tape: leaf value count does not match shape");
    Var v = push(Op::Leaf, s);
    std::copy(values.begin(), values.end(), data(v.id));
    return v;
}

Var Tape::leaf(const DenseMap& m) {
    return leaf(Shape{m.height, m.width, m.channels}, m.values);
}

Var Tape::leaf(double v) {
    double buf[1] = {v};
    return leaf(Shape{1, 1, 1}, buf);
}

Var Tape::zeros(Shape s) { return push(Op::Leaf, s); }

Var Tape::add(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    check_shape_match(a, b);
    Var o = push(Op::Add, nodes_[a.id].shape, a.id, b.id);
    const double* pa = data(a.id);
    const double* pb = data(b.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return o;
}

Var Tape::sub(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    check_shape_match(a, b);
    Var o = push(Op::Sub, nodes_[a.id].shape, a.id, b.id);
    const double* pa = data(a.id);
    const double* pb = data(b.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
    return o;
}

Var Tape::mul(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    bool bcast = nodes_[b.id].shape.size() == 1;
    if (!bcast) check_shape_match(a, b);
    Var o = push(Op::Mul, nodes_[a.id].shape, a.id, b.id);
    const double* pa = data(a.id);
    const double* pb = data(b.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = pa[i] * pb[bcast ? 0 : i];
    return o;
}

Var Tape::div(Var a, Var b) {
    check_same_tape(a);
    check_same_tape(b);
    bool bcast = nodes_[b.id].shape.size() == 1;
    if (!bcast) check_shape_match(a, b);
    Var o = push(Op::Div, nodes_[a.id].shape, a.id, b.id);
    const double* pa = data(a.id);
    const double* pb = data(b.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = pa[i] / pb[bcast ? 0 : i];
    return o;
}

Var Tape::neg(Var a) {
    check_same_tape(a);
    Var o = push(Op::Neg, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = -pa[i];
    return o;
}

Var Tape::add_const(Var a, double k) {
    check_same_tape(a);
    Var o = push(Op::AddConst, nodes_[a.id].shape, a.id);
    nodes_[o.id].c0 = k;
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = pa[i] + k;
    return o;
}

Var Tape::mul_const(Var a, double k) {
    check_same_tape(a);
    Var o = push(Op::MulConst, nodes_[a.id].shape, a.id);
    nodes_[o.id].c0 = k;
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = pa[i] * k;
    return o;
}

Var Tape::exp(Var a) {
    check_same_tape(a);
    Var o = push(Op::Exp, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = std::exp(pa[i]);
    return o;
}

Var Tape::log(Var a) {
    check_same_tape(a);
    Var o = push(Op::Log, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = std::log(pa[i]);
    return o;
}

Var Tape::tanh(Var a) {
    check_same_tape(a);
    Var o = push(Op::Tanh, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
    return o;
}

Var Tape::sigmoid(Var a) {
    check_same_tape(a);
    Var o = push(Op::Sigmoid, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-pa[i]));
    return o;
}

Var Tape::abs(Var a) {
    check_same_tape(a);
    Var o = push(Op::Abs, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
    return o;
}

Var Tape::pow_const(Var a, double p) {
    check_same_tape(a);
    Var o = push(Op::PowConst, nodes_[a.id].shape, a.id);
    nodes_[o.id].c0 = p;
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = std::pow(pa[i], p);
    return o;
}

Var Tape::clamp_const(Var a, double lo, double hi) {
    check_same_tape(a);
    Var o = push(Op::ClampConst, nodes_[a.id].shape, a.id);
    nodes_[o.id].c0 = lo;
    nodes_[o.id].c1 = hi;
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    for (int i = 0; i < n; ++i) po[i] = std::min(hi, std::max(lo, pa[i]));
    return o;
}

Var Tape::sum(Var a) {
    check_same_tape(a);
    Var o = push(Op::Sum, Shape{1, 1, 1}, a.id);
    const double* pa = data(a.id);
    double s = 0.0;
    int n = nodes_[a.id].shape.size();
    for (int i = 0; i < n; ++i) s += pa[i];
    *data(o.id) = s;
    return o;
}

Var Tape::mean(Var a) {
    check_same_tape(a);
    Var o = push(Op::Mean, Shape{1, 1, 1}, a.id);
    const double* pa = data(a.id);
    double s = 0.0;
    int n = nodes_[a.id].shape.size();
    for (int i = 0; i < n; ++i) s += pa[i];
    *data(o.id) = s / n;
    return o;
}

Var Tape::addn(std::span<const Var> vs) {
    if (vs.empty()) throw std::invalid_argument("tape: addn over empty list");
    for (Var v : vs) {
        check_same_tape(v);
        check_shape_match(vs[0], v);
    }
    Var o = push(Op::AddN, nodes_[vs[0].id].shape);
    Node& n = nodes_[o.id];
    n.iaux = int(ints_.size());
    n.naux = int(vs.size());
    for (Var v : vs) ints_.push_back(v.id);
    double* po = data(o.id);
    int cnt = n.shape.size();
    for (Var v : vs) {
        const double* pv = data(v.id);
        for (int i = 0; i < cnt; ++i) po[i] += pv[i];
    }
    return o;
}

Var Tape::softmax(Var a) {
    check_same_tape(a);
    Var o = push(Op::Softmax, nodes_[a.id].shape, a.id);
    const double* pa = data(a.id);
    double* po = data(o.id);
    int n = nodes_[o.id].shape.size();
    double mx = pa[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, pa[i]);
    double den = 0.0;
    for (int i = 0; i < n; ++i) {
        po[i] = std::exp(pa[i] - mx);
        den += po[i];
    }
    for (int i = 0; i < n; ++i) po[i] /= den;
    return o;
}

Var Tape::gather(Var a, std::span<const int> idx) {
    check_same_tape(a);
    int an = nodes_[a.id].shape.size();
    for (int i : idx)
        if (i < 0 || i >= an) throw std::invalid_argument("tape: gather index out of range");
    Var o = push(Op::Gather, Shape{1, 1, int(idx.size())}, a.id);
    Node& n = nodes_[o.id];
    n.iaux = int(ints_.size());
    n.naux = int(idx.size());
    ints_.insert(ints_.end(), idx.begin(), idx.end());
    const double* pa = data(a.id);
    double* po = data(o.id);
    for (std::size_t i = 0; i < idx.size(); ++i) po[i] = pa[idx[i]];
    return o;
}

Var Tape::scatter(Var a, std::span<const int> idx, int size) {
    check_same_tape(a);
    if (int(idx.size()) != nodes_[a.id].shape.size())
        throw std::invalid_argument("tape: scatter index count mismatch");
    for (int i : idx)
        if (i < 0 || i >= size) throw std::invalid_argument("tape: scatter index out of range");
    Var o = push(Op::Scatter, Shape{1, 1, size}, a.id);
    Node& n = nodes_[o.id];
    n.iaux = int(ints_.size());
    n.naux = int(idx.size());
    ints_.insert(ints_.end(), idx.begin(), idx.end());
    const double* pa = data(a.id);
    double* po = data(o.id);
    for (std::size_t i = 0; i < idx.size(); ++i) po[idx[i]] = pa[i];
    return o;
}

Var Tape::pixel(Var map, int x, int y, int c0, int c1) {
    check_same_tape(map);
    const Shape& s = nodes_[map.id].shape;
    if (x < 0 || x >= s.w || y < 0 || y >= s.h || c0 < 0 || c1 > s.c || c0 >= c1)
        throw std::invalid_argument("tape: pixel access out of range");
    std::vector<int> idx(c1 - c0);
    int base = (y * s.w + x) * s.c;
    for (int c = c0; c < c1; ++c) idx[c - c0] = base + c;
    return gather(map, idx);
}

Var Tape::linear(Var w, Var b, Var x) {
    check_same_tape(w);
    check_same_tape(b);
    check_same_tape(x);
    int out = nodes_[b.id].shape.size();
    int in = nodes_[x.id].shape.size();
    if (nodes_[w.id].shape.size() != out * in)
        throw std::invalid_argument("tape: linear weight shape mismatch");
    Var o = push(Op::Linear, Shape{1, 1, out}, w.id, b.id, x.id);
    const double* pw = data(w.id);
    const double* pb = data(b.id);
    const double* px = data(x.id);
    double* po = data(o.id);
    for (int r = 0; r < out; ++r) {
        double s = pb[r];
        const double* row = pw + std::size_t(r) * in;
        for (int i = 0; i < in; ++i) s += row[i] * px[i];
        po[r] = s;
    }
    return o;
}

Var Tape::conv3x3(Var map, Var kernel, Var bias, int cin, int cout) {
    check_same_tape(map);
    check_same_tape(kernel);
    check_same_tape(bias);
    const Shape& s = nodes_[map.id].shape;
    if (s.c != cin) throw std::invalid_argument("tape: conv3x3 input channel mismatch");
    if (nodes_[kernel.id].shape.size() != 9 * cin * cout)
        throw std::invalid_argument("tape: conv3x3 kernel shape mismatch");
    if (nodes_[bias.id].shape.size() != cout)
        throw std::invalid_argument("tape: conv3x3 bias shape mismatch");
    Var o = push(Op::Conv3x3, Shape{s.h, s.w, cout}, map.id, kernel.id, bias.id);
    nodes_[o.id].c0 = cin;
    const double* pm = data(map.id);
    const double* pk = data(kernel.id);
    const double* pb = data(bias.id);
    double* po = data(o.id);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            double* oc = po + (std::size_t(y) * s.w + x) * cout;
            for (int co = 0; co < cout; ++co) oc[co] = pb[co];
            for (int ky = 0; ky < 3; ++ky) {
                int sy = y + ky - 1;
                if (sy < 0 || sy >= s.h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    int sx = x + kx - 1;
                    if (sx < 0 || sx >= s.w) continue;
                    const double* ic = pm + (std::size_t(sy) * s.w + sx) * cin;
                    const double* kc = pk + std::size_t((ky * 3 + kx) * cin) * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        double v = ic[ci];
                        const double* kr = kc + std::size_t(ci) * cout;
                        for (int co = 0; co < cout; ++co) oc[co] += v * kr[co];
                    }
                }
            }
        }
    }
    return o;
}

Var Tape::bilinear(Var map, Var point, int c0, int c1) {
    check_same_tape(map);
    check_same_tape(point);
    const Shape& s = nodes_[map.id].shape;
    if (nodes_[point.id].shape.size() != 2)
        throw std::invalid_argument("tape: bilinear point must have 2 entries");
    if (c0 < 0 || c1 > s.c || c0 >= c1)
        throw std::invalid_argument("tape: bilinear channel range out of bounds");
    const double* pp = data(point.id);
    if (!std::isfinite(pp[0]) || !std::isfinite(pp[1]))
        throw NumericalError("bilinear: non-finite sample point (" + std::to_string(pp[0]) +
                             ", " + std::to_string(pp[1]) + "), corrupted upstream offset");
    Var o = push(Op::Bilinear, Shape{1, 1, c1 - c0}, map.id, point.id);
    nodes_[o.id].c0 = c0;
    nodes_[o.id].c1 = c1;
    bilinear_sample(data(map.id), s.h, s.w, s.c, pp[0], pp[1], c0, c1, data(o.id));
    return o;
}

void Tape::zero_grad() {
    grad_.assign(val_.size(), 0.0);
}

std::span<const double> Tape::val(Var v) const {
    check_same_tape(v);
    const Node& n = nodes_[v.id];
    return {val_.data() + n.off, std::size_t(n.shape.size())};
}

std::span<const double> Tape::grad(Var v) const {
    check_same_tape(v);
    if (grad_.size() != val_.size())
        throw std::logic_error("tape: grad read before backward");
    const Node& n = nodes_[v.id];
    return {grad_.data() + n.off, std::size_t(n.shape.size())};
}

Shape Tape::shape(Var v) const {
    check_same_tape(v);
    return nodes_[v.id].shape;
}

void Tape::clear() {
    nodes_.clear();
    val_.clear();
    grad_.clear();
    adj_.clear();
    ints_.clear();
}

void Tape::backward(Var out) {
    check_same_tape(out);
    if (nodes_[out.id].shape.size() != 1)
        throw std::invalid_argument("tape: backward requires a scalar output");
    if (grad_.size() != val_.size()) grad_.resize(val_.size(), 0.0);
    adj_.assign(val_.size(), 0.0);
    adj_[nodes_[out.id].off] = 1.0;

    for (int id = out.id; id >= 0; --id) {
        const Node& n = nodes_[id];
        const double* g = adj_.data() + n.off;
        int cnt = n.shape.size();
        bool any = false;
        for (int i = 0; i < cnt; ++i)
            if (g[i] != 0.0) { any = true; break; }
        if (!any) continue;

        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                double* ga = adj_.data() + nodes_[n.a].off;
                double* gb = adj_.data() + nodes_[n.b].off;
                for (int i = 0; i < cnt; ++i) { ga[i] += g[i]; gb[i] += g[i]; }
                break;
            }
            case Op::Sub: {
                double* ga = adj_.data() + nodes_[n.a].off;
                double* gb = adj_.data() + nodes_[n.b].off;
                for (int i = 0; i < cnt; ++i) { ga[i] += g[i]; gb[i] -= g[i]; }
                break;
            }
            case Op::Mul: {
                double* ga = adj_.data() + nodes_[n.a].off;
                double* gb = adj_.data() + nodes_[n.b].off;
                const double* va = data(n.a);
                const double* vb = data(n.b);
                bool bcast = nodes_[n.b].shape.size() == 1;
                for (int i = 0; i < cnt; ++i) {
                    ga[i] += g[i] * vb[bcast ? 0 : i];
                    gb[bcast ? 0 : i] += g[i] * va[i];
                }
                break;
            }
            case Op::Div: {
                double* ga = adj_.data() + nodes_[n.a].off;
                double* gb = adj_.data() + nodes_[n.b].off;
                const double* vb = data(n.b);
                const double* vo = data(id);
                bool bcast = nodes_[n.b].shape.size() == 1;
                for (int i = 0; i < cnt; ++i) {
                    double bi = vb[bcast ? 0 : i];
                    ga[i] += g[i] / bi;
                    gb[bcast ? 0 : i] -= g[i] * vo[i] / bi;
                }
                break;
            }
            case Op::Neg: {
                double* ga = adj_.data() + nodes_[n.a].off;
                for (int i = 0; i < cnt; ++i) ga[i] -= g[i];
                break;
            }
            case Op::AddConst: {
                double* ga = adj_.data() + nodes_[n.a].off;
                for (int i = 0; i < cnt; ++i) ga[i] += g[i];
                break;
            }
            case Op::MulConst: {
                double* ga = adj_.data() + nodes_[n.a].off;
                for (int i = 0; i < cnt; ++i) ga[i] += g[i] * n.c0;
                break;
            }
            case Op::Exp: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* vo = data(id);
                for (int i = 0; i < cnt; ++i) ga[i] += g[i] * vo[i];
                break;
            }
            case Op::Log: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* va = data(n.a);
                for (int i = 0; i < cnt; ++i) ga[i] += g[i] / va[i];
                break;
            }
            case Op::Tanh: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* vo = data(id);
                for (int i = 0; i < cnt; ++i) ga[i] += g[i] * (1.0 - vo[i] * vo[i]);
                break;
            }
            case Op::Sigmoid: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* vo = data(id);
                for (int i = 0; i < cnt; ++i) ga[i] += g[i] * vo[i] * (1.0 - vo[i]);
                break;
            }
            case Op::Abs: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* va = data(n.a);
                for (int i = 0; i < cnt; ++i)
                    ga[i] += g[i] * (va[i] > 0 ? 1.0 : va[i] < 0 ? -1.0 : 0.0);
                break;
            }
            case Op::PowConst: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* va = data(n.a);
                for (int i = 0; i < cnt; ++i)
                    ga[i] += g[i] * n.c0 * std::pow(va[i], n.c0 - 1.0);
                break;
            }
            case Op::ClampConst: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* va = data(n.a);
                for (int i = 0; i < cnt; ++i)
                    if (va[i] >= n.c0 && va[i] <= n.c1) ga[i] += g[i];
                break;
            }
            case Op::Sum: {
                double* ga = adj_.data() + nodes_[n.a].off;
                int an = nodes_[n.a].shape.size();
                for (int i = 0; i < an; ++i) ga[i] += g[0];
                break;
            }
            case Op::Mean: {
                double* ga = adj_.data() + nodes_[n.a].off;
                int an = nodes_[n.a].shape.size();
                double gi = g[0] / an;
                for (int i = 0; i < an; ++i) ga[i] += gi;
                break;
            }
            case Op::AddN: {
                for (int k = 0; k < n.naux; ++k) {
                    double* gp = adj_.data() + nodes_[ints_[n.iaux + k]].off;
                    for (int i = 0; i < cnt; ++i) gp[i] += g[i];
                }
                break;
            }
            case Op::Softmax: {
                double* ga = adj_.data() + nodes_[n.a].off;
                const double* vo = data(id);
                double dot = 0.0;
                for (int i = 0; i < cnt; ++i) dot += g[i] * vo[i];
                for (int i = 0; i < cnt; ++i) ga[i] += vo[i] * (g[i] - dot);
                break;
            }
            case Op::Gather: {
                double* ga = adj_.data() + nodes_[n.a].off;
                for (int i = 0; i < n.naux; ++i) ga[ints_[n.iaux + i]] += g[i];
                break;
            }
            case Op::Scatter: {
                double* ga = adj_.data() + nodes_[n.a].off;
                for (int i = 0; i < n.naux; ++i) ga[i] += g[ints_[n.iaux + i]];
                break;
            }
            case Op::Linear: {
                double* gw = adj_.data() + nodes_[n.a].off;
                double* gb = adj_.data() + nodes_[n.b].off;
                double* gx = adj_.data() + nodes_[n.d].off;
                const double* vw = data(n.a);
                const double* vx = data(n.d);
                int out = nodes_[n.b].shape.size();
                int in = nodes_[n.d].shape.size();
                for (int r = 0; r < out; ++r) {
                    double gr = g[r];
                    gb[r] += gr;
                    const double* row = vw + std::size_t(r) * in;
                    double* grow = gw + std::size_t(r) * in;
                    for (int i = 0; i < in; ++i) {
                        grow[i] += gr * vx[i];
                        gx[i] += gr * row[i];
                    }
                }
                break;
            }
            case Op::Conv3x3: {
                double* gm = adj_.data() + nodes_[n.a].off;
                double* gk = adj_.data() + nodes_[n.b].off;
                double* gb = adj_.data() + nodes_[n.d].off;
                const double* vm = data(n.a);
                const double* vk = data(n.b);
                const Shape& ms = nodes_[n.a].shape;
                int cin = ms.c;
                int cout = n.shape.c;
                for (int y = 0; y < ms.h; ++y) {
                    for (int x = 0; x < ms.w; ++x) {
                        const double* go = g + (std::size_t(y) * ms.w + x) * cout;
                        for (int co = 0; co < cout; ++co) gb[co] += go[co];
                        for (int ky = 0; ky < 3; ++ky) {
                            int sy = y + ky - 1;
                            if (sy < 0 || sy >= ms.h) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                int sx = x + kx - 1;
                                if (sx < 0 || sx >= ms.w) continue;
                                const double* ic = vm + (std::size_t(sy) * ms.w + sx) * cin;
                                double* gic = gm + (std::size_t(sy) * ms.w + sx) * cin;
                                std::size_t kbase = std::size_t((ky * 3 + kx) * cin) * cout;
                                for (int ci = 0; ci < cin; ++ci) {
                                    const double* kr = vk + kbase + std::size_t(ci) * cout;
                                    double* gkr = gk + kbase + std::size_t(ci) * cout;
                                    double acc = 0.0;
                                    for (int co = 0; co < cout; ++co) {
                                        acc += go[co] * kr[co];
                                        gkr[co] += go[co] * ic[ci];
                                    }
                                    gic[ci] += acc;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case Op::Bilinear: {
                double* gm = adj_.data() + nodes_[n.a].off;
                double* gp = adj_.data() + nodes_[n.b].off;
                const double* vm = data(n.a);
                const double* pp = data(n.b);
                const Shape& ms = nodes_[n.a].shape;
                int c0 = int(n.c0);
                BilinearGeom gg = bilinear_geom(pp[0], pp[1], ms.w, ms.h);
                double w00 = (1 - gg.fx) * (1 - gg.fy), w10 = gg.fx * (1 - gg.fy);
                double w01 = (1 - gg.fx) * gg.fy, w11 = gg.fx * gg.fy;
                double gx = 0.0, gy = 0.0;
                for (int i = 0; i < cnt; ++i) {
                    int c = c0 + i;
                    std::size_t i00 = (std::size_t(gg.y0) * ms.w + gg.x0) * ms.c + c;
                    std::size_t i10 = (std::size_t(gg.y0) * ms.w + gg.x1) * ms.c + c;
                    std::size_t i01 = (std::size_t(gg.y1) * ms.w + gg.x0) * ms.c + c;
                    std::size_t i11 = (std::size_t(gg.y1) * ms.w + gg.x1) * ms.c + c;
                    gm[i00] += g[i] * w00;
                    gm[i10] += g[i] * w10;
                    gm[i01] += g[i] * w01;
                    gm[i11] += g[i] * w11;
                    double v00 = vm[i00], v10 = vm[i10], v01 = vm[i01], v11 = vm[i11];
                    gx += g[i] * ((v10 - v00) * (1 - gg.fy) + (v11 - v01) * gg.fy);
                    gy += g[i] * ((v01 - v00) * (1 - gg.fx) + (v11 - v10) * gg.fx);
                }
                if (!gg.clamped_x) gp[0] += gx;
                if (!gg.clamped_y) gp[1] += gy;
                break;
            }
        }
    }

    for (std::size_t i = 0; i < grad_.size(); ++i) grad_[i] += adj_[i];
}

}  // namespace das
