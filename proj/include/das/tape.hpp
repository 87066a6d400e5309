#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "das/densemap.hpp"

namespace das {

// Value shape on the tape: an H x W grid with C channels. Plain vectors are
// (1, 1, n) and scalars (1, 1, 1).
struct Shape {
    int h = 1, w = 1, c = 1;
    int size() const { return h * w * c; }
    bool operator==(const Shape&) const = default;
};

class Tape;

// Lightweight handle to a tape node.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode autodiff over an append-only tape. Forward values are
// computed eagerly at node creation; backward() replays the tape in
// reverse. Acyclicity is structural: parents always precede children.
//
// Gradients accumulate across backward() calls until zero_grad(), matching
// the usual autograd contract.
class Tape {
public:
    Tape();

    // --- leaves ---------------------------------------------------------
    Var leaf(Shape s, std::span<const double> values);
    Var leaf(const DenseMap& m);
    Var leaf(double v);
    Var zeros(Shape s);

    // --- elementwise ----------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // b may be scalar (broadcast)
    Var div(Var a, Var b);  // b may be scalar (broadcast)
    Var neg(Var a);
    Var add_const(Var a, double k);
    Var mul_const(Var a, double k);
    Var exp(Var a);
    Var log(Var a);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var abs(Var a);
    Var pow_const(Var a, double p);
    Var clamp_const(Var a, double lo, double hi);

    // --- reductions / vector ops ----------------------------------------
    Var sum(Var a);
    Var mean(Var a);
    Var addn(std::span<const Var> vs);
    Var softmax(Var a);  // over the flattened entries

    // --- indexing -------------------------------------------------------
    // out[i] = a[idx[i]] over flat storage.
    Var gather(Var a, std::span<const int> idx);
    // out has `size` entries, out[idx[i]] = a[i], zeros elsewhere. Indices
    // must be distinct.
    Var scatter(Var a, std::span<const int> idx, int size);
    // Channel vector at integer pixel (x, y), channels [c0, c1).
    Var pixel(Var map, int x, int y, int c0, int c1);

    // --- structured ops --------------------------------------------------
    // y = W x + b with W row-major (out x in), shapes (1,1,out*in), (1,1,out).
    Var linear(Var w, Var b, Var x);
    // 3x3 convolution with zero padding. kernel layout
    // k[((ky*3+kx)*Cin + ci)*Cout + co], bias (1,1,Cout).
    Var conv3x3(Var map, Var kernel, Var bias, int cin, int cout);
    // Bilinear sample of channels [c0, c1) at continuous (x, y) grid coords,
    // border-clamped to [0, W-1] x [0, H-1]. Differentiable w.r.t. the map
    // and the point; the point gradient is zero where the clamp engages.
    // point is a (1,1,2) node holding (x, y).
    Var bilinear(Var map, Var point, int c0, int c1);

    // --- execution --------------------------------------------------------
    // Accumulates d(out)/d(node) into every node's gradient buffer.
    void backward(Var out);
    void zero_grad();

    std::span<const double> val(Var v) const;
    std::span<const double> grad(Var v) const;
    double val1(Var v) const { return val(v)[0]; }
    Shape shape(Var v) const;

    int node_count() const { return int(nodes_.size()); }
    // Drops all nodes but keeps allocated capacity for reuse.
    void clear();

private:
    enum class Op : std::uint8_t {
        Leaf, Add, Sub, Mul, Div, Neg, AddConst, MulConst,
        Exp, Log, Tanh, Sigmoid, Abs, PowConst, ClampConst,
        Sum, Mean, AddN, Softmax, Gather, Scatter,
        Linear, Conv3x3, Bilinear,
    };

    struct Node {
        Shape shape;
        Op op = Op::Leaf;
        int a = -1, b = -1, d = -1;   // parent ids
        int off = 0;                  // offset into val_/grad_/adj_
        double c0 = 0.0, c1 = 0.0;    // per-op constants
        int iaux = -1, naux = 0;      // slice of ints_ (indices, extra parents)
    };

    Var push(Op op, Shape s, int a = -1, int b = -1, int d = -1);
    double* data(int id) { return val_.data() + nodes_[id].off; }
    const double* data(int id) const { return val_.data() + nodes_[id].off; }
    void check_same_tape(Var v) const;
    void check_shape_match(Var a, Var b) const;

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> grad_;
    std::vector<double> adj_;   // scratch adjoints for one backward pass
    std::vector<int> ints_;
};

// Convenience operators; both operands must live on the same tape.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }

}  // namespace das
