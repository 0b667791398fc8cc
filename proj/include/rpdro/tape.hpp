#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rpdro/tensor.hpp"

namespace rpdro {

using NodeId = std::size_t;

enum class Op {
    Leaf,
    MatMul,
    Add,         // same shape, [n,d]+[d] row bias, or x+scalar
    Sub,         // same shape or x-scalar
    Mul,         // same shape or x*scalar-tensor
    ScalarMul,   // x * constant
    Relu,
    Tanh,
    Exp,
    Log,
    Clamp,
    Square,
    Sum,         // full reduction to scalar
    Mean,        // full reduction to scalar
    LogSumExp,   // reduce one axis: [n] -> scalar, [n,c] axis 1 -> [n]
    Softmax,     // shape-preserving along one axis
    SelectColumns,  // [n,c] + per-row column index -> [n]
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::ScalarMul: return "scalar-mul";
        case Op::Relu: return "relu";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Clamp: return "clamp";
        case Op::Square: return "square";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::LogSumExp: return "logsumexp";
        case Op::Softmax: return "softmax";
        case Op::SelectColumns: return "select-columns";
    }
    return "?";
}

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite value detected in a forward value or a gradient.
struct NumericsError : std::runtime_error {
    NodeId node;
    NumericsError(NodeId id, const std::string& what) : std::runtime_error(what), node(id) {}
};

struct TapeNode {
    Op op = Op::Leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    double scalar = 0.0;              // ScalarMul constant
    double lo = 0.0, hi = 0.0;        // Clamp bounds
    int axis = 0;                     // LogSumExp / Softmax
    std::vector<int> columns;         // SelectColumns per-row indices
};

namespace detail {

inline void require(bool ok, Op op, const std::string& msg) {
    if (!ok) throw ShapeError(std::string(op_name(op)) + ": " + msg);
}

inline void require_same_shape(Op op, const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), op,
            "shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) out.at(i, j) += av * b.at(p, j);
        }
    }
    return out;
}

// a^T * b for gradients: a is [n,k], b is [n,m], result [k,m]
inline Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out({k, m});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) out.at(p, j) += av * b.at(i, j);
        }
    }
    return out;
}

// a * b^T: a is [n,m], b is [k,m], result [n,k]
inline Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
    Tensor out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += a.at(i, j) * b.at(p, j);
            out.at(i, p) = acc;
        }
    }
    return out;
}

// Softmax along `axis` with max subtraction; sums along the axis are
// renormalized by the (Kahan-summed) total so they stay within ~1e-15 of 1.
inline Tensor softmax_values(const Tensor& x, int axis) {
    Tensor out(x.shape);
    auto one_slice = [&](std::size_t offset, std::size_t count, std::size_t stride) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, x.values[offset + i * stride]);
        double sum = 0.0, c = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            double e = std::exp(x.values[offset + i * stride] - mx);
            out.values[offset + i * stride] = e;
            double y = e - c;
            double t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        for (std::size_t i = 0; i < count; ++i) out.values[offset + i * stride] /= sum;
    };
    if (x.rank() == 1) {
        one_slice(0, x.shape[0], 1);
    } else {  // rank 2
        if (axis == 1) {
            for (std::size_t r = 0; r < x.rows(); ++r) one_slice(r * x.cols(), x.cols(), 1);
        } else {
            for (std::size_t col = 0; col < x.cols(); ++col) one_slice(col, x.rows(), x.cols());
        }
    }
    return out;
}

inline Tensor logsumexp_values(const Tensor& x, int axis) {
    auto lse_slice = [&](std::size_t offset, std::size_t count, std::size_t stride) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, x.values[offset + i * stride]);
        double sum = 0.0;
        for (std::size_t i = 0; i < count; ++i) sum += std::exp(x.values[offset + i * stride] - mx);
        return mx + std::log(sum);
    };
    if (x.rank() == 1) {
        (void)axis;
        return Tensor::scalar(lse_slice(0, x.shape[0], 1));
    }
    if (axis == 1) {
        Tensor out({x.rows()});
        for (std::size_t r = 0; r < x.rows(); ++r) out.values[r] = lse_slice(r * x.cols(), x.cols(), 1);
        return out;
    }
    Tensor out({x.cols()});
    for (std::size_t col = 0; col < x.cols(); ++col) out.values[col] = lse_slice(col, x.rows(), x.cols());
    return out;
}

}  // namespace detail

// Eagerly evaluated computation record. Node inputs always reference earlier
// nodes; every recorded value is checked finite at record time.
class Tape {
  public:
    NodeId leaf(Tensor t) {
        TapeNode n;
        n.op = Op::Leaf;
        n.value = std::move(t);
        return push(std::move(n));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        detail::require(ta.rank() == 2 && tb.rank() == 2, Op::MatMul,
                        "needs rank-2 inputs, got " + shape_str(ta.shape) + " and " + shape_str(tb.shape));
        detail::require(ta.cols() == tb.rows(), Op::MatMul,
                        "shape mismatch " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
        return record(Op::MatMul, {a, b}, detail::matmul_values(ta, tb));
    }

    NodeId add(NodeId a, NodeId b) { return add_sub(Op::Add, a, b); }
    NodeId sub(NodeId a, NodeId b) { return add_sub(Op::Sub, a, b); }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        if (tb.is_scalar() && !ta.is_scalar()) {
            Tensor out(ta.shape);
            for (std::size_t i = 0; i < ta.numel(); ++i) out.values[i] = ta.values[i] * tb.item();
            return record(Op::Mul, {a, b}, std::move(out));
        }
        detail::require_same_shape(Op::Mul, ta, tb);
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < ta.numel(); ++i) out.values[i] = ta.values[i] * tb.values[i];
        return record(Op::Mul, {a, b}, std::move(out));
    }

    NodeId scalar_mul(NodeId a, double c) {
        const Tensor& ta = value(a);
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < ta.numel(); ++i) out.values[i] = ta.values[i] * c;
        TapeNode n;
        n.op = Op::ScalarMul;
        n.inputs = {a};
        n.value = std::move(out);
        n.scalar = c;
        return push(std::move(n));
    }

    NodeId relu(NodeId a) {
        return unary(Op::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; });
    }
    NodeId tanh(NodeId a) {
        return unary(Op::Tanh, a, [](double x) { return std::tanh(x); });
    }
    NodeId exp(NodeId a) {
        return unary(Op::Exp, a, [](double x) { return std::exp(x); });
    }
    NodeId log(NodeId a) {
        return unary(Op::Log, a, [](double x) { return std::log(x); });
    }
    NodeId square(NodeId a) {
        return unary(Op::Square, a, [](double x) { return x * x; });
    }

    NodeId clamp(NodeId a, double lo, double hi) {
        const Tensor& ta = value(a);
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < ta.numel(); ++i) out.values[i] = std::clamp(ta.values[i], lo, hi);
        TapeNode n;
        n.op = Op::Clamp;
        n.inputs = {a};
        n.value = std::move(out);
        n.lo = lo;
        n.hi = hi;
        return push(std::move(n));
    }

    NodeId sum(NodeId a) {
        const Tensor& ta = value(a);
        double acc = 0.0;
        for (double v : ta.values) acc += v;
        return record(Op::Sum, {a}, Tensor::scalar(acc));
    }

    NodeId mean(NodeId a) {
        const Tensor& ta = value(a);
        double acc = 0.0;
        for (double v : ta.values) acc += v;
        return record(Op::Mean, {a}, Tensor::scalar(acc / static_cast<double>(ta.numel())));
    }

    NodeId logsumexp(NodeId a, int axis) {
        check_axis(Op::LogSumExp, a, axis);
        TapeNode n;
        n.op = Op::LogSumExp;
        n.inputs = {a};
        n.axis = axis;
        n.value = detail::logsumexp_values(value(a), axis);
        return push(std::move(n));
    }

    NodeId softmax(NodeId a, int axis) {
        check_axis(Op::Softmax, a, axis);
        TapeNode n;
        n.op = Op::Softmax;
        n.inputs = {a};
        n.axis = axis;
        n.value = detail::softmax_values(value(a), axis);
        return push(std::move(n));
    }

    NodeId select_columns(NodeId a, const std::vector<int>& columns) {
        const Tensor& ta = value(a);
        detail::require(ta.rank() == 2, Op::SelectColumns,
                        "needs a rank-2 input, got " + shape_str(ta.shape));
        detail::require(columns.size() == ta.rows(), Op::SelectColumns,
                        "needs one index per row: " + std::to_string(columns.size()) +
                            " indices for " + shape_str(ta.shape));
        Tensor out({ta.rows()});
        for (std::size_t i = 0; i < ta.rows(); ++i) {
            const int c = columns[i];
            detail::require(c >= 0 && static_cast<std::size_t>(c) < ta.cols(), Op::SelectColumns,
                            "index " + std::to_string(c) + " out of range for " + shape_str(ta.shape));
            out.values[i] = ta.at(i, static_cast<std::size_t>(c));
        }
        TapeNode n;
        n.op = Op::SelectColumns;
        n.inputs = {a};
        n.value = std::move(out);
        n.columns = columns;
        return push(std::move(n));
    }

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
    const TapeNode& node(NodeId id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    // d(output)/d(node) for every node; unused nodes keep zero gradients.
    std::vector<Tensor> backward(NodeId output) const {
        const Tensor& out = value(output);
        if (!out.is_scalar()) {
            throw std::invalid_argument("backward: output must be scalar, got shape " +
                                        shape_str(out.shape));
        }
        std::vector<Tensor> grads;
        grads.reserve(nodes_.size());
        for (const TapeNode& n : nodes_) grads.emplace_back(n.value.shape);
        std::vector<char> live(nodes_.size(), 0);
        grads[output] = Tensor::scalar(1.0);
        live[output] = 1;

        for (std::size_t idx = output + 1; idx-- > 0;) {
            if (!live[idx]) continue;
            const TapeNode& n = nodes_[idx];
            const Tensor& g = grads[idx];
            if (!g.all_finite()) {
                throw NumericsError(idx, "backward: non-finite gradient at node " +
                                             std::to_string(idx) + " (" + op_name(n.op) + ")");
            }
            accumulate_inputs(n, g, grads, live);
        }
        return grads;
    }

    // Recompute every non-leaf value from its inputs; forward evaluation is
    // deterministic so this must reproduce recorded values bit-exactly.
    std::vector<Tensor> replay() const {
        std::vector<Tensor> vals;
        vals.reserve(nodes_.size());
        for (const TapeNode& n : nodes_) {
            if (n.op == Op::Leaf) {
                vals.push_back(n.value);
                continue;
            }
            vals.push_back(recompute(n, vals));
        }
        return vals;
    }

  private:
    std::vector<TapeNode> nodes_;

    NodeId record(Op op, std::vector<NodeId> inputs, Tensor out) {
        TapeNode n;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(out);
        return push(std::move(n));
    }

    NodeId push(TapeNode n) {
        if (!n.value.all_finite()) {
            throw NumericsError(nodes_.size(),
                                std::string("non-finite value produced by ") + op_name(n.op) +
                                    " at node " + std::to_string(nodes_.size()));
        }
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    template <typename F>
    NodeId unary(Op op, NodeId a, F f) {
        const Tensor& ta = value(a);
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < ta.numel(); ++i) out.values[i] = f(ta.values[i]);
        return record(op, {a}, std::move(out));
    }

    NodeId add_sub(Op op, NodeId a, NodeId b) {
        const Tensor& ta = value(a);
        const Tensor& tb = value(b);
        const double sign = (op == Op::Add) ? 1.0 : -1.0;
        if (tb.is_scalar() && !ta.is_scalar()) {
            Tensor out(ta.shape);
            for (std::size_t i = 0; i < ta.numel(); ++i)
                out.values[i] = ta.values[i] + sign * tb.item();
            return record(op, {a, b}, std::move(out));
        }
        if (op == Op::Add && ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.shape[0]) {
            // row-wise bias broadcast
            Tensor out(ta.shape);
            for (std::size_t i = 0; i < ta.rows(); ++i)
                for (std::size_t j = 0; j < ta.cols(); ++j)
                    out.at(i, j) = ta.at(i, j) + tb.values[j];
            return record(op, {a, b}, std::move(out));
        }
        detail::require_same_shape(op, ta, tb);
        Tensor out(ta.shape);
        for (std::size_t i = 0; i < ta.numel(); ++i)
            out.values[i] = ta.values[i] + sign * tb.values[i];
        return record(op, {a, b}, std::move(out));
    }

    void check_axis(Op op, NodeId a, int axis) const {
        const Tensor& ta = value(a);
        detail::require(ta.rank() == 1 || ta.rank() == 2, op,
                        "needs rank 1 or 2 input, got " + shape_str(ta.shape));
        detail::require(axis >= 0 && static_cast<std::size_t>(axis) < ta.rank(), op,
                        "axis " + std::to_string(axis) + " invalid for " + shape_str(ta.shape));
    }

    void accumulate_inputs(const TapeNode& n, const Tensor& g, std::vector<Tensor>& grads,
                           std::vector<char>& live) const {
        switch (n.op) {
            case Op::Leaf:
                return;
            case Op::MatMul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                Tensor ga = detail::matmul_a_bt(g, b);   // g * b^T
                Tensor gb = detail::matmul_at_b(a, g);   // a^T * g
                axpy(grads[n.inputs[0]], ga);
                axpy(grads[n.inputs[1]], gb);
                live[n.inputs[0]] = 1;
                live[n.inputs[1]] = 1;
                return;
            }
            case Op::Add:
            case Op::Sub: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                const double sign = (n.op == Op::Add) ? 1.0 : -1.0;
                axpy(grads[n.inputs[0]], g);
                live[n.inputs[0]] = 1;
                Tensor& gb = grads[n.inputs[1]];
                if (b.is_scalar() && !a.is_scalar()) {
                    double acc = 0.0;
                    for (double v : g.values) acc += v;
                    gb.values[0] += sign * acc;
                } else if (n.op == Op::Add && a.rank() == 2 && b.rank() == 1) {
                    for (std::size_t i = 0; i < a.rows(); ++i)
                        for (std::size_t j = 0; j < a.cols(); ++j) gb.values[j] += g.at(i, j);
                } else {
                    for (std::size_t i = 0; i < g.numel(); ++i) gb.values[i] += sign * g.values[i];
                }
                live[n.inputs[1]] = 1;
                return;
            }
            case Op::Mul: {
                const Tensor& a = nodes_[n.inputs[0]].value;
                const Tensor& b = nodes_[n.inputs[1]].value;
                Tensor& ga = grads[n.inputs[0]];
                Tensor& gb = grads[n.inputs[1]];
                if (b.is_scalar() && !a.is_scalar()) {
                    for (std::size_t i = 0; i < g.numel(); ++i) ga.values[i] += g.values[i] * b.item();
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.numel(); ++i) acc += g.values[i] * a.values[i];
                    gb.values[0] += acc;
                } else {
                    for (std::size_t i = 0; i < g.numel(); ++i) {
                        ga.values[i] += g.values[i] * b.values[i];
                        gb.values[i] += g.values[i] * a.values[i];
                    }
                }
                live[n.inputs[0]] = 1;
                live[n.inputs[1]] = 1;
                return;
            }
            case Op::ScalarMul: {
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.numel(); ++i) ga.values[i] += g.values[i] * n.scalar;
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Relu: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& ga = grads[n.inputs[0]];
                // subgradient at 0 is 0
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (x.values[i] > 0.0) ga.values[i] += g.values[i];
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Tanh: {
                const Tensor& y = n.value;
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.numel(); ++i)
                    ga.values[i] += g.values[i] * (1.0 - y.values[i] * y.values[i]);
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Exp: {
                const Tensor& y = n.value;
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.numel(); ++i) ga.values[i] += g.values[i] * y.values[i];
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Log: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.numel(); ++i) ga.values[i] += g.values[i] / x.values[i];
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Clamp: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (x.values[i] > n.lo && x.values[i] < n.hi) ga.values[i] += g.values[i];
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Square: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < g.numel(); ++i)
                    ga.values[i] += g.values[i] * 2.0 * x.values[i];
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Sum: {
                Tensor& ga = grads[n.inputs[0]];
                const double gv = g.item();
                for (double& v : ga.values) v += gv;
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Mean: {
                Tensor& ga = grads[n.inputs[0]];
                const double gv = g.item() / static_cast<double>(ga.numel());
                for (double& v : ga.values) v += gv;
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::LogSumExp: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor sm = detail::softmax_values(x, n.axis);
                Tensor& ga = grads[n.inputs[0]];
                if (x.rank() == 1) {
                    const double gv = g.item();
                    for (std::size_t i = 0; i < x.numel(); ++i) ga.values[i] += gv * sm.values[i];
                } else if (n.axis == 1) {
                    for (std::size_t r = 0; r < x.rows(); ++r)
                        for (std::size_t c = 0; c < x.cols(); ++c)
                            ga.at(r, c) += g.values[r] * sm.at(r, c);
                } else {
                    for (std::size_t r = 0; r < x.rows(); ++r)
                        for (std::size_t c = 0; c < x.cols(); ++c)
                            ga.at(r, c) += g.values[c] * sm.at(r, c);
                }
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::Softmax: {
                const Tensor& y = n.value;
                Tensor& ga = grads[n.inputs[0]];
                auto slice = [&](std::size_t offset, std::size_t count, std::size_t stride) {
                    double dot = 0.0;
                    for (std::size_t i = 0; i < count; ++i)
                        dot += g.values[offset + i * stride] * y.values[offset + i * stride];
                    for (std::size_t i = 0; i < count; ++i) {
                        const std::size_t k = offset + i * stride;
                        ga.values[k] += y.values[k] * (g.values[k] - dot);
                    }
                };
                if (y.rank() == 1) {
                    slice(0, y.shape[0], 1);
                } else if (n.axis == 1) {
                    for (std::size_t r = 0; r < y.rows(); ++r) slice(r * y.cols(), y.cols(), 1);
                } else {
                    for (std::size_t c = 0; c < y.cols(); ++c) slice(c, y.rows(), y.cols());
                }
                live[n.inputs[0]] = 1;
                return;
            }
            case Op::SelectColumns: {
                const Tensor& x = nodes_[n.inputs[0]].value;
                Tensor& ga = grads[n.inputs[0]];
                for (std::size_t i = 0; i < x.rows(); ++i)
                    ga.at(i, static_cast<std::size_t>(n.columns[i])) += g.values[i];
                live[n.inputs[0]] = 1;
                return;
            }
        }
    }

    Tensor recompute(const TapeNode& n, const std::vector<Tensor>& vals) const {
        auto in = [&](std::size_t k) -> const Tensor& { return vals[n.inputs[k]]; };
        switch (n.op) {
            case Op::Leaf: return n.value;
            case Op::MatMul: return detail::matmul_values(in(0), in(1));
            case Op::Add:
            case Op::Sub: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                const double sign = (n.op == Op::Add) ? 1.0 : -1.0;
                Tensor out(a.shape);
                if (b.is_scalar() && !a.is_scalar()) {
                    for (std::size_t i = 0; i < a.numel(); ++i)
                        out.values[i] = a.values[i] + sign * b.item();
                } else if (n.op == Op::Add && a.rank() == 2 && b.rank() == 1) {
                    for (std::size_t i = 0; i < a.rows(); ++i)
                        for (std::size_t j = 0; j < a.cols(); ++j)
                            out.at(i, j) = a.at(i, j) + b.values[j];
                } else {
                    for (std::size_t i = 0; i < a.numel(); ++i)
                        out.values[i] = a.values[i] + sign * b.values[i];
                }
                return out;
            }
            case Op::Mul: {
                const Tensor& a = in(0);
                const Tensor& b = in(1);
                Tensor out(a.shape);
                if (b.is_scalar() && !a.is_scalar()) {
                    for (std::size_t i = 0; i < a.numel(); ++i) out.values[i] = a.values[i] * b.item();
                } else {
                    for (std::size_t i = 0; i < a.numel(); ++i)
                        out.values[i] = a.values[i] * b.values[i];
                }
                return out;
            }
            case Op::ScalarMul: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = in(0).values[i] * n.scalar;
                return out;
            }
            case Op::Relu: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i)
                    out.values[i] = in(0).values[i] > 0.0 ? in(0).values[i] : 0.0;
                return out;
            }
            case Op::Tanh: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = std::tanh(in(0).values[i]);
                return out;
            }
            case Op::Exp: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = std::exp(in(0).values[i]);
                return out;
            }
            case Op::Log: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] = std::log(in(0).values[i]);
                return out;
            }
            case Op::Clamp: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i)
                    out.values[i] = std::clamp(in(0).values[i], n.lo, n.hi);
                return out;
            }
            case Op::Square: {
                Tensor out(in(0).shape);
                for (std::size_t i = 0; i < out.numel(); ++i)
                    out.values[i] = in(0).values[i] * in(0).values[i];
                return out;
            }
            case Op::Sum: {
                double acc = 0.0;
                for (double v : in(0).values) acc += v;
                return Tensor::scalar(acc);
            }
            case Op::Mean: {
                double acc = 0.0;
                for (double v : in(0).values) acc += v;
                return Tensor::scalar(acc / static_cast<double>(in(0).numel()));
            }
            case Op::LogSumExp: return detail::logsumexp_values(in(0), n.axis);
            case Op::Softmax: return detail::softmax_values(in(0), n.axis);
            case Op::SelectColumns: {
                const Tensor& x = in(0);
                Tensor out({x.rows()});
                for (std::size_t i = 0; i < x.rows(); ++i)
                    out.values[i] = x.at(i, static_cast<std::size_t>(n.columns[i]));
                return out;
            }
        }
        throw std::logic_error("recompute: unknown op");
    }

    static void axpy(Tensor& dst, const Tensor& src) {
        for (std::size_t i = 0; i < dst.numel(); ++i) dst.values[i] += src.values[i];
    }
};

}  // namespace rpdro
