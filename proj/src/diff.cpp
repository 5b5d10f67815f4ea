// SPDX-License-Identifier: Apache-2.0

#include "neusg/diff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace neusg::diff {

Tensor::Tensor(int r, int c, double fill)
    : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {
    if (r < 0 || c < 0) throw ContractViolation("Tensor: negative extent");
}

Tensor::Tensor(int r, int c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != static_cast<std::size_t>(r) * static_cast<std::size_t>(c))
        throw ContractViolation("Tensor: data size does not match shape");
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Neg: return "neg";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::LogSigmoid: return "log_sigmoid";
        case OpKind::Tanh: return "tanh";
        case OpKind::Relu: return "relu";
        case OpKind::ClampZero: return "clamp_zero";
        case OpKind::Abs: return "abs";
        case OpKind::Min: return "min";
        case OpKind::Max: return "max";
        case OpKind::Dot: return "dot";
        case OpKind::MatMul: return "matmul";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::RowSum: return "row_sum";
        case OpKind::Reshape: return "reshape";
        case OpKind::SliceCols: return "slice_cols";
        case OpKind::ConcatCols: return "concat_cols";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::GatherRows: return "gather_rows";
        case OpKind::CumprodExclusive: return "cumprod_exclusive";
        case OpKind::StopGradient: return "stop_gradient";
        case OpKind::Custom: return "custom";
    }
    return "?";
}

namespace {

bool is_binary_elementwise(OpKind k) {
    return k == OpKind::Add || k == OpKind::Sub || k == OpKind::Mul || k == OpKind::Div ||
           k == OpKind::Min || k == OpKind::Max;
}

struct Broadcast {
    int rows;
    int cols;
};

Broadcast broadcast_shape(const Tensor& a, const Tensor& b, OpKind kind) {
    auto pick = [&](int x, int y) {
        if (x == y) return x;
        if (x == 1) return y;
        if (y == 1) return x;
        throw ContractViolation(std::string(op_name(kind)) + ": incompatible shapes " +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) + " and " +
                                std::to_string(b.rows) + "x" + std::to_string(b.cols));
    };
    return {pick(a.rows, b.rows), pick(a.cols, b.cols)};
}

// Visits every output element with the flat indices of both operands.
template <class F>
void for_each_broadcast(const Tensor& a, const Tensor& b, Broadcast s, F&& f) {
    const std::size_t n = static_cast<std::size_t>(s.rows) * static_cast<std::size_t>(s.cols);
    if (a.rows == s.rows && a.cols == s.cols && b.rows == s.rows && b.cols == s.cols) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    if (b.is_scalar() && a.rows == s.rows && a.cols == s.cols) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, std::size_t{0});
        return;
    }
    if (a.is_scalar() && b.rows == s.rows && b.cols == s.cols) {
        for (std::size_t i = 0; i < n; ++i) f(i, std::size_t{0}, i);
        return;
    }
    for (int r = 0; r < s.rows; ++r) {
        const std::size_t ar = a.rows == 1 ? 0 : static_cast<std::size_t>(r);
        const std::size_t br = b.rows == 1 ? 0 : static_cast<std::size_t>(r);
        for (int c = 0; c < s.cols; ++c) {
            const std::size_t ac = a.cols == 1 ? 0 : static_cast<std::size_t>(c);
            const std::size_t bc = b.cols == 1 ? 0 : static_cast<std::size_t>(c);
            f(static_cast<std::size_t>(r) * s.cols + c, ar * a.cols + ac, br * b.cols + bc);
        }
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw ContractViolation(what);
}

}  // namespace

// ---- Value -----------------------------------------------------------------

const Tensor& Value::tensor() const {
    require(tape_ != nullptr, "Value: invalid handle");
    return tape_->value(id_);
}

double Value::item() const {
    const Tensor& t = tensor();
    require(t.is_scalar(), "Value::item: not a scalar");
    return t.data[0];
}

std::span<const double> Value::grad() const {
    require(tape_ != nullptr, "Value: invalid handle");
    return tape_->grad(id_);
}

// ---- Tape ------------------------------------------------------------------

Value Tape::leaf(Tensor t) {
    Node n;
    n.kind = OpKind::Leaf;
    n.requires_grad = true;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::constant(Tensor t) {
    Node n;
    n.kind = OpKind::Constant;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::record(OpKind kind, std::vector<int> inputs, OpParams params) {
    Node n;
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.params = std::move(params);
    for (int id : n.inputs) {
        require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), "Tape::record: input not on this tape");
        n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(id)].requires_grad;
    }
    if (kind == OpKind::StopGradient) n.requires_grad = false;
    n.value = compute(n);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Value Tape::custom(std::shared_ptr<CustomOp> op, const std::vector<Value>& inputs) {
    Node n;
    n.kind = OpKind::Custom;
    n.custom = std::move(op);
    for (const Value& v : inputs) {
        require(v.tape() == this, "Tape::custom: input not on this tape");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id())].requires_grad;
    }
    n.value = compute(n);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

std::span<const double> Tape::grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return {n.grad.data(), n.grad.size()};
}

void Tape::replay() {
    for (Node& n : nodes_) {
        if (n.kind == OpKind::Leaf || n.kind == OpKind::Constant) continue;
        n.value = compute(n);
    }
}

void Tape::backward(Value output) {
    require(output.tape() == this, "backward: output not on this tape");
    require(value(output.id()).is_scalar(), "backward: output must be scalar");
    const double one = 1.0;
    backward(output, std::span<const double>(&one, 1));
}

void Tape::backward(Value output, std::span<const double> seed) {
    require(output.tape() == this, "backward: output not on this tape");
    const auto out = static_cast<std::size_t>(output.id());
    require(seed.size() == nodes_[out].value.size(), "backward: seed shape mismatch");
    for (std::size_t i = 0; i <= out; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad) {
            n.grad.assign(n.value.size(), 0.0);
        } else {
            n.grad.clear();
        }
    }
    for (std::size_t i = out + 1; i < nodes_.size(); ++i) nodes_[i].grad.clear();
    Node& o = nodes_[out];
    if (!o.requires_grad) {
        last_visits_ = 0;
        return;
    }
    std::copy(seed.begin(), seed.end(), o.grad.begin());
    sweep(output.id());
}

void Tape::sweep(int output_id) {
    last_visits_ = 0;
    for (int i = output_id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.requires_grad || n.kind == OpKind::Leaf) continue;
        propagate(n);
        ++last_visits_;
    }
}

Tensor Tape::compute(const Node& node) const {
    auto in = [&](std::size_t k) -> const Tensor& {
        return nodes_[static_cast<std::size_t>(node.inputs[k])].value;
    };
    const OpKind kind = node.kind;

    if (is_binary_elementwise(kind)) {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const Broadcast s = broadcast_shape(a, b, kind);
        Tensor out(s.rows, s.cols);
        double* o = out.data.data();
        const double* pa = a.data.data();
        const double* pb = b.data.data();
        switch (kind) {
            case OpKind::Add:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] + pb[ib]; });
                break;
            case OpKind::Sub:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] - pb[ib]; });
                break;
            case OpKind::Mul:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] * pb[ib]; });
                break;
            case OpKind::Div:
                for (double v : b.data)
                    if (v == 0.0) throw DomainError("div: division by zero");
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = pa[ia] / pb[ib]; });
                break;
            case OpKind::Min:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    o[i] = pa[ia] <= pb[ib] ? pa[ia] : pb[ib];
                });
                break;
            case OpKind::Max:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    o[i] = pa[ia] >= pb[ib] ? pa[ia] : pb[ib];
                });
                break;
            default: break;
        }
        return out;
    }

    switch (kind) {
        case OpKind::Leaf:
        case OpKind::Constant: return node.value;
        case OpKind::Neg:
        case OpKind::Exp:
        case OpKind::Log:
        case OpKind::Sqrt:
        case OpKind::Sigmoid:
        case OpKind::LogSigmoid:
        case OpKind::Tanh:
        case OpKind::Relu:
        case OpKind::ClampZero:
        case OpKind::Abs:
        case OpKind::StopGradient: {
            const Tensor& a = in(0);
            Tensor out(a.rows, a.cols);
            const std::size_t n = a.size();
            const double* pa = a.data.data();
            double* o = out.data.data();
            switch (kind) {
                case OpKind::Neg: for (std::size_t i = 0; i < n; ++i) o[i] = -pa[i]; break;
                case OpKind::Exp: for (std::size_t i = 0; i < n; ++i) o[i] = std::exp(pa[i]); break;
                case OpKind::Log:
                    for (std::size_t i = 0; i < n; ++i) {
                        if (pa[i] < 0.0) throw DomainError("log: negative argument");
                        o[i] = std::log(pa[i]);
                    }
                    break;
                case OpKind::Sqrt:
                    for (std::size_t i = 0; i < n; ++i) {
                        if (pa[i] < 0.0) throw DomainError("sqrt: negative argument");
                        o[i] = std::sqrt(pa[i]);
                    }
                    break;
                case OpKind::Sigmoid: for (std::size_t i = 0; i < n; ++i) o[i] = sigmoid(pa[i]); break;
                case OpKind::LogSigmoid: for (std::size_t i = 0; i < n; ++i) o[i] = log_sigmoid(pa[i]); break;
                case OpKind::Tanh: for (std::size_t i = 0; i < n; ++i) o[i] = std::tanh(pa[i]); break;
                case OpKind::Relu: for (std::size_t i = 0; i < n; ++i) o[i] = relu(pa[i]); break;
                case OpKind::ClampZero: for (std::size_t i = 0; i < n; ++i) o[i] = clamp_zero(pa[i]); break;
                case OpKind::Abs: for (std::size_t i = 0; i < n; ++i) o[i] = std::fabs(pa[i]); break;
                case OpKind::StopGradient: for (std::size_t i = 0; i < n; ++i) o[i] = pa[i]; break;
                default: break;
            }
            return out;
        }
        case OpKind::Dot: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            require(a.cols == b.cols && (b.rows == a.rows || b.rows == 1), "dot: shape mismatch");
            Tensor out(a.rows, 1);
            for (int r = 0; r < a.rows; ++r) {
                const double* pa = &a.data[static_cast<std::size_t>(r) * a.cols];
                const double* pb = &b.data[b.rows == 1 ? 0 : static_cast<std::size_t>(r) * b.cols];
                double acc = 0.0;
                for (int k = 0; k < a.cols; ++k) acc += pa[k] * pb[k];
                out.data[static_cast<std::size_t>(r)] = acc;
            }
            return out;
        }
        case OpKind::MatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            require(a.cols == b.rows, "matmul: inner dimensions differ");
            Tensor out(a.rows, b.cols);
            const int K = a.cols;
            const int C = b.cols;
            for (int r = 0; r < a.rows; ++r) {
                double* o = &out.data[static_cast<std::size_t>(r) * C];
                const double* pa = &a.data[static_cast<std::size_t>(r) * K];
                for (int k = 0; k < K; ++k) {
                    const double x = pa[k];
                    const double* pb = &b.data[static_cast<std::size_t>(k) * C];
                    for (int c = 0; c < C; ++c) o[c] += x * pb[c];
                }
            }
            return out;
        }
        case OpKind::Sum:
        case OpKind::Mean: {
            const Tensor& a = in(0);
            double acc = 0.0;
            for (double v : a.data) acc += v;
            if (kind == OpKind::Mean) {
                require(a.size() > 0, "mean: empty tensor");
                acc /= static_cast<double>(a.size());
            }
            return Tensor::scalar(acc);
        }
        case OpKind::RowSum: {
            const Tensor& a = in(0);
            Tensor out(a.rows, 1);
            for (int r = 0; r < a.rows; ++r) {
                double acc = 0.0;
                for (int c = 0; c < a.cols; ++c) acc += a(r, c);
                out.data[static_cast<std::size_t>(r)] = acc;
            }
            return out;
        }
        case OpKind::Reshape: {
            const Tensor& a = in(0);
            require(static_cast<std::size_t>(node.params.a) * static_cast<std::size_t>(node.params.b) == a.size(),
                    "reshape: element count changes");
            return Tensor(node.params.a, node.params.b, a.data);
        }
        case OpKind::SliceCols: {
            const Tensor& a = in(0);
            const int begin = node.params.a;
            const int count = node.params.b;
            require(begin >= 0 && count >= 0 && begin + count <= a.cols, "slice_cols: out of range");
            Tensor out(a.rows, count);
            for (int r = 0; r < a.rows; ++r)
                for (int c = 0; c < count; ++c) out(r, c) = a(r, begin + c);
            return out;
        }
        case OpKind::ConcatCols: {
            const int rows = in(0).rows;
            int cols = 0;
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                require(in(k).rows == rows, "concat_cols: row counts differ");
                cols += in(k).cols;
            }
            Tensor out(rows, cols);
            int offset = 0;
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                const Tensor& p = in(k);
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < p.cols; ++c) out(r, offset + c) = p(r, c);
                offset += p.cols;
            }
            return out;
        }
        case OpKind::SliceRows: {
            const Tensor& a = in(0);
            const int begin = node.params.a;
            const int count = node.params.b;
            require(begin >= 0 && count >= 0 && begin + count <= a.rows, "slice_rows: out of range");
            const auto first = a.data.begin() + static_cast<std::ptrdiff_t>(begin) * a.cols;
            return Tensor(count, a.cols, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(count) * a.cols));
        }
        case OpKind::ConcatRows: {
            const int cols = in(0).cols;
            int rows = 0;
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                require(in(k).cols == cols, "concat_rows: column counts differ");
                rows += in(k).rows;
            }
            Tensor out(rows, cols);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                std::copy(in(k).data.begin(), in(k).data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset));
                offset += in(k).size();
            }
            return out;
        }
        case OpKind::GatherRows: {
            const Tensor& a = in(0);
            const auto& idx = node.params.indices;
            Tensor out(static_cast<int>(idx.size()), a.cols);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                require(idx[i] >= 0 && idx[i] < a.rows, "gather_rows: index out of range");
                std::copy_n(&a.data[static_cast<std::size_t>(idx[i]) * a.cols], a.cols, &out.data[i * a.cols]);
            }
            return out;
        }
        case OpKind::CumprodExclusive: {
            const Tensor& a = in(0);
            Tensor out(a.rows, a.cols);
            for (int r = 0; r < a.rows; ++r) {
                double t = 1.0;
                for (int c = 0; c < a.cols; ++c) {
                    out(r, c) = t;
                    t *= a(r, c);
                }
            }
            return out;
        }
        case OpKind::Custom: {
            std::vector<const Tensor*> ins;
            ins.reserve(node.inputs.size());
            for (std::size_t k = 0; k < node.inputs.size(); ++k) ins.push_back(&in(k));
            return node.custom->forward(ins);
        }
        default: break;
    }
    throw ContractViolation(std::string("unhandled op ") + op_name(kind));
}

void Tape::propagate(Node& node) {
    auto in_node = [&](std::size_t k) -> Node& { return nodes_[static_cast<std::size_t>(node.inputs[k])]; };
    const double* g = node.grad.data();
    const Tensor& out = node.value;
    const OpKind kind = node.kind;

    if (is_binary_elementwise(kind)) {
        Node& na = in_node(0);
        Node& nb = in_node(1);
        const Tensor& a = na.value;
        const Tensor& b = nb.value;
        const Broadcast s{out.rows, out.cols};
        double* ga = na.requires_grad ? na.grad.data() : nullptr;
        double* gb = nb.requires_grad ? nb.grad.data() : nullptr;
        const double* pa = a.data.data();
        const double* pb = b.data.data();
        const double* po = out.data.data();
        switch (kind) {
            case OpKind::Add:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] += g[i];
                });
                break;
            case OpKind::Sub:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] -= g[i];
                });
                break;
            case OpKind::Mul:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (ga) ga[ia] += g[i] * pb[ib];
                    if (gb) gb[ib] += g[i] * pa[ia];
                });
                break;
            case OpKind::Div:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (ga) ga[ia] += g[i] / pb[ib];
                    if (gb) gb[ib] -= g[i] * po[i] / pb[ib];
                });
                break;
            case OpKind::Min:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (pa[ia] <= pb[ib]) {
                        if (ga) ga[ia] += g[i];
                    } else if (gb) {
                        gb[ib] += g[i];
                    }
                });
                break;
            case OpKind::Max:
                for_each_broadcast(a, b, s, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    if (pa[ia] >= pb[ib]) {
                        if (ga) ga[ia] += g[i];
                    } else if (gb) {
                        gb[ib] += g[i];
                    }
                });
                break;
            default: break;
        }
        return;
    }

    switch (kind) {
        case OpKind::Neg:
        case OpKind::Exp:
        case OpKind::Log:
        case OpKind::Sqrt:
        case OpKind::Sigmoid:
        case OpKind::LogSigmoid:
        case OpKind::Tanh:
        case OpKind::Relu:
        case OpKind::ClampZero:
        case OpKind::Abs: {
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            double* ga = na.grad.data();
            const double* pa = na.value.data.data();
            const double* po = out.data.data();
            const std::size_t n = out.size();
            switch (kind) {
                case OpKind::Neg: for (std::size_t i = 0; i < n; ++i) ga[i] -= g[i]; break;
                case OpKind::Exp: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * po[i]; break;
                case OpKind::Log: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / pa[i]; break;
                case OpKind::Sqrt:
                    for (std::size_t i = 0; i < n; ++i)
                        if (po[i] > 0.0) ga[i] += g[i] * 0.5 / po[i];
                    break;
                case OpKind::Sigmoid: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * po[i] * (1.0 - po[i]); break;
                case OpKind::LogSigmoid: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * sigmoid(-pa[i]); break;
                case OpKind::Tanh: for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - po[i] * po[i]); break;
                case OpKind::Relu:
                    for (std::size_t i = 0; i < n; ++i)
                        if (pa[i] > 0.0) ga[i] += g[i];
                    break;
                case OpKind::ClampZero:
                    for (std::size_t i = 0; i < n; ++i)
                        if (pa[i] >= 0.0) ga[i] += g[i];
                    break;
                case OpKind::Abs:
                    for (std::size_t i = 0; i < n; ++i) ga[i] += pa[i] >= 0.0 ? g[i] : -g[i];
                    break;
                default: break;
            }
            return;
        }
        case OpKind::Dot: {
            Node& na = in_node(0);
            Node& nb = in_node(1);
            const Tensor& a = na.value;
            const Tensor& b = nb.value;
            for (int r = 0; r < a.rows; ++r) {
                const std::size_t ra = static_cast<std::size_t>(r) * a.cols;
                const std::size_t rb = b.rows == 1 ? 0 : static_cast<std::size_t>(r) * b.cols;
                const double gr = g[r];
                if (na.requires_grad)
                    for (int k = 0; k < a.cols; ++k) na.grad[ra + k] += gr * b.data[rb + k];
                if (nb.requires_grad)
                    for (int k = 0; k < a.cols; ++k) nb.grad[rb + k] += gr * a.data[ra + k];
            }
            return;
        }
        case OpKind::MatMul: {
            Node& na = in_node(0);
            Node& nb = in_node(1);
            const Tensor& a = na.value;
            const Tensor& b = nb.value;
            const int R = a.rows;
            const int K = a.cols;
            const int C = b.cols;
            if (na.requires_grad) {
                // dA = dY * B^T, evaluated with B^T materialized for a unit-stride inner loop.
                std::vector<double> bt(static_cast<std::size_t>(K) * C);
                for (int k = 0; k < K; ++k)
                    for (int c = 0; c < C; ++c) bt[static_cast<std::size_t>(c) * K + k] = b.data[static_cast<std::size_t>(k) * C + c];
                for (int r = 0; r < R; ++r) {
                    double* ga = &na.grad[static_cast<std::size_t>(r) * K];
                    const double* gr = &g[static_cast<std::size_t>(r) * C];
                    for (int c = 0; c < C; ++c) {
                        const double gv = gr[c];
                        if (gv == 0.0) continue;
                        const double* pb = &bt[static_cast<std::size_t>(c) * K];
                        for (int k = 0; k < K; ++k) ga[k] += gv * pb[k];
                    }
                }
            }
            if (nb.requires_grad) {
                double* gb = nb.grad.data();
                for (int r = 0; r < R; ++r) {
                    const double* pa = &a.data[static_cast<std::size_t>(r) * K];
                    const double* gr = &g[static_cast<std::size_t>(r) * C];
                    for (int k = 0; k < K; ++k) {
                        const double x = pa[k];
                        if (x == 0.0) continue;
                        double* row = &gb[static_cast<std::size_t>(k) * C];
                        for (int c = 0; c < C; ++c) row[c] += x * gr[c];
                    }
                }
            }
            return;
        }
        case OpKind::Sum:
        case OpKind::Mean: {
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            double gv = g[0];
            if (kind == OpKind::Mean) gv /= static_cast<double>(na.value.size());
            for (double& v : na.grad) v += gv;
            return;
        }
        case OpKind::RowSum: {
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            const int C = na.value.cols;
            for (int r = 0; r < na.value.rows; ++r)
                for (int c = 0; c < C; ++c) na.grad[static_cast<std::size_t>(r) * C + c] += g[r];
            return;
        }
        case OpKind::Reshape:
        case OpKind::StopGradient: {
            Node& na = in_node(0);
            if (!na.requires_grad || kind == OpKind::StopGradient) return;
            for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[i];
            return;
        }
        case OpKind::SliceCols: {
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            const int begin = node.params.a;
            const int count = node.params.b;
            const int C = na.value.cols;
            for (int r = 0; r < na.value.rows; ++r)
                for (int c = 0; c < count; ++c)
                    na.grad[static_cast<std::size_t>(r) * C + begin + c] += g[static_cast<std::size_t>(r) * count + c];
            return;
        }
        case OpKind::ConcatCols: {
            int offset = 0;
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                Node& p = in_node(k);
                const int pc = p.value.cols;
                if (p.requires_grad) {
                    for (int r = 0; r < out.rows; ++r)
                        for (int c = 0; c < pc; ++c)
                            p.grad[static_cast<std::size_t>(r) * pc + c] += g[static_cast<std::size_t>(r) * out.cols + offset + c];
                }
                offset += pc;
            }
            return;
        }
        case OpKind::SliceRows: {
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            const std::size_t first = static_cast<std::size_t>(node.params.a) * na.value.cols;
            for (std::size_t i = 0; i < out.size(); ++i) na.grad[first + i] += g[i];
            return;
        }
        case OpKind::ConcatRows: {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                Node& p = in_node(k);
                if (p.requires_grad)
                    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g[offset + i];
                offset += p.value.size();
            }
            return;
        }
        case OpKind::GatherRows: {
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            const int C = na.value.cols;
            const auto& idx = node.params.indices;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                double* dst = &na.grad[static_cast<std::size_t>(idx[i]) * C];
                for (int c = 0; c < C; ++c) dst[c] += g[i * C + c];
            }
            return;
        }
        case OpKind::CumprodExclusive: {
            // grad x_j = T_j * S_j, S_j = g_{j+1} + x_{j+1} S_{j+1}; no division by x.
            Node& na = in_node(0);
            if (!na.requires_grad) return;
            const Tensor& a = na.value;
            const int C = a.cols;
            for (int r = 0; r < a.rows; ++r) {
                const std::size_t base = static_cast<std::size_t>(r) * C;
                double s = 0.0;
                for (int j = C - 2; j >= 0; --j) {
                    s = g[base + j + 1] + a.data[base + j + 1] * s;
                    na.grad[base + j] += out.data[base + j] * s;
                }
            }
            return;
        }
        case OpKind::Custom: {
            std::vector<const Tensor*> ins;
            std::vector<double*> grads;
            ins.reserve(node.inputs.size());
            grads.reserve(node.inputs.size());
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                Node& p = in_node(k);
                ins.push_back(&p.value);
                grads.push_back(p.requires_grad ? p.grad.data() : nullptr);
            }
            node.custom->backward(ins, out, std::span<const double>(node.grad.data(), node.grad.size()), grads);
            return;
        }
        default: break;
    }
}

// ---- operator front-end ----------------------------------------------------

namespace {

Tape& common_tape(Value a, Value b) {
    require(a.valid() && b.valid(), "operation on an invalid Value");
    require(a.tape() == b.tape(), "operands live on different tapes");
    return *a.tape();
}

Value binary(OpKind k, Value a, Value b) { return common_tape(a, b).record(k, {a.id(), b.id()}); }

Value unary(OpKind k, Value a, OpParams p = {}) {
    require(a.valid(), "operation on an invalid Value");
    return a.tape()->record(k, {a.id()}, std::move(p));
}

Value lift(Value like, double v) { return like.tape()->constant(v); }

}  // namespace

Value operator+(Value a, Value b) { return binary(OpKind::Add, a, b); }
Value operator-(Value a, Value b) { return binary(OpKind::Sub, a, b); }
Value operator*(Value a, Value b) { return binary(OpKind::Mul, a, b); }
Value operator/(Value a, Value b) { return binary(OpKind::Div, a, b); }
Value operator-(Value a) { return unary(OpKind::Neg, a); }
Value operator+(Value a, double b) { return a + lift(a, b); }
Value operator+(double a, Value b) { return lift(b, a) + b; }
Value operator-(Value a, double b) { return a - lift(a, b); }
Value operator-(double a, Value b) { return lift(b, a) - b; }
Value operator*(Value a, double b) { return a * lift(a, b); }
Value operator*(double a, Value b) { return lift(b, a) * b; }
Value operator/(Value a, double b) { return a / lift(a, b); }
Value operator/(double a, Value b) { return lift(b, a) / b; }

Value exp(Value a) { return unary(OpKind::Exp, a); }
Value log(Value a) { return unary(OpKind::Log, a); }
Value sqrt(Value a) { return unary(OpKind::Sqrt, a); }
Value sigmoid(Value a) { return unary(OpKind::Sigmoid, a); }
Value log_sigmoid(Value a) { return unary(OpKind::LogSigmoid, a); }
Value tanh(Value a) { return unary(OpKind::Tanh, a); }
Value relu(Value a) { return unary(OpKind::Relu, a); }
Value clamp_zero(Value a) { return unary(OpKind::ClampZero, a); }
Value abs(Value a) { return unary(OpKind::Abs, a); }
Value min(Value a, Value b) { return binary(OpKind::Min, a, b); }
Value max(Value a, Value b) { return binary(OpKind::Max, a, b); }
Value min(Value a, double b) { return min(a, lift(a, b)); }
Value max(Value a, double b) { return max(a, lift(a, b)); }
Value square(Value a) { return a * a; }

Value dot(Value a, Value b) { return binary(OpKind::Dot, a, b); }
Value matmul(Value a, Value b) { return binary(OpKind::MatMul, a, b); }
Value matvec(Value a, Value x) {
    require(x.cols() == 1, "matvec: right operand must be a column");
    return matmul(a, x);
}
Value sum(Value a) { return unary(OpKind::Sum, a); }
Value mean(Value a) { return unary(OpKind::Mean, a); }
Value row_sum(Value a) { return unary(OpKind::RowSum, a); }
Value reshape(Value a, int rows, int cols) { return unary(OpKind::Reshape, a, {rows, cols, {}}); }
Value slice_cols(Value a, int begin, int count) { return unary(OpKind::SliceCols, a, {begin, count, {}}); }
Value slice_rows(Value a, int begin, int count) { return unary(OpKind::SliceRows, a, {begin, count, {}}); }
Value gather_rows(Value a, std::vector<int> rows) { return unary(OpKind::GatherRows, a, {0, 0, std::move(rows)}); }
Value cumprod_exclusive(Value a) { return unary(OpKind::CumprodExclusive, a); }
Value stop_gradient(Value a) { return unary(OpKind::StopGradient, a); }

namespace {
Value concat(OpKind k, const std::vector<Value>& parts) {
    require(!parts.empty(), "concat: no inputs");
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Value& p : parts) {
        require(p.tape() == parts.front().tape(), "concat: operands live on different tapes");
        ids.push_back(p.id());
    }
    return parts.front().tape()->record(k, std::move(ids));
}
}  // namespace

Value concat_cols(const std::vector<Value>& parts) { return concat(OpKind::ConcatCols, parts); }
Value concat_rows(const std::vector<Value>& parts) { return concat(OpKind::ConcatRows, parts); }

// ---- grad_check ------------------------------------------------------------

namespace {
double evaluate(const TapeFunction& f, const std::vector<Tensor>& x) {
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(x.size());
    for (const Tensor& t : x) leaves.push_back(tape.leaf(t));
    return f(tape, leaves).item();
}
}  // namespace

GradCheckResult grad_check(const TapeFunction& f, const std::vector<Tensor>& x, const GradCheckOptions& options) {
    Tape tape;
    std::vector<Value> leaves;
    leaves.reserve(x.size());
    for (const Tensor& t : x) leaves.push_back(tape.leaf(t));
    Value out = f(tape, leaves);
    tape.backward(out);

    GradCheckResult result;
    std::vector<Tensor> probe = x;
    for (std::size_t l = 0; l < x.size(); ++l) {
        const auto analytic = leaves[l].grad();
        const std::size_t n = x[l].size();
        std::size_t stride = 1;
        if (options.max_entries_per_leaf > 0 && n > static_cast<std::size_t>(options.max_entries_per_leaf))
            stride = n / static_cast<std::size_t>(options.max_entries_per_leaf);
        for (std::size_t i = 0; i < n; i += stride) {
            const double x0 = x[l].data[i];
            probe[l].data[i] = x0 + options.eps;
            const double fp = evaluate(f, probe);
            probe[l].data[i] = x0 - options.eps;
            const double fm = evaluate(f, probe);
            probe[l].data[i] = x0;
            const double numeric = (fp - fm) / (2.0 * options.eps);
            const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(numeric));
            ++result.probes;
            if (err > result.max_rel_error || result.worst_leaf < 0) {
                if (err >= result.max_rel_error) {
                    result.max_rel_error = err;
                    result.worst_leaf = static_cast<int>(l);
                    result.worst_entry = static_cast<int>(i);
                }
            }
        }
    }
    return result;
}

double grad_check(const TapeFunction& f, const std::vector<Tensor>& x, double eps) {
    GradCheckOptions o;
    o.eps = eps;
    return grad_check(f, x, o).max_rel_error;
}

}  // namespace neusg::diff
