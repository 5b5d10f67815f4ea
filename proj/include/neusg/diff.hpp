// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over small dense 2-D tensors.
//
// A Tape records every operation in creation order, which is already a
// topological order. Values are cheap handles (tape pointer + node id).
// Tapes are define-by-run: build one per iteration (or per ray chunk),
// call backward() once or several times, read leaf gradients, discard.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neusg/error.hpp"

namespace neusg::diff {

/// Row-major dense matrix. A 1x1 tensor doubles as a scalar.
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int r, int c, double fill = 0.0);
    Tensor(int r, int c, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] bool is_scalar() const { return rows == 1 && cols == 1; }
    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

enum class OpKind : std::uint8_t {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    LogSigmoid,
    Tanh,
    Relu,
    ClampZero,
    Abs,
    Min,
    Max,
    Dot,
    MatMul,
    Sum,
    Mean,
    RowSum,
    Reshape,
    SliceCols,
    ConcatCols,
    SliceRows,
    ConcatRows,
    GatherRows,
    CumprodExclusive,
    StopGradient,
    Custom,
};

const char* op_name(OpKind kind);

/// User-defined operation with a hand-written adjoint.
///
/// forward() must be a pure function of its inputs so that Tape::replay()
/// reproduces the recorded output. backward() accumulates (+=) into the
/// input gradient buffers; a null buffer means that input needs no gradient.
class CustomOp {
public:
    virtual ~CustomOp() = default;
    [[nodiscard]] virtual const char* name() const = 0;
    virtual Tensor forward(std::span<const Tensor* const> inputs) = 0;
    virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output,
                          std::span<const double> output_grad,
                          std::span<double* const> input_grads) = 0;
};

class Tape;

/// Handle to a node on a tape.
class Value {
public:
    Value() = default;
    Value(Tape* tape, int id) : tape_(tape), id_(id) {}

    [[nodiscard]] Tape* tape() const { return tape_; }
    [[nodiscard]] int id() const { return id_; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

    [[nodiscard]] const Tensor& tensor() const;
    [[nodiscard]] int rows() const { return tensor().rows; }
    [[nodiscard]] int cols() const { return tensor().cols; }
    [[nodiscard]] double item() const;
    [[nodiscard]] double at(int r, int c = 0) const { return tensor()(r, c); }
    [[nodiscard]] std::span<const double> grad() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

struct OpParams {
    int a = 0;
    int b = 0;
    std::vector<int> indices;
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    /// Trainable input; gradients are kept for it.
    Value leaf(Tensor t);
    Value constant(Tensor t);
    Value constant(double v) { return constant(Tensor::scalar(v)); }

    Value record(OpKind kind, std::vector<int> inputs, OpParams params = {});
    Value custom(std::shared_ptr<CustomOp> op, const std::vector<Value>& inputs);

    /// Reverse sweep from a scalar output. Previous gradients are cleared.
    void backward(Value output);
    /// Reverse sweep seeded with an explicit adjoint of the same shape as output.
    void backward(Value output, std::span<const double> seed);

    /// Recomputes every non-input node from the stored inputs.
    void replay();

    [[nodiscard]] const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    [[nodiscard]] std::span<const double> grad(int id) const;
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] OpKind kind(int id) const { return nodes_[static_cast<std::size_t>(id)].kind; }
    [[nodiscard]] bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    /// Number of nodes whose adjoint rule ran in the last backward sweep.
    [[nodiscard]] std::size_t last_backward_visits() const { return last_visits_; }

private:
    struct Node {
        OpKind kind = OpKind::Constant;
        bool requires_grad = false;
        std::vector<int> inputs;
        OpParams params;
        Tensor value;
        std::vector<double> grad;
        std::shared_ptr<CustomOp> custom;
    };

    Tensor compute(const Node& node) const;
    void propagate(Node& node);
    void sweep(int output_id);

    std::vector<Node> nodes_;
    std::size_t last_visits_ = 0;
};

// ---- primitive operations -------------------------------------------------
//
// Binary elementwise ops broadcast along any dimension of extent 1.
// Ties in min/max/abs send the subgradient to the first argument.

Value operator+(Value a, Value b);
Value operator-(Value a, Value b);
Value operator*(Value a, Value b);
Value operator/(Value a, Value b);
Value operator-(Value a);
Value operator+(Value a, double b);
Value operator+(double a, Value b);
Value operator-(Value a, double b);
Value operator-(double a, Value b);
Value operator*(Value a, double b);
Value operator*(double a, Value b);
Value operator/(Value a, double b);
Value operator/(double a, Value b);

Value exp(Value a);
Value log(Value a);
/// The derivative at 0 is taken as 0.
Value sqrt(Value a);
Value sigmoid(Value a);
Value log_sigmoid(Value a);
Value tanh(Value a);
Value relu(Value a);
Value clamp_zero(Value a);
Value abs(Value a);
Value min(Value a, Value b);
Value max(Value a, Value b);
Value min(Value a, double b);
Value max(Value a, double b);
Value square(Value a);

/// Row-wise dot product: [R x K] . [R x K] (or [1 x K]) -> [R x 1].
Value dot(Value a, Value b);
Value matmul(Value a, Value b);
Value matvec(Value a, Value x);
Value sum(Value a);
Value mean(Value a);
Value row_sum(Value a);
Value reshape(Value a, int rows, int cols);
Value slice_cols(Value a, int begin, int count);
Value concat_cols(const std::vector<Value>& parts);
Value slice_rows(Value a, int begin, int count);
Value concat_rows(const std::vector<Value>& parts);
Value gather_rows(Value a, std::vector<int> rows);
/// out(r, i) = prod_{j < i} a(r, j); out(r, 0) = 1.
Value cumprod_exclusive(Value a);
Value stop_gradient(Value a);

// ---- scalar reference functions ------------------------------------------
//
// The tape evaluates these exact expressions so that templated code produces
// bit-identical results for double and Value instantiations.

double sigmoid(double x);
double log_sigmoid(double x);
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double clamp_zero(double x) { return x >= 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }

// ---- verification ----------------------------------------------------------

using TapeFunction = std::function<Value(Tape&, const std::vector<Value>&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    /// When > 0, only this many entries per leaf are probed (evenly strided).
    int max_entries_per_leaf = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    int worst_leaf = -1;
    int worst_entry = -1;
    int probes = 0;
};

/// Compares tape gradients of a scalar function against central differences.
/// Error per entry is |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(const TapeFunction& f, const std::vector<Tensor>& x,
                           const GradCheckOptions& options = {});

/// Convenience wrapper returning only the maximum relative error.
double grad_check(const TapeFunction& f, const std::vector<Tensor>& x, double eps);

}  // namespace neusg::diff
