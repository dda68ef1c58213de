#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fpan/errors.hpp"

namespace fpan {

// Rank-4 tensor arithmetic with reverse-mode automatic differentiation.
//
// Precision is a pipeline-wide choice, not a per-tensor one: instantiate the
// whole graph with T = float (training/inference) or T = double (gradient
// verification). Mixing precisions within one graph is a type error.
//
// Threading: tensors are value-semantic handles onto shared storage and may
// be moved freely between threads. A Tape must only be driven by one thread.

struct Shape4 {
    int n{0};
    int c{0};
    int h{0};
    int w{0};

    [[nodiscard]] std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;
    [[nodiscard]] std::string str() const;
};

inline std::size_t flat_index(const Shape4& s, int n, int c, int h, int w) {
    return ((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w;
}

template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape4 shape, bool requires_grad = false)
        : shape_(shape), st_(std::make_shared<Storage>()) {
        if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
            throw ShapeError("Tensor: non-positive dimension in " + shape.str());
        }
        st_->data.assign(shape.numel(), T(0));
        st_->requires_grad = requires_grad;
    }

    static Tensor full(Shape4 shape, T value, bool requires_grad = false) {
        Tensor t(shape, requires_grad);
        for (auto& v : t.data()) v = value;
        return t;
    }

    static Tensor from_vector(Shape4 shape, std::vector<T> values,
                              bool requires_grad = false) {
        Tensor t(shape, requires_grad);
        if (values.size() != shape.numel()) {
            throw ShapeError("Tensor::from_vector: got " +
                             std::to_string(values.size()) + " values for " +
                             shape.str());
        }
        t.st_->data = std::move(values);
        return t;
    }

    [[nodiscard]] bool valid() const { return static_cast<bool>(st_); }
    [[nodiscard]] const Shape4& shape() const { return shape_; }
    [[nodiscard]] std::size_t numel() const { return shape_.numel(); }

    [[nodiscard]] bool requires_grad() const { return st_ && st_->requires_grad; }
    void set_requires_grad(bool on) { storage().requires_grad = on; }

    std::vector<T>& data() { return storage().data; }
    const std::vector<T>& data() const { return storage().data; }

    [[nodiscard]] bool has_grad() const { return st_ && !st_->grad.empty(); }

    // Allocates a zero-filled gradient buffer on first use.
    void ensure_grad() {
        auto& st = storage();
        if (st.grad.empty()) st.grad.assign(st.data.size(), T(0));
    }
    std::vector<T>& grad() {
        ensure_grad();
        return storage().grad;
    }
    const std::vector<T>& grad() const {
        if (!has_grad()) throw UsageError("Tensor::grad: no gradient present");
        return st_->grad;
    }
    void zero_grad() {
        if (st_) st_->grad.assign(st_->data.size(), T(0));
    }
    // Drops the gradient buffer entirely (has_grad() becomes false).
    void clear_grad() {
        if (st_) st_->grad.clear();
    }

    T& at(int n, int c, int h, int w) { return data()[flat_index(shape_, n, c, h, w)]; }
    T at(int n, int c, int h, int w) const { return data()[flat_index(shape_, n, c, h, w)]; }

    // Value of a one-element tensor.
    [[nodiscard]] T item() const {
        if (numel() != 1) throw UsageError("Tensor::item: tensor is not scalar");
        return data()[0];
    }

    // Deep copy of the values; gradient buffer and flags are not copied.
    [[nodiscard]] Tensor clone() const {
        Tensor t(shape_);
        t.data() = data();
        return t;
    }

    [[nodiscard]] bool shares_storage(const Tensor& other) const {
        return st_ && st_ == other.st_;
    }

private:
    struct Storage {
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad{false};
    };

    Shape4 shape_{};
    std::shared_ptr<Storage> st_;

    Storage& storage() {
        if (!st_) throw UsageError("Tensor: using a default-constructed tensor");
        return *st_;
    }
    const Storage& storage() const {
        if (!st_) throw UsageError("Tensor: using a default-constructed tensor");
        return *st_;
    }
};

// Records one backward rule per forward op, in execution order (which is a
// topological order by construction). backward() replays the list exactly
// once in reverse; gradients accumulate (+=) into leaf tensors, so callers
// zero leaf gradients between independent backward passes.
template <typename T>
class Tape {
public:
    void record(Tensor<T> output, std::function<void()> backward_rule) {
        ops_.push_back({std::move(output), std::move(backward_rule)});
    }

    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1) {
            throw UsageError("Tape::backward: loss must be scalar, got " +
                             loss.shape().str());
        }
        // Intermediate gradients are scratch state per pass; leaves keep theirs.
        for (auto& op : ops_) op.output.zero_grad();
        Tensor<T> seed = loss;
        if (seed.requires_grad()) seed.grad()[0] += T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward_rule();
    }

    void clear() { ops_.clear(); }
    [[nodiscard]] std::size_t num_ops() const { return ops_.size(); }

private:
    struct Op {
        Tensor<T> output;
        std::function<void()> backward_rule;
    };
    std::vector<Op> ops_;
};

// --- Operations -----------------------------------------------------------
//
// Every op takes the tape as first argument; pass nullptr for a pure forward
// pass with no gradient recording. Ops are pure functions of their inputs.

// Cross-correlation (no kernel flip). input [N,Cin,H,W], weight
// [Cout,Cin,kh,kw], bias [Cout,1,1,1]. Output spatial dims follow
// floor((H + 2*pad - kh) / stride) + 1.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int pad);

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x);

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product.
template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

// x [N,C,H,W] + v [N,C,1,1] replicated over H,W.
template <typename T>
Tensor<T> broadcast_add(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& v);

// Concatenation along channels; inputs must share N,H,W.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::span<const Tensor<T>> xs);

// Concatenation along the batch dimension; inputs must share C,H,W.
template <typename T>
Tensor<T> concat_batch(Tape<T>* tape, std::span<const Tensor<T>> xs);

// Copy of sample n as a [1,C,H,W] tensor.
template <typename T>
Tensor<T> slice_sample(Tape<T>* tape, const Tensor<T>& x, int n);

// Per-sample softmax over the H*W positions of a single-channel map,
// computed with max subtraction.
template <typename T>
Tensor<T> softmax_positions(Tape<T>* tape, const Tensor<T>& x);

// Per-sample normalization over C of an [N,C,1,1] tensor, then affine
// gamma/beta ([C,1,1,1] each).
template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps);

// [N,C*r^2,H,W] -> [N,C,rH,rW]; out[n][c][h][w] =
// in[n][c*r^2 + (h%r)*r + (w%r)][h/r][w/r].
template <typename T>
Tensor<T> pixel_shuffle(Tape<T>* tape, const Tensor<T>& x, int r);

// Matrices ride in [1,1,M,K] tensors. matmul: [1,1,M,K] x [1,1,K,P].
template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose2d(Tape<T>* tape, const Tensor<T>& a);

// Copy with a new shape of equal element count (row-major order preserved).
template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape4 new_shape);

// out[n,c] = sum_j alpha[n,0,j] * x[n,c,j] over spatial positions j;
// x [N,C,H,W], alpha [N,1,H,W], result [N,C,1,1].
template <typename T>
Tensor<T> attention_pool(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& alpha);

// Scalar [1,1,1,1] sum of all elements.
template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace fpan
