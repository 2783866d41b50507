#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "nflab/rng.hpp"
#include "nflab/tensor.hpp"

namespace nflab {

class Tape;

// Handle to a node on a Tape: a value tensor plus (after backward) its
// gradient of the same shape.
class Var {
public:
    Var() = default;
    bool valid() const { return tape_ != nullptr; }
    int index() const { return idx_; }
    Tape* tape() const { return tape_; }
    const Tensor& value() const;
    const Tensor& grad() const;

private:
    friend class Tape;
    Var(Tape* t, int i) : tape_(t), idx_(i) {}
    Tape* tape_ = nullptr;
    int idx_ = -1;
};

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order by definition; backward walks them in reverse creation
// order, so the evaluation order is deterministic and runs are bit
// reproducible. Values are immutable once written. Single-threaded per
// instance; independent tapes may run concurrently.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Input/parameter node; participates in gradient accumulation.
    Var leaf(Tensor value);

    // Runs reverse-mode accumulation from a scalar root. Gradients of nodes
    // the root does not reach (including unreached parameters) stay zero.
    void backward(Var root);

    bool grads_ready() const { return grads_ready_; }
    int size() const { return static_cast<int>(nodes_.size()); }
    void clear();

    // True when every node value on the tape is finite; the training loop's
    // divergence detector scans this after each forward pass.
    bool all_values_finite() const;

    // --- below: plumbing used by the op implementations ---
    using BackFn = std::function<void(Tape&, int self)>;
    Var emplace(Tensor value, BackFn back);
    const Tensor& val(int idx) const { return nodes_[static_cast<size_t>(idx)].value; }
    Tensor& grd(int idx) { return nodes_[static_cast<size_t>(idx)].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackFn back;  // empty for leaves
    };
    std::deque<Node> nodes_;
    bool grads_ready_ = false;
};

// ---------------------------------------------------------------------------
// Primitive differentiable operations. All throw ShapeError/ValueError with
// the operand name when contracts are violated.
// ---------------------------------------------------------------------------

Var add(Var a, Var b);                      // elementwise, same shape
Var mul(Var a, Var b);                      // elementwise, same shape
Var scale(Var x, double c);                 // x * c (compile-time constant path)
Var add_rows(Var x, Var row);               // [..., d] + [d], broadcast over slices
Var mul_rows(Var x, Var row);               // [..., d] * [d], broadcast over slices
Var matmul(Var a, Var b);                   // [m,k]·[k,n] -> [m,n]
Var matmul_nt(Var a, Var b);                // [m,k]·[n,k]^T -> [m,n]
Var slice_cols(Var x, int c0, int c1);      // 2-D column slice
Var concat_cols(const std::vector<Var>& parts);
Var softmax(Var x);                         // trailing dim, max-subtracted
Var causal_masked_softmax(Var scores);      // [t,t]; row i attends to cols <= i
Var gelu(Var x);                            // x * Phi(x), exact erf form
Var relu_squared(Var x);                    // max(x,0)^2
Var layer_norm(Var x, Var gamma, Var beta, double eps, bool center = true,
               bool affine_bias = true);    // beta may be an invalid Var when affine_bias=false
Var scale_by_element(Var x, Var vec, int index);  // x * vec[index], vec 1-D
Var embedding_rows(Var table, const std::vector<int>& ids);  // gather rows
Var sum(Var x);                             // scalar [1]
Var dropout(Var x, double p, Rng& rng);     // inverted dropout; p in [0,1)

// Sum over masked rows of (logsumexp(logits_row) - logits_row[target]).
// Scalar output; divide by the mask count to get the mean loss.
Var cross_entropy_sum_masked(Var logits, const std::vector<int>& targets,
                             const std::vector<uint8_t>& mask);

}  // namespace nflab
