#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "attnlab/errors.hpp"

namespace attnlab {

class Tape;

struct TensorImpl {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first touched by backward
    bool requires_grad = false;
    const Tape* tape = nullptr; // tape that produced this tensor, if any
    int node_index = -1;
    std::string name; // non-empty for named parameters
};

// Dense row-major FP64 tensor. Copies share the underlying storage; values
// are treated as immutable after creation except for the grad slot and
// in-place parameter updates performed by the optimizer.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from_data(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double value);
    // Parameter: requires_grad with a zero-initialized grad buffer.
    static Tensor param(std::vector<int> shape, std::string name);

    bool defined() const { return static_cast<bool>(p_); }
    const std::vector<int>& shape() const { return p_->shape; }
    int dim(int i) const { return p_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(p_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(p_->data.size()); }

    std::vector<double>& data() { return p_->data; }
    const std::vector<double>& data() const { return p_->data; }
    double* ptr() { return p_->data.data(); }
    const double* ptr() const { return p_->data.data(); }

    bool requires_grad() const { return p_->requires_grad; }
    // Grad buffer, allocated zero-filled on first access.
    std::vector<double>& grad() const;
    bool has_grad() const { return !p_->grad.empty(); }
    void zero_grad() const;

    // Value of a single-element tensor.
    double item() const;
    double at(std::initializer_list<int> idx) const;

    const std::string& name() const { return p_->name; }
    TensorImpl* impl() const { return p_.get(); }

  private:
    std::shared_ptr<TensorImpl> p_;
    explicit Tensor(std::shared_ptr<TensorImpl> p) : p_(std::move(p)) {}
    friend Tensor make_tensor(std::vector<int>, std::vector<double>);
};

std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape. Ops executed while a Tape is active (via Tape::Scope)
// and touching at least one requires_grad input record a backward closure.
// backward(loss) clears the grads of every tensor this tape produced, seeds
// d(loss)/d(loss) = 1 and sweeps the nodes in reverse topological order, so
// leaf (parameter) grads accumulate across repeated calls and across tapes
// until explicitly zeroed.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    class Scope {
      public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

      private:
        Tape* prev_;
    };

    static Tape* active();

    void record(const Tensor& out, std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

// Raw accumulate-into kernels (C += ...), row-major, fixed reduction order.
// Shared with the estimator module, which works outside the tape.
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n); // C[m,n] += A[m,k] B[k,n]
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n); // C[m,n] += A[m,k] B[n,k]^T
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n); // C[m,n] += A[k,m]^T B[k,n]
// S[t,t] = scale * Q Q^T with S == S^T bit-exact (lower triangle computed
// with a fixed-order dot product, upper triangle mirrored).
void symmetric_gram(const double* q, double* s, int t, int dk, double scale);

// --- differentiable operations ---

Tensor matmul(const Tensor& a, const Tensor& b);                       // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);                    // [m,k]x[n,k] -> [m,n]
Tensor scaled_matmul_nt(const Tensor& a, const Tensor& b, double s);   // s * A B^T
Tensor symmetric_scores(const Tensor& q, double s);                    // s * Q Q^T, bitwise symmetric

Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor sub(const Tensor& a, const Tensor& b);        // same shape
Tensor add_row_broadcast(const Tensor& a, const Tensor& b); // [m,n] + [n]
Tensor add_scalar_tensor(const Tensor& x, const Tensor& s); // x + s, s is [1]
Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s); // x * s, s is [1]
Tensor scalar_mul(const Tensor& x, double c);
Tensor scalar_add(const Tensor& x, double c);
Tensor square(const Tensor& x);
Tensor exp_t(const Tensor& x);
Tensor sum(const Tensor& x);   // -> [1]
Tensor mean(const Tensor& x);  // -> [1]
Tensor select(const Tensor& x, int i); // [n] -> [1]

// Rows of the flattened [..., n] view each sum to 1; max-subtracted for
// stability. NaN input raises NumericError; an all -inf row raises
// DegenerateError.
Tensor softmax_rows(const Tensor& x);
Tensor gelu(const Tensor& x); // exact erf form x * Phi(x)
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// Mean over positions of -log softmax(logits)[t, targets[t]].
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets);
Tensor embedding(std::span<const int> ids, const Tensor& table);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Strict upper triangle (column > row) set to -inf.
Tensor apply_causal_mask(const Tensor& scores);

} // namespace attnlab
