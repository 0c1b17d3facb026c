#include "attnlab/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

namespace attnlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (const int d : shape) {
        if (d < 1) throw ShapeError("tensor dimension < 1 in " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::shared_ptr<TensorImpl> new_impl(std::vector<int> shape, std::vector<double> data) {
    auto p = std::make_shared<TensorImpl>();
    p->shape = std::move(shape);
    p->data = std::move(data);
    return p;
}

thread_local Tape* g_active_tape = nullptr;

std::vector<double>& grad_buf(TensorImpl* t) {
    if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
    return t->grad;
}

// Propagate requires_grad and record the node when a tape is active.
template <typename Fn>
void maybe_record(const Tensor& out, bool any_input_grad, Fn&& make_backward) {
    Tape* tape = Tape::active();
    if (tape == nullptr || !any_input_grad) return;
    out.impl()->requires_grad = true;
    tape->record(out, make_backward());
}

using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<RM>;
using CMap = Eigen::Map<const RM>;

} // namespace

// --- Tensor ---

Tensor make_tensor(std::vector<int> shape, std::vector<double> data) {
    return Tensor(new_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    const auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    const auto n = shape_numel(shape);
    return make_tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
    return make_tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::param(std::vector<int> shape, std::string name) {
    Tensor t = zeros(std::move(shape));
    t.impl()->requires_grad = true;
    t.impl()->grad.assign(t.data().size(), 0.0);
    t.impl()->name = std::move(name);
    return t;
}

std::vector<double>& Tensor::grad() const { return grad_buf(p_.get()); }

void Tensor::zero_grad() const {
    if (!p_->grad.empty()) std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return p_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        throw ShapeError("at(): index rank mismatch for " + shape_str(shape()));
    int64_t off = 0;
    int i = 0;
    for (const int v : idx) {
        if (v < 0 || v >= p_->shape[static_cast<size_t>(i)])
            throw IndexError("at(): index out of range for " + shape_str(shape()));
        off = off * p_->shape[static_cast<size_t>(i)] + v;
        ++i;
    }
    return p_->data[static_cast<size_t>(off)];
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// --- Tape ---

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, std::function<void()> backward_fn) {
    out.impl()->tape = this;
    out.impl()->node_index = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{out, std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("backward: loss must be a scalar tensor");
    if (loss.impl()->tape != this)
        throw UsageError("backward: loss was not produced on this tape");
    // Fresh pass: intermediates restart at zero, leaves keep accumulating.
    for (const Node& n : nodes_) n.out.zero_grad();
    grad_buf(loss.impl())[0] = 1.0;
    for (int i = loss.impl()->node_index; i >= 0; --i) {
        if (nodes_[static_cast<size_t>(i)].out.impl()->grad.empty()) continue;
        nodes_[static_cast<size_t>(i)].fn();
    }
}

// --- kernels ---

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    Map(c, m, n).noalias() += CMap(a, m, k) * CMap(b, k, n);
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    Map(c, m, n).noalias() += CMap(a, m, k) * CMap(b, n, k).transpose();
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    Map(c, m, n).noalias() += CMap(a, k, m).transpose() * CMap(b, k, n);
}

void symmetric_gram(const double* q, double* s, int t, int dk, double scale) {
    for (int i = 0; i < t; ++i) {
        const double* qi = q + static_cast<size_t>(i) * dk;
        for (int j = 0; j <= i; ++j) {
            const double* qj = q + static_cast<size_t>(j) * dk;
            double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            int p = 0;
            for (; p + 8 <= dk; p += 8)
                for (int u = 0; u < 8; ++u) acc[u] += qi[p + u] * qj[p + u];
            for (; p < dk; ++p) acc[p & 7] += qi[p] * qj[p];
            const double dot = ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                               ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            const double v = dot * scale;
            s[static_cast<size_t>(i) * t + j] = v;
            s[static_cast<size_t>(j) * t + i] = v;
        }
    }
}

// --- matmul family ---

namespace {

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2)
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor c = Tensor::zeros({m, n});
    mm_nn(a.ptr(), b.ptr(), c.ptr(), m, k, n);
    maybe_record(c, a.requires_grad() || b.requires_grad(), [&] {
        return [a, b, c, m, k, n] {
            const double* dc = c.impl()->grad.data();
            if (a.requires_grad()) mm_nt(dc, b.ptr(), grad_buf(a.impl()).data(), m, n, k);
            if (b.requires_grad()) mm_tn(a.ptr(), dc, grad_buf(b.impl()).data(), k, m, n);
        };
    });
    return c;
}

Tensor scaled_matmul_nt(const Tensor& a, const Tensor& b, double s) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError("matmul_nt: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor c = Tensor::zeros({m, n});
    mm_nt(a.ptr(), b.ptr(), c.ptr(), m, k, n);
    if (s != 1.0) {
        double* cd = c.ptr();
        for (int64_t i = 0; i < c.size(); ++i) cd[i] *= s;
    }
    maybe_record(c, a.requires_grad() || b.requires_grad(), [&] {
        return [a, b, c, s, m, k, n] {
            // dA += s * dC B ; dB += s * dC^T A
            std::vector<double> dcs(c.impl()->grad);
            if (s != 1.0)
                for (double& v : dcs) v *= s;
            if (a.requires_grad()) mm_nn(dcs.data(), b.ptr(), grad_buf(a.impl()).data(), m, n, k);
            if (b.requires_grad()) mm_tn(dcs.data(), a.ptr(), grad_buf(b.impl()).data(), n, m, k);
        };
    });
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) { return scaled_matmul_nt(a, b, 1.0); }

Tensor symmetric_scores(const Tensor& q, double s) {
    require_matrix(q, "symmetric_scores");
    const int t = q.dim(0), dk = q.dim(1);
    Tensor c = Tensor::zeros({t, t});
    symmetric_gram(q.ptr(), c.ptr(), t, dk, s);
    maybe_record(c, q.requires_grad(), [&] {
        return [q, c, s, t, dk] {
            // dQ += s * (dS + dS^T) Q
            const std::vector<double>& ds = c.impl()->grad;
            std::vector<double> sym(static_cast<size_t>(t) * t);
            for (int i = 0; i < t; ++i)
                for (int j = 0; j < t; ++j)
                    sym[static_cast<size_t>(i) * t + j] =
                        s * (ds[static_cast<size_t>(i) * t + j] + ds[static_cast<size_t>(j) * t + i]);
            mm_nn(sym.data(), q.ptr(), grad_buf(q.impl()).data(), t, t, dk);
        };
    });
    return c;
}

// --- elementwise / broadcast ---

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = Tensor::zeros(a.shape());
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = pa[i] + pb[i];
    maybe_record(c, a.requires_grad() || b.requires_grad(), [&] {
        return [a, b, c] {
            const std::vector<double>& dc = c.impl()->grad;
            if (a.requires_grad()) {
                std::vector<double>& da = grad_buf(a.impl());
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& db = grad_buf(b.impl());
                for (size_t i = 0; i < dc.size(); ++i) db[i] += dc[i];
            }
        };
    });
    return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor c = Tensor::zeros(a.shape());
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = pa[i] - pb[i];
    maybe_record(c, a.requires_grad() || b.requires_grad(), [&] {
        return [a, b, c] {
            const std::vector<double>& dc = c.impl()->grad;
            if (a.requires_grad()) {
                std::vector<double>& da = grad_buf(a.impl());
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& db = grad_buf(b.impl());
                for (size_t i = 0; i < dc.size(); ++i) db[i] -= dc[i];
            }
        };
    });
    return c;
}

Tensor add_row_broadcast(const Tensor& a, const Tensor& b) {
    require_matrix(a, "add_row_broadcast");
    if (b.rank() != 1 || b.dim(0) != a.dim(1))
        throw ShapeError("add_row_broadcast: " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor c = Tensor::zeros(a.shape());
    const double* pa = a.ptr();
    const double* pb = b.ptr();
    double* pc = c.ptr();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) pc[static_cast<size_t>(i) * n + j] = pa[static_cast<size_t>(i) * n + j] + pb[j];
    maybe_record(c, a.requires_grad() || b.requires_grad(), [&] {
        return [a, b, c, m, n] {
            const std::vector<double>& dc = c.impl()->grad;
            if (a.requires_grad()) {
                std::vector<double>& da = grad_buf(a.impl());
                for (size_t i = 0; i < dc.size(); ++i) da[i] += dc[i];
            }
            if (b.requires_grad()) {
                std::vector<double>& db = grad_buf(b.impl());
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) db[static_cast<size_t>(j)] += dc[static_cast<size_t>(i) * n + j];
            }
        };
    });
    return c;
}

Tensor add_scalar_tensor(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("add_scalar_tensor: s must be [1], got " + shape_str(s.shape()));
    const double sv = s.data()[0];
    Tensor c = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = px[i] + sv;
    maybe_record(c, x.requires_grad() || s.requires_grad(), [&] {
        return [x, s, c] {
            const std::vector<double>& dc = c.impl()->grad;
            if (x.requires_grad()) {
                std::vector<double>& dx = grad_buf(x.impl());
                for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i];
            }
            if (s.requires_grad()) {
                double acc = 0.0;
                for (const double v : dc) acc += v;
                grad_buf(s.impl())[0] += acc;
            }
        };
    });
    return c;
}

Tensor mul_scalar_tensor(const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw ShapeError("mul_scalar_tensor: s must be [1], got " + shape_str(s.shape()));
    const double sv = s.data()[0];
    Tensor c = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = px[i] * sv;
    maybe_record(c, x.requires_grad() || s.requires_grad(), [&] {
        return [x, s, c, sv] {
            const std::vector<double>& dc = c.impl()->grad;
            if (x.requires_grad()) {
                std::vector<double>& dx = grad_buf(x.impl());
                for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * sv;
            }
            if (s.requires_grad()) {
                const double* px2 = x.ptr();
                double acc = 0.0;
                for (size_t i = 0; i < dc.size(); ++i) acc += dc[i] * px2[i];
                grad_buf(s.impl())[0] += acc;
            }
        };
    });
    return c;
}

Tensor scalar_mul(const Tensor& x, double cmul) {
    Tensor c = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = px[i] * cmul;
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c, cmul] {
            const std::vector<double>& dc = c.impl()->grad;
            std::vector<double>& dx = grad_buf(x.impl());
            for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * cmul;
        };
    });
    return c;
}

Tensor scalar_add(const Tensor& x, double cadd) {
    Tensor c = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = px[i] + cadd;
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c] {
            const std::vector<double>& dc = c.impl()->grad;
            std::vector<double>& dx = grad_buf(x.impl());
            for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i];
        };
    });
    return c;
}

Tensor square(const Tensor& x) {
    Tensor c = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = px[i] * px[i];
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c] {
            const std::vector<double>& dc = c.impl()->grad;
            const double* px2 = x.ptr();
            std::vector<double>& dx = grad_buf(x.impl());
            for (size_t i = 0; i < dc.size(); ++i) dx[i] += 2.0 * px2[i] * dc[i];
        };
    });
    return c;
}

Tensor exp_t(const Tensor& x) {
    Tensor c = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* pc = c.ptr();
    for (int64_t i = 0; i < c.size(); ++i) pc[i] = std::exp(px[i]);
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c] {
            const std::vector<double>& dc = c.impl()->grad;
            const double* pc2 = c.ptr();
            std::vector<double>& dx = grad_buf(x.impl());
            for (size_t i = 0; i < dc.size(); ++i) dx[i] += dc[i] * pc2[i];
        };
    });
    return c;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const double* px = x.ptr();
    for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
    Tensor c = Tensor::scalar(acc);
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c] {
            const double d = c.impl()->grad[0];
            std::vector<double>& dx = grad_buf(x.impl());
            for (double& v : dx) v += d;
        };
    });
    return c;
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double acc = 0.0;
    const double* px = x.ptr();
    for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
    Tensor c = Tensor::scalar(acc * inv);
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c, inv] {
            const double d = c.impl()->grad[0] * inv;
            std::vector<double>& dx = grad_buf(x.impl());
            for (double& v : dx) v += d;
        };
    });
    return c;
}

Tensor select(const Tensor& x, int i) {
    if (x.rank() != 1) throw ShapeError("select: expected a vector, got " + shape_str(x.shape()));
    if (i < 0 || i >= x.dim(0)) throw IndexError("select: index " + std::to_string(i) +
                                                 " out of range for " + shape_str(x.shape()));
    Tensor c = Tensor::scalar(x.data()[static_cast<size_t>(i)]);
    maybe_record(c, x.requires_grad(), [&] {
        return [x, c, i] { grad_buf(x.impl())[static_cast<size_t>(i)] += c.impl()->grad[0]; };
    });
    return c;
}

// --- softmax / activations / norm ---

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("softmax_rows: rank-0 input");
    const int n = x.dim(x.rank() - 1);
    const int64_t rows = x.size() / n;
    Tensor y = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* py = y.ptr();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * n;
        double* yr = py + r * n;
        double mx = kNegInf;
        for (int j = 0; j < n; ++j) {
            if (std::isnan(xr[j])) throw NumericError("softmax_rows: NaN in input row " + std::to_string(r));
            if (xr[j] > mx) mx = xr[j];
        }
        if (mx == kNegInf)
            throw DegenerateError("softmax_rows: row " + std::to_string(r) + " is fully masked");
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(xr[j] - mx);
            yr[j] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
    maybe_record(y, x.requires_grad(), [&] {
        return [x, y, rows, n] {
            const std::vector<double>& dy = y.impl()->grad;
            const double* py2 = y.ptr();
            std::vector<double>& dx = grad_buf(x.impl());
            for (int64_t r = 0; r < rows; ++r) {
                const double* yr = py2 + r * n;
                const double* dyr = dy.data() + r * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += dyr[j] * yr[j];
                double* dxr = dx.data() + r * n;
                for (int j = 0; j < n; ++j) dxr[j] += (dyr[j] - dot) * yr[j];
            }
        };
    });
    return y;
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    Tensor y = Tensor::zeros(x.shape());
    const double* px = x.ptr();
    double* py = y.ptr();
    for (int64_t i = 0; i < x.size(); ++i) {
        const double v = px[i];
        py[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
    }
    maybe_record(y, x.requires_grad(), [&] {
        return [x, y] {
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            const std::vector<double>& dy = y.impl()->grad;
            const double* px2 = x.ptr();
            std::vector<double>& dx = grad_buf(x.impl());
            for (size_t i = 0; i < dy.size(); ++i) {
                const double v = px2[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                dx[i] += dy[i] * (cdf + v * pdf);
            }
        };
    });
    return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_matrix(x, "layer_norm");
    const int rows = x.dim(0), h = x.dim(1);
    if (h == 0) throw ShapeError("layer_norm: zero feature dimension");
    if (gamma.rank() != 1 || gamma.dim(0) != h || beta.rank() != 1 || beta.dim(0) != h)
        throw ShapeError("layer_norm: affine shapes " + shape_str(gamma.shape()) + ", " +
                         shape_str(beta.shape()) + " do not match feature dim " + std::to_string(h));
    Tensor y = Tensor::zeros(x.shape());
    auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* px = x.ptr();
    const double* pg = gamma.ptr();
    const double* pb = beta.ptr();
    double* py = y.ptr();
    for (int r = 0; r < rows; ++r) {
        const double* xr = px + static_cast<size_t>(r) * h;
        double m = 0.0;
        for (int j = 0; j < h; ++j) m += xr[j];
        m /= h;
        double v = 0.0;
        for (int j = 0; j < h; ++j) {
            const double d = xr[j] - m;
            v += d * d;
        }
        v /= h;
        const double rs = 1.0 / std::sqrt(v + eps);
        (*mu)[static_cast<size_t>(r)] = m;
        (*rstd)[static_cast<size_t>(r)] = rs;
        double* yr = py + static_cast<size_t>(r) * h;
        for (int j = 0; j < h; ++j) yr[j] = (xr[j] - m) * rs * pg[j] + pb[j];
    }
    maybe_record(y, x.requires_grad() || gamma.requires_grad() || beta.requires_grad(), [&] {
        return [x, gamma, beta, y, mu, rstd, rows, h] {
            const std::vector<double>& dy = y.impl()->grad;
            const double* px2 = x.ptr();
            const double* pg2 = gamma.ptr();
            for (int r = 0; r < rows; ++r) {
                const double m = (*mu)[static_cast<size_t>(r)];
                const double rs = (*rstd)[static_cast<size_t>(r)];
                const double* xr = px2 + static_cast<size_t>(r) * h;
                const double* dyr = dy.data() + static_cast<size_t>(r) * h;
                if (gamma.requires_grad() || beta.requires_grad()) {
                    std::vector<double>& dg = grad_buf(gamma.impl());
                    std::vector<double>& db = grad_buf(beta.impl());
                    for (int j = 0; j < h; ++j) {
                        dg[static_cast<size_t>(j)] += dyr[j] * (xr[j] - m) * rs;
                        db[static_cast<size_t>(j)] += dyr[j];
                    }
                }
                if (x.requires_grad()) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < h; ++j) {
                        const double g = dyr[j] * pg2[j];
                        s1 += g;
                        s2 += g * (xr[j] - m) * rs;
                    }
                    s1 /= h;
                    s2 /= h;
                    std::vector<double>& dx = grad_buf(x.impl());
                    double* dxr = dx.data() + static_cast<size_t>(r) * h;
                    for (int j = 0; j < h; ++j) {
                        const double g = dyr[j] * pg2[j];
                        const double xhat = (xr[j] - m) * rs;
                        dxr[j] += (g - s1 - xhat * s2) * rs;
                    }
                }
            }
        };
    });
    return y;
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets) {
    require_matrix(logits, "cross_entropy_logits");
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t)
        throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(t) + " rows");
    for (int r = 0; r < t; ++r)
        if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= v)
            throw IndexError("cross_entropy_logits: target " +
                             std::to_string(targets[static_cast<size_t>(r)]) + " at position " +
                             std::to_string(r) + " outside vocab of " + std::to_string(v));
    auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(t) * v);
    const double* pz = logits.ptr();
    double loss = 0.0;
    for (int r = 0; r < t; ++r) {
        const double* zr = pz + static_cast<size_t>(r) * v;
        double mx = zr[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
        double s = 0.0;
        double* pr = probs->data() + static_cast<size_t>(r) * v;
        for (int j = 0; j < v; ++j) {
            const double e = std::exp(zr[j] - mx);
            pr[j] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < v; ++j) pr[j] *= inv;
        loss += std::log(s) + mx - zr[targets[static_cast<size_t>(r)]];
    }
    loss /= t;
    if (std::isnan(loss)) throw NumericError("cross_entropy_logits: NaN loss");
    Tensor c = Tensor::scalar(loss);
    std::vector<int> tgt(targets.begin(), targets.end());
    maybe_record(c, logits.requires_grad(), [&] {
        return [logits, c, probs, tgt, t, v] {
            const double d = c.impl()->grad[0] / t;
            std::vector<double>& dz = grad_buf(logits.impl());
            for (int r = 0; r < t; ++r) {
                const double* pr = probs->data() + static_cast<size_t>(r) * v;
                double* dzr = dz.data() + static_cast<size_t>(r) * v;
                for (int j = 0; j < v; ++j) dzr[j] += pr[j] * d;
                dzr[tgt[static_cast<size_t>(r)]] -= d;
            }
        };
    });
    return c;
}

// --- gather / layout ---

Tensor embedding(std::span<const int> ids, const Tensor& table) {
    require_matrix(table, "embedding");
    const int v = table.dim(0), h = table.dim(1);
    const int t = static_cast<int>(ids.size());
    if (t == 0) throw ShapeError("embedding: empty id list");
    for (const int id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding: token id " + std::to_string(id) + " outside vocab of " +
                             std::to_string(v));
    Tensor y = Tensor::zeros({t, h});
    const double* pt = table.ptr();
    double* py = y.ptr();
    for (int r = 0; r < t; ++r)
        std::copy_n(pt + static_cast<size_t>(ids[static_cast<size_t>(r)]) * h, h,
                    py + static_cast<size_t>(r) * h);
    std::vector<int> idv(ids.begin(), ids.end());
    maybe_record(y, table.requires_grad(), [&] {
        return [table, y, idv, h] {
            const std::vector<double>& dy = y.impl()->grad;
            std::vector<double>& dt = grad_buf(table.impl());
            for (size_t r = 0; r < idv.size(); ++r) {
                double* row = dt.data() + static_cast<size_t>(idv[r]) * h;
                const double* dyr = dy.data() + r * h;
                for (int j = 0; j < h; ++j) row[j] += dyr[j];
            }
        };
    });
    return y;
}

Tensor slice_rows(const Tensor& x, int r0, int r1) {
    require_matrix(x, "slice_rows");
    if (r0 < 0 || r1 > x.dim(0) || r0 >= r1)
        throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(x.shape()));
    const int n = x.dim(1), rows = r1 - r0;
    Tensor y = Tensor::zeros({rows, n});
    std::copy_n(x.ptr() + static_cast<size_t>(r0) * n, static_cast<size_t>(rows) * n, y.ptr());
    maybe_record(y, x.requires_grad(), [&] {
        return [x, y, r0, rows, n] {
            const std::vector<double>& dy = y.impl()->grad;
            std::vector<double>& dx = grad_buf(x.impl());
            double* base = dx.data() + static_cast<size_t>(r0) * n;
            for (size_t i = 0; i < static_cast<size_t>(rows) * n; ++i) base[i] += dy[i];
        };
    });
    return y;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
    require_matrix(x, "slice_cols");
    if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1), w = c1 - c0;
    Tensor y = Tensor::zeros({m, w});
    const double* px = x.ptr();
    double* py = y.ptr();
    for (int i = 0; i < m; ++i)
        std::copy_n(px + static_cast<size_t>(i) * n + c0, w, py + static_cast<size_t>(i) * w);
    maybe_record(y, x.requires_grad(), [&] {
        return [x, y, c0, m, n, w] {
            const std::vector<double>& dy = y.impl()->grad;
            std::vector<double>& dx = grad_buf(x.impl());
            for (int i = 0; i < m; ++i) {
                double* dst = dx.data() + static_cast<size_t>(i) * n + c0;
                const double* src = dy.data() + static_cast<size_t>(i) * w;
                for (int j = 0; j < w; ++j) dst[j] += src[j];
            }
        };
    });
    return y;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int m = parts[0].dim(0);
    int n = 0;
    bool any_grad = false;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(0) != m)
            throw ShapeError("concat_cols: row counts differ: " + shape_str(p.shape()));
        n += p.dim(1);
        any_grad = any_grad || p.requires_grad();
    }
    Tensor y = Tensor::zeros({m, n});
    double* py = y.ptr();
    int off = 0;
    for (const Tensor& p : parts) {
        const int w = p.dim(1);
        const double* pp = p.ptr();
        for (int i = 0; i < m; ++i)
            std::copy_n(pp + static_cast<size_t>(i) * w, w, py + static_cast<size_t>(i) * n + off);
        off += w;
    }
    maybe_record(y, any_grad, [&] {
        return [parts, y, m, n] {
            const std::vector<double>& dy = y.impl()->grad;
            int off2 = 0;
            for (const Tensor& p : parts) {
                const int w = p.dim(1);
                if (p.requires_grad()) {
                    std::vector<double>& dp = grad_buf(p.impl());
                    for (int i = 0; i < m; ++i) {
                        const double* src = dy.data() + static_cast<size_t>(i) * n + off2;
                        double* dst = dp.data() + static_cast<size_t>(i) * w;
                        for (int j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                off2 += w;
            }
        };
    });
    return y;
}

Tensor apply_causal_mask(const Tensor& scores) {
    require_matrix(scores, "apply_causal_mask");
    if (scores.dim(0) != scores.dim(1))
        throw ShapeError("apply_causal_mask: scores must be square, got " + shape_str(scores.shape()));
    const int t = scores.dim(0);
    Tensor y = Tensor::zeros(scores.shape());
    const double* px = scores.ptr();
    double* py = y.ptr();
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j <= i; ++j) py[static_cast<size_t>(i) * t + j] = px[static_cast<size_t>(i) * t + j];
        for (int j = i + 1; j < t; ++j) py[static_cast<size_t>(i) * t + j] = kNegInf;
    }
    maybe_record(y, scores.requires_grad(), [&] {
        return [scores, y, t] {
            const std::vector<double>& dy = y.impl()->grad;
            std::vector<double>& dx = grad_buf(scores.impl());
            for (int i = 0; i < t; ++i)
                for (int j = 0; j <= i; ++j)
                    dx[static_cast<size_t>(i) * t + j] += dy[static_cast<size_t>(i) * t + j];
        };
    });
    return y;
}

} // namespace attnlab
