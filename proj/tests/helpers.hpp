#pragma once

// Shared oracles for the unit suites. Everything here is deliberately
// independent of the library kernels: plain loops, no Eigen, no tape.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "attnlab/rng.hpp"
#include "attnlab/tensor.hpp"

namespace testutil {

// C[m,n] = A[m,k] * B[k,n], naive triple loop.
inline std::vector<double> matmul_oracle(const std::vector<double>& a,
                                         const std::vector<double>& b, int m, int k, int n) {
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p)
                s += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] = s;
        }
    return c;
}

inline void fill_normal(attnlab::Tensor& t, attnlab::Rng& rng, double scale = 1.0) {
    for (double& v : t.data()) v = scale * rng.normal();
}

struct FdResult {
    double worst_rel = 0.0;
    std::string worst_at;
    int checked = 0;
};

// Central finite differences over every entry of every parameter, compared
// against the grads already present on the tensors. Relative error uses
// |analytic - fd| / max(1, |analytic|).
inline FdResult fd_compare(const std::vector<attnlab::Tensor>& params,
                           const std::function<double()>& value_fn, double h = 1e-5) {
    FdResult r;
    for (const attnlab::Tensor& p : params) {
        const std::vector<double>& g = p.grad();
        std::vector<double>& d = const_cast<attnlab::Tensor&>(p).data();
        for (size_t i = 0; i < d.size(); ++i) {
            const double saved = d[i];
            d[i] = saved + h;
            const double up = value_fn();
            d[i] = saved - h;
            const double down = value_fn();
            d[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double rel = std::fabs(g[i] - fd) / std::max(1.0, std::fabs(g[i]));
            ++r.checked;
            if (rel > r.worst_rel) {
                r.worst_rel = rel;
                r.worst_at = p.name().empty() ? "<unnamed>" : p.name();
                r.worst_at += "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

} // namespace testutil
