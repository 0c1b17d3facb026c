#pragma once

#include <vector>

#include "attnlab/rng.hpp"
#include "attnlab/tensor.hpp"

namespace attnlab {

// Trainable Gaussian noise for one layer: shape [1] when every head shares a
// distribution, [N] when each head owns one. Variance is carried as log(s^2)
// so positivity holds for any parameter value.
struct LayerNoiseParams {
    Tensor mu;
    Tensor log_var;
    bool defined() const { return mu.defined(); }
    int entries() const { return static_cast<int>(mu.size()); }
};

// One reparameterized draw: values[j] = mu_j + exp(log_var_j / 2) * eps_j,
// differentiable in mu and log_var, with eps standard normal and constant.
// shared=true means values holds a single [T,T] tensor applied to every
// head; otherwise values holds one [T,T] tensor per head.
struct NoiseDraw {
    std::vector<Tensor> values;
    bool shared = false;
    const Tensor& for_head(int j) const { return shared ? values[0] : values[static_cast<size_t>(j)]; }
};

// Fresh eps from rng. Draws t_len*t_len normals for the shared case, or
// n_head blocks of t_len*t_len (head-major) for the per-head case.
NoiseDraw sample_noise(const LayerNoiseParams& params, int n_head, int t_len, Rng& rng);

// Rebuild a draw from stored eps, reading the top-left t_len x t_len block
// of each eps_dim x eps_dim buffer. Used by frozen-noise generation; the
// result is still differentiable in mu / log_var.
NoiseDraw noise_from_eps(const LayerNoiseParams& params, int n_head, int t_len,
                         const std::vector<std::vector<double>>& eps, int eps_dim);

// 0.5 * sum_k(mu_k^2 + s_k^2 - log s_k^2 - 1), the divergence of each entry
// from the unit Gaussian; nonnegative, zero iff mu=0 and s^2=1.
Tensor kl_unit_gaussian(const LayerNoiseParams& params);
Tensor global_kl(const std::vector<LayerNoiseParams>& layers);

// Tape-free value for logging.
double kl_unit_gaussian_value(const LayerNoiseParams& params);

} // namespace attnlab
