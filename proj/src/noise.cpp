#include "attnlab/noise.hpp"

#include <cmath>

#include "attnlab/errors.hpp"

namespace attnlab {

namespace {

void check_params(const LayerNoiseParams& params, int n_head) {
    if (!params.defined()) throw UsageError("noise: layer has no noise parameters");
    if (params.mu.shape() != params.log_var.shape())
        throw ShapeError("noise: mu " + shape_str(params.mu.shape()) + " vs log_var " +
                         shape_str(params.log_var.shape()));
    const int e = params.entries();
    if (e != 1 && e != n_head)
        throw ShapeError("noise: " + std::to_string(e) + " entries for " + std::to_string(n_head) +
                         " heads");
}

// values[k] = mu_k + exp(log_var_k / 2) * eps_k, built through tape ops so
// gradients reach mu and log_var whenever a tape is active.
Tensor build_value(const LayerNoiseParams& params, int k, Tensor eps) {
    const Tensor mu_k = select(params.mu, k);
    const Tensor sigma_k = exp_t(scalar_mul(select(params.log_var, k), 0.5));
    return add_scalar_tensor(mul_scalar_tensor(eps, sigma_k), mu_k);
}

} // namespace

NoiseDraw sample_noise(const LayerNoiseParams& params, int n_head, int t_len, Rng& rng) {
    if (t_len < 1) throw UsageError("sample_noise: t_len must be >= 1");
    check_params(params, n_head);
    NoiseDraw draw;
    draw.shared = params.entries() == 1;
    const int count = draw.shared ? 1 : n_head;
    const size_t tt = static_cast<size_t>(t_len) * t_len;
    for (int k = 0; k < count; ++k) {
        std::vector<double> e(tt);
        for (double& v : e) v = rng.normal();
        draw.values.push_back(build_value(params, k, Tensor::from_data({t_len, t_len}, std::move(e))));
    }
    return draw;
}

NoiseDraw noise_from_eps(const LayerNoiseParams& params, int n_head, int t_len,
                         const std::vector<std::vector<double>>& eps, int eps_dim) {
    if (t_len < 1 || t_len > eps_dim)
        throw UsageError("noise_from_eps: t_len " + std::to_string(t_len) +
                         " outside stored eps of " + std::to_string(eps_dim));
    check_params(params, n_head);
    NoiseDraw draw;
    draw.shared = params.entries() == 1;
    const int count = draw.shared ? 1 : n_head;
    if (static_cast<int>(eps.size()) != count)
        throw ShapeError("noise_from_eps: " + std::to_string(eps.size()) + " eps buffers for " +
                         std::to_string(count) + " distributions");
    for (int k = 0; k < count; ++k) {
        std::vector<double> e(static_cast<size_t>(t_len) * t_len);
        for (int i = 0; i < t_len; ++i)
            std::copy_n(eps[static_cast<size_t>(k)].begin() + static_cast<size_t>(i) * eps_dim,
                        t_len, e.begin() + static_cast<size_t>(i) * t_len);
        draw.values.push_back(build_value(params, k, Tensor::from_data({t_len, t_len}, std::move(e))));
    }
    return draw;
}

Tensor kl_unit_gaussian(const LayerNoiseParams& params) {
    if (!params.defined()) throw UsageError("kl_unit_gaussian: undefined noise parameters");
    const int k = params.entries();
    // 0.5 * sum(mu^2 + exp(log_var) - log_var - 1); note log sigma^2 == log_var.
    const Tensor terms = sub(add(sum(square(params.mu)), sum(exp_t(params.log_var))),
                             sum(params.log_var));
    return scalar_mul(scalar_add(terms, -static_cast<double>(k)), 0.5);
}

Tensor global_kl(const std::vector<LayerNoiseParams>& layers) {
    Tensor acc;
    for (const LayerNoiseParams& l : layers) {
        const Tensor kl = kl_unit_gaussian(l);
        acc = acc.defined() ? add(acc, kl) : kl;
    }
    return acc.defined() ? acc : Tensor::scalar(0.0);
}

double kl_unit_gaussian_value(const LayerNoiseParams& params) {
    if (!params.defined()) return 0.0;
    const std::vector<double>& mu = params.mu.data();
    const std::vector<double>& lv = params.log_var.data();
    double acc = 0.0;
    for (size_t i = 0; i < mu.size(); ++i)
        acc += 0.5 * (mu[i] * mu[i] + std::exp(lv[i]) - lv[i] - 1.0);
    return acc;
}

} // namespace attnlab
