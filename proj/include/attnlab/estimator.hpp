#pragma once

#include <string>
#include <vector>

#include "attnlab/rng.hpp"
#include "attnlab/tensor.hpp"

namespace attnlab {

// Scalar Gaussian fit used for score priors and residual noise.
struct GaussianStats {
    double mean = 0.0;
    double var = 0.0;
};

// Flattened residual score entries plus where they came from.
struct ResidualSet {
    std::vector<double> samples;
    int t = 0;
    int h = 0;
    bool full_matrix = false;
};

// Entries of (X Wq (X Wk)^T - X Wq (X Wq)^T) / sqrt(d_k): the gap between
// generic and weight-shared scores. Both matrices go through the same score
// kernel, so tied weights give exact zeros. By default only the causal
// region (column <= row) is collected; full_matrix keeps everything.
ResidualSet residual_scores(const Tensor& x, const Tensor& w_q, const Tensor& w_k, int d_k,
                            bool full_matrix = false);
// Pool another residual set into `into` (same full_matrix mode).
void append_residuals(ResidualSet& into, const ResidualSet& more);

// Flattened entries of (X W_a)(X W_b)^T / sqrt(d_k) over the same region
// residual_scores uses. With w_b == w_a this is the weight-shared score
// population the prior is fitted on.
ResidualSet score_entries(const Tensor& x, const Tensor& w_a, const Tensor& w_b, int d_k,
                          bool full_matrix = false);

// Gaussian MLE: sample mean and biased (1/n) variance. Needs >= 2 samples.
GaussianStats fit_gaussian_mle(const ResidualSet& rs);

// Model: observed Y = S + noise, S ~ prior. Posterior mean of S given Y:
//   prior.mean + prior.var / (prior.var + noise.var) * (y - noise.mean - prior.mean)
double mmse_estimate(double y, const GaussianStats& prior, const GaussianStats& noise);
// Posterior mode, computed as (noise.var * prior.mean + prior.var * (y - noise.mean))
// / (prior.var + noise.var). Coincides with the posterior mean for Gaussians.
double map_estimate(double y, const GaussianStats& prior, const GaussianStats& noise);

struct EstimatorSim {
    long long pairs = 0;
    double mse_mmse = 0.0;
    double mse_map = 0.0;
    double mse_naive = 0.0;      // estimate S by Y itself
    double mse_prior_mean = 0.0; // estimate S by prior.mean
    double posterior_var = 0.0;  // analytic prior.var*noise.var/(prior.var+noise.var)
};

// Draw n (S, Y) pairs from the model above and score the estimators.
EstimatorSim simulate_estimator(const GaussianStats& prior, const GaussianStats& noise, long long n,
                                Rng& rng);

// Deterministic structured text block for the report file / stdout.
std::string estimator_report(const GaussianStats& prior, const GaussianStats& noise_fit,
                             const EstimatorSim& sim, long long residual_count);

} // namespace attnlab
