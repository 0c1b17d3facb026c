#include "attnlab/estimator.hpp"

#include <cmath>
#include <cstdio>

#include "attnlab/errors.hpp"

namespace attnlab {

namespace {

// Scores through the same kernel for both weight pairs: s = (X A)(X B)^T / sqrt(d_k).
std::vector<double> score_matrix(const Tensor& x, const Tensor& a, const Tensor& b, int d_k) {
    const int t = x.dim(0);
    const int h = x.dim(1);
    const int p = a.dim(1);
    std::vector<double> xa(static_cast<size_t>(t) * p, 0.0);
    std::vector<double> xb(static_cast<size_t>(t) * p, 0.0);
    mm_nn(x.ptr(), a.ptr(), xa.data(), t, h, p);
    mm_nn(x.ptr(), b.ptr(), xb.data(), t, h, p);
    std::vector<double> s(static_cast<size_t>(t) * t, 0.0);
    mm_nt(xa.data(), xb.data(), s.data(), t, p, t);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
    for (double& v : s) v *= scale;
    return s;
}

void check_proj(const Tensor& x, const Tensor& w, const char* which) {
    if (w.rank() != 2 || w.dim(0) != x.dim(1))
        throw ShapeError(std::string("projection ") + which + " of shape " + shape_str(w.shape()) +
                         " does not accept inputs of shape " + shape_str(x.shape()));
}

} // namespace

ResidualSet residual_scores(const Tensor& x, const Tensor& w_q, const Tensor& w_k, int d_k,
                            bool full_matrix) {
    if (x.rank() != 2) throw ShapeError("inputs must be [T, H], got " + shape_str(x.shape()));
    check_proj(x, w_q, "w_q");
    check_proj(x, w_k, "w_k");
    if (w_q.dim(1) != w_k.dim(1))
        throw ShapeError("w_q " + shape_str(w_q.shape()) + " and w_k " + shape_str(w_k.shape()) +
                         " disagree on head width");
    if (d_k < 1) throw UsageError("d_k must be >= 1");
    const int t = x.dim(0);
    const std::vector<double> generic = score_matrix(x, w_q, w_k, d_k);
    const std::vector<double> shared = score_matrix(x, w_q, w_q, d_k);
    ResidualSet rs;
    rs.t = t;
    rs.h = x.dim(1);
    rs.full_matrix = full_matrix;
    rs.samples.reserve(full_matrix ? static_cast<size_t>(t) * t
                                   : static_cast<size_t>(t) * (t + 1) / 2);
    for (int i = 0; i < t; ++i) {
        const int jmax = full_matrix ? t : i + 1;
        for (int j = 0; j < jmax; ++j)
            rs.samples.push_back(generic[static_cast<size_t>(i) * t + j] -
                                 shared[static_cast<size_t>(i) * t + j]);
    }
    return rs;
}

ResidualSet score_entries(const Tensor& x, const Tensor& w_a, const Tensor& w_b, int d_k,
                          bool full_matrix) {
    if (x.rank() != 2) throw ShapeError("inputs must be [T, H], got " + shape_str(x.shape()));
    check_proj(x, w_a, "w_a");
    check_proj(x, w_b, "w_b");
    if (w_a.dim(1) != w_b.dim(1))
        throw ShapeError("w_a " + shape_str(w_a.shape()) + " and w_b " + shape_str(w_b.shape()) +
                         " disagree on head width");
    if (d_k < 1) throw UsageError("d_k must be >= 1");
    const int t = x.dim(0);
    const std::vector<double> s = score_matrix(x, w_a, w_b, d_k);
    ResidualSet rs;
    rs.t = t;
    rs.h = x.dim(1);
    rs.full_matrix = full_matrix;
    for (int i = 0; i < t; ++i) {
        const int jmax = full_matrix ? t : i + 1;
        for (int j = 0; j < jmax; ++j) rs.samples.push_back(s[static_cast<size_t>(i) * t + j]);
    }
    return rs;
}

void append_residuals(ResidualSet& into, const ResidualSet& more) {
    if (into.samples.empty()) {
        into = more;
        return;
    }
    if (into.full_matrix != more.full_matrix)
        throw UsageError("cannot pool causal-region residuals with full-matrix residuals");
    into.samples.insert(into.samples.end(), more.samples.begin(), more.samples.end());
}

GaussianStats fit_gaussian_mle(const ResidualSet& rs) {
    const size_t n = rs.samples.size();
    if (n < 2)
        throw InsufficientDataError("Gaussian fit needs at least 2 samples (got " +
                                    std::to_string(n) + ")");
    double mean = 0.0;
    for (const double v : rs.samples) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const double v : rs.samples) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    return GaussianStats{mean, var};
}

double mmse_estimate(double y, const GaussianStats& prior, const GaussianStats& noise) {
    if (prior.var < 0.0 || noise.var < 0.0) throw UsageError("variances must be >= 0");
    const double total = prior.var + noise.var;
    if (total == 0.0)
        throw DegenerateError("prior and noise variance are both zero; the observation model is "
                              "deterministic and the posterior is a point mass");
    return prior.mean + prior.var / total * (y - noise.mean - prior.mean);
}

double map_estimate(double y, const GaussianStats& prior, const GaussianStats& noise) {
    if (prior.var < 0.0 || noise.var < 0.0) throw UsageError("variances must be >= 0");
    const double total = prior.var + noise.var;
    if (total == 0.0)
        throw DegenerateError("prior and noise variance are both zero; the observation model is "
                              "deterministic and the posterior is a point mass");
    return (noise.var * prior.mean + prior.var * (y - noise.mean)) / total;
}

EstimatorSim simulate_estimator(const GaussianStats& prior, const GaussianStats& noise,
                                long long n, Rng& rng) {
    if (n < 1) throw UsageError("simulation needs at least 1 pair");
    const double sd_p = std::sqrt(prior.var);
    const double sd_n = std::sqrt(noise.var);
    EstimatorSim sim;
    sim.pairs = n;
    const double inv = 1.0 / static_cast<double>(n);
    for (long long i = 0; i < n; ++i) {
        const double s = prior.mean + sd_p * rng.normal();
        const double y = s + noise.mean + sd_n * rng.normal();
        const double e_mmse = mmse_estimate(y, prior, noise) - s;
        const double e_map = map_estimate(y, prior, noise) - s;
        const double e_naive = y - s;
        const double e_prior = prior.mean - s;
        sim.mse_mmse += e_mmse * e_mmse * inv;
        sim.mse_map += e_map * e_map * inv;
        sim.mse_naive += e_naive * e_naive * inv;
        sim.mse_prior_mean += e_prior * e_prior * inv;
    }
    sim.posterior_var = prior.var * noise.var / (prior.var + noise.var);
    return sim;
}

std::string estimator_report(const GaussianStats& prior, const GaussianStats& noise_fit,
                             const EstimatorSim& sim, long long residual_count) {
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "[estimator]\n"
                  "residual_samples = %lld\n"
                  "prior.mean = %.12g\n"
                  "prior.var = %.12g\n"
                  "noise.mean = %.12g\n"
                  "noise.var = %.12g\n"
                  "pairs = %lld\n"
                  "mse.mmse = %.12g\n"
                  "mse.map = %.12g\n"
                  "mse.naive = %.12g\n"
                  "mse.prior_mean = %.12g\n"
                  "posterior_var.analytic = %.12g\n",
                  residual_count, prior.mean, prior.var, noise_fit.mean, noise_fit.var, sim.pairs,
                  sim.mse_mmse, sim.mse_map, sim.mse_naive, sim.mse_prior_mean,
                  sim.posterior_var);
    return buf;
}

} // namespace attnlab
