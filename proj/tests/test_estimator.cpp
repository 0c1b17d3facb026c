#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "attnlab/errors.hpp"
#include "attnlab/estimator.hpp"
#include "attnlab/rng.hpp"
#include "attnlab/tensor.hpp"
#include "helpers.hpp"

using namespace attnlab;
using testutil::fill_normal;

namespace {

ResidualSet from_samples(std::vector<double> v) {
    ResidualSet rs;
    rs.samples = std::move(v);
    return rs;
}

} // namespace

TEST_SUITE("estimator") {

TEST_CASE("tied weights produce exactly zero residuals") {
    const int t = 12, h = 8, p = 6;
    Rng rng(3);
    Tensor x = Tensor::zeros({t, h});
    Tensor w = Tensor::zeros({h, p});
    fill_normal(x, rng);
    fill_normal(w, rng);

    const ResidualSet causal = residual_scores(x, w, w, p);
    CHECK(causal.t == t);
    CHECK(causal.h == h);
    CHECK_FALSE(causal.full_matrix);
    REQUIRE(causal.samples.size() == static_cast<size_t>(t) * (t + 1) / 2);
    for (double v : causal.samples) CHECK(v == 0.0);

    const ResidualSet full = residual_scores(x, w, w, p, true);
    CHECK(full.full_matrix);
    REQUIRE(full.samples.size() == static_cast<size_t>(t) * t);
    for (double v : full.samples) CHECK(v == 0.0);

    const GaussianStats fit = fit_gaussian_mle(full);
    CHECK(fit.mean == 0.0);
    CHECK(fit.var == 0.0);
}

TEST_CASE("residuals are the gap between the two score paths") {
    const int t = 7, h = 10, p = 4;
    Rng rng(5);
    Tensor x = Tensor::zeros({t, h});
    Tensor wq = Tensor::zeros({h, p});
    Tensor wk = Tensor::zeros({h, p});
    fill_normal(x, rng);
    fill_normal(wq, rng);
    fill_normal(wk, rng);

    const ResidualSet rs = residual_scores(x, wq, wk, p);
    const ResidualSet generic = score_entries(x, wq, wk, p);
    const ResidualSet shared = score_entries(x, wq, wq, p);
    REQUIRE(rs.samples.size() == generic.samples.size());
    REQUIRE(rs.samples.size() == shared.samples.size());
    for (size_t i = 0; i < rs.samples.size(); ++i)
        CHECK(rs.samples[i] == generic.samples[i] - shared.samples[i]);

    // loop oracle for the generic path
    const std::vector<double> xq = testutil::matmul_oracle(x.data(), wq.data(), t, h, p);
    const std::vector<double> xk = testutil::matmul_oracle(x.data(), wk.data(), t, h, p);
    const double scale = 1.0 / std::sqrt(static_cast<double>(p));
    size_t idx = 0;
    for (int i = 0; i < t; ++i)
        for (int j = 0; j <= i; ++j, ++idx) {
            double dot = 0.0;
            for (int c = 0; c < p; ++c)
                dot += xq[static_cast<size_t>(i) * p + c] * xk[static_cast<size_t>(j) * p + c];
            CHECK(generic.samples[idx] == doctest::Approx(dot * scale).epsilon(1e-12));
        }
}

TEST_CASE("the causal region is the lower triangle in row-major order") {
    const int t = 5, h = 6, p = 3;
    Rng rng(7);
    Tensor x = Tensor::zeros({t, h});
    Tensor wq = Tensor::zeros({h, p});
    Tensor wk = Tensor::zeros({h, p});
    fill_normal(x, rng);
    fill_normal(wq, rng);
    fill_normal(wk, rng);

    const ResidualSet causal = residual_scores(x, wq, wk, p);
    const ResidualSet full = residual_scores(x, wq, wk, p, true);
    size_t idx = 0;
    for (int i = 0; i < t; ++i)
        for (int j = 0; j <= i; ++j, ++idx)
            CHECK(causal.samples[idx] == full.samples[static_cast<size_t>(i) * t + j]);
    CHECK(idx == causal.samples.size());
}

TEST_CASE("a one-by-one case pins the residual sign convention") {
    // x = [1, 2], wq = [1, 0]^T, wk = [0, 1]^T, d_k = 1:
    //   q = 1, k = 2, generic = qk = 2, shared = q^2 = 1, residual = +1
    const Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
    const Tensor wq = Tensor::from_data({2, 1}, {1.0, 0.0});
    const Tensor wk = Tensor::from_data({2, 1}, {0.0, 1.0});
    const ResidualSet rs = residual_scores(x, wq, wk, 1);
    REQUIRE(rs.samples.size() == 1);
    CHECK(rs.samples[0] == 1.0);

    // swapping the roles negates the generic part only
    const ResidualSet swapped = residual_scores(x, wk, wq, 1);
    REQUIRE(swapped.samples.size() == 1);
    // generic is symmetric in (q, k); shared becomes k^2 = 4
    CHECK(swapped.samples[0] == 2.0 - 4.0);
}

TEST_CASE("input validation names the offending shapes") {
    Rng rng(9);
    Tensor x = Tensor::zeros({4, 6});
    Tensor w = Tensor::zeros({6, 3});
    Tensor bad_rows = Tensor::zeros({5, 3});
    Tensor bad_cols = Tensor::zeros({6, 2});
    fill_normal(x, rng);
    fill_normal(w, rng);
    CHECK_THROWS_AS(residual_scores(Tensor::zeros({4}), w, w, 3), ShapeError);
    CHECK_THROWS_AS(residual_scores(x, bad_rows, w, 3), ShapeError);
    CHECK_THROWS_AS(residual_scores(x, w, bad_rows, 3), ShapeError);
    CHECK_THROWS_AS(residual_scores(x, w, bad_cols, 3), ShapeError);
    CHECK_THROWS_AS(residual_scores(x, w, w, 0), UsageError);
    CHECK_THROWS_AS(score_entries(x, w, bad_cols, 3), ShapeError);
    CHECK_THROWS_AS(score_entries(x, w, w, -1), UsageError);
}

TEST_CASE("pooling concatenates sample sets of the same mode") {
    const int h = 4, p = 2;
    Rng rng(11);
    Tensor w = Tensor::zeros({h, p});
    fill_normal(w, rng);
    Tensor x1 = Tensor::zeros({3, h});
    Tensor x2 = Tensor::zeros({5, h});
    fill_normal(x1, rng);
    fill_normal(x2, rng);
    Tensor wk = Tensor::zeros({h, p});
    fill_normal(wk, rng);

    const ResidualSet a = residual_scores(x1, w, wk, p);
    const ResidualSet b = residual_scores(x2, w, wk, p);
    ResidualSet pooled;
    append_residuals(pooled, a);
    append_residuals(pooled, b);
    REQUIRE(pooled.samples.size() == a.samples.size() + b.samples.size());
    std::vector<double> glued = a.samples;
    glued.insert(glued.end(), b.samples.begin(), b.samples.end());
    CHECK(pooled.samples == glued);

    const ResidualSet full = residual_scores(x1, w, wk, p, true);
    CHECK_THROWS_AS(append_residuals(pooled, full), UsageError);
}

TEST_CASE("gaussian fit is the sample mean and biased variance") {
    const GaussianStats s = fit_gaussian_mle(from_samples({1.0, 2.0, 3.0, 4.0}));
    CHECK(s.mean == 2.5);
    CHECK(s.var == 1.25);

    CHECK_THROWS_AS(fit_gaussian_mle(from_samples({})), InsufficientDataError);
    CHECK_THROWS_AS(fit_gaussian_mle(from_samples({5.0})), InsufficientDataError);

    // shifting every sample shifts the mean and leaves the variance alone
    const GaussianStats shifted = fit_gaussian_mle(from_samples({4.0, 5.0, 6.0, 7.0}));
    CHECK(shifted.mean == doctest::Approx(s.mean + 3.0).epsilon(1e-15));
    CHECK(shifted.var == doctest::Approx(s.var).epsilon(1e-12));
}

TEST_CASE("gaussian fit recovers the generating distribution") {
    Rng rng(13);
    ResidualSet rs;
    const double mu = -0.4, sd = 1.7;
    rs.samples.resize(400000);
    for (double& v : rs.samples) v = mu + sd * rng.normal();
    const GaussianStats fit = fit_gaussian_mle(rs);
    CHECK(std::fabs(fit.mean - mu) < 0.01);
    CHECK(std::fabs(fit.var / (sd * sd) - 1.0) < 0.01);
}

TEST_CASE("posterior mean interpolates between observation and prior") {
    const GaussianStats prior{1.0, 2.0};
    const GaussianStats noise{0.5, 2.0};
    // equal variances: halfway between prior mean and the debiased observation
    const double y = 4.0;
    CHECK(mmse_estimate(y, prior, noise) ==
          doctest::Approx(1.0 + 0.5 * (4.0 - 0.5 - 1.0)).epsilon(1e-15));

    // zero noise variance: trust the (debiased) observation completely
    CHECK(mmse_estimate(y, prior, GaussianStats{0.5, 0.0}) ==
          doctest::Approx(y - 0.5).epsilon(1e-12));
    // zero prior variance: the prior mean is the answer, exactly
    CHECK(mmse_estimate(y, GaussianStats{1.0, 0.0}, noise) == 1.0);

    // affine in y with slope prior.var / (prior.var + noise.var)
    const double slope = (mmse_estimate(3.0, prior, noise) - mmse_estimate(1.0, prior, noise)) /
                         2.0;
    CHECK(slope == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(mmse_estimate(y, GaussianStats{0.0, -1.0}, noise), UsageError);
    CHECK_THROWS_AS(mmse_estimate(y, prior, GaussianStats{0.0, -1.0}), UsageError);
    CHECK_THROWS_AS(mmse_estimate(y, GaussianStats{0.0, 0.0}, GaussianStats{0.0, 0.0}),
                    DegenerateError);
    CHECK_THROWS_AS(map_estimate(y, GaussianStats{0.0, 0.0}, GaussianStats{0.0, 0.0}),
                    DegenerateError);
}

TEST_CASE("posterior mode equals the posterior mean for gaussians") {
    CHECK(map_estimate(2.0, GaussianStats{0.0, 1.0}, GaussianStats{0.0, 1.0}) == 1.0);
    Rng rng(15);
    for (int i = 0; i < 200; ++i) {
        const GaussianStats prior{rng.normal(), std::exp(rng.normal())};
        const GaussianStats noise{rng.normal(), std::exp(rng.normal())};
        const double y = 3.0 * rng.normal();
        const double mean = mmse_estimate(y, prior, noise);
        const double mode = map_estimate(y, prior, noise);
        CHECK(mode == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("the closed-form mode maximizes the posterior density on a grid") {
    const GaussianStats prior{0.7, 1.3};
    const GaussianStats noise{-0.2, 0.6};
    const double y = 1.9;
    const double map = map_estimate(y, prior, noise);

    const auto log_post = [&](double s) {
        const double r = y - noise.mean - s;
        const double d = s - prior.mean;
        return -r * r / (2.0 * noise.var) - d * d / (2.0 * prior.var);
    };
    double best_s = -10.0, best_v = log_post(-10.0);
    for (double s = -10.0; s <= 10.0; s += 1e-4) {
        const double v = log_post(s);
        if (v > best_v) {
            best_v = v;
            best_s = s;
        }
    }
    CHECK(std::fabs(best_s - map) < 2e-4);
}

TEST_CASE("simulation ranks the estimators and matches the analytic risk") {
    const GaussianStats prior{0.3, 2.0};
    const GaussianStats noise{-0.1, 1.0};
    Rng rng(17);
    const EstimatorSim sim = simulate_estimator(prior, noise, 200000, rng);
    CHECK(sim.pairs == 200000);
    CHECK(sim.posterior_var == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(sim.mse_mmse == doctest::Approx(sim.posterior_var).epsilon(0.02));
    CHECK(sim.mse_naive == doctest::Approx(noise.var).epsilon(0.02));
    CHECK(sim.mse_prior_mean == doctest::Approx(prior.var).epsilon(0.02));
    CHECK(sim.mse_map == doctest::Approx(sim.mse_mmse).epsilon(1e-9));
    CHECK(sim.mse_mmse < sim.mse_naive);
    CHECK(sim.mse_mmse < sim.mse_prior_mean);

    Rng again(17);
    const EstimatorSim rep = simulate_estimator(prior, noise, 200000, again);
    CHECK(rep.mse_mmse == sim.mse_mmse);
    CHECK(rep.mse_naive == sim.mse_naive);

    Rng r3(18);
    CHECK_THROWS_AS(simulate_estimator(prior, noise, 0, r3), UsageError);
}

TEST_CASE("the report is a frozen key-value block") {
    const GaussianStats prior{0.5, 1.25};
    const GaussianStats noise{-0.25, 2.0};
    EstimatorSim sim;
    sim.pairs = 3;
    sim.mse_mmse = 0.1;
    sim.mse_map = 0.1;
    sim.mse_naive = 2.0;
    sim.mse_prior_mean = 1.25;
    sim.posterior_var = 0.625;
    const std::string expect = "[estimator]\n"
                               "residual_samples = 10\n"
                               "prior.mean = 0.5\n"
                               "prior.var = 1.25\n"
                               "noise.mean = -0.25\n"
                               "noise.var = 2\n"
                               "pairs = 3\n"
                               "mse.mmse = 0.1\n"
                               "mse.map = 0.1\n"
                               "mse.naive = 2\n"
                               "mse.prior_mean = 1.25\n"
                               "posterior_var.analytic = 0.625\n";
    CHECK(estimator_report(prior, noise, sim, 10) == expect);
}

} // TEST_SUITE
