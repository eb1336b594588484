#include <catch2/catch_amalgamated.hpp>

#include "metabvs/priors.hpp"
#include "metabvs/rng.hpp"
#include "oracles.hpp"

using namespace metabvs;
using Catch::Approx;

TEST_CASE("prior inclusion probabilities", "[priors]") {
    RngStream rng(1);
    MatrixXd meta = oracles::random_matrix(6, 2, rng);
    MetaCovariates Z = MetaCovariates::with_intercept(meta);

    SECTION("omega = 0 gives 0.5 everywhere") {
        const VectorXd m = prior_inclusion_probs(ModelPrior::logistic(Z, VectorXd::Zero(3)), 6);
        for (int j = 0; j < 6; ++j) CHECK(m[j] == Approx(0.5));
    }
    SECTION("intercept-only at log(0.05/0.95) gives 0.05") {
        MetaCovariates I = MetaCovariates::intercept_only(5);
        VectorXd w(1);
        w << std::log(0.05 / 0.95);
        const VectorXd m = prior_inclusion_probs(ModelPrior::logistic(I, w), 5);
        for (int j = 0; j < 5; ++j) CHECK(m[j] == Approx(0.05).epsilon(1e-12));
    }
    SECTION("cancelling coordinates give 0.5") {
        MatrixXd Zc = MatrixXd::Ones(4, 2);
        VectorXd w(2);
        w << 1.0, -1.0;
        const VectorXd m =
            prior_inclusion_probs(ModelPrior::logistic(MetaCovariates(Zc, false), w), 4);
        for (int j = 0; j < 4; ++j) CHECK(m[j] == Approx(0.5));
    }
    SECTION("Beta-Binomial is not factorizable") {
        CHECK_THROWS_AS(prior_inclusion_probs(ModelPrior::beta_binomial(), 6), NotFactorizable);
    }
}

TEST_CASE("log model prior", "[priors]") {
    const int p = 6;
    SECTION("uniform fixed Bernoulli") {
        const ModelPrior prior = ModelPrior::fixed(VectorXd::Constant(p, 0.5));
        CHECK(log_model_prior(prior, ModelIndicator({1, 4}), p) == Approx(-p * std::log(2.0)));
    }
    SECTION("Beta-Binomial(1,1) empty model") {
        const ModelPrior prior = ModelPrior::beta_binomial(1.0, 1.0);
        CHECK(log_model_prior(prior, ModelIndicator{}, p) == Approx(-std::log(p + 1.0)));
    }
    SECTION("Beta-Binomial(1,1) masses sum to one at p = 6") {
        const ModelPrior prior = ModelPrior::beta_binomial(1.0, 1.0);
        double total = 0.0;
        for (std::uint64_t mask = 0; mask < (1u << p); ++mask)
            total += std::exp(log_model_prior(prior, ModelIndicator::from_mask(mask, p), p));
        CHECK(total == Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("factorizable priors normalize by enumeration", "[priors]") {
    const int p = 10;
    RngStream rng(3);
    MatrixXd meta = oracles::random_matrix(p, 2, rng);
    MetaCovariates Z = MetaCovariates::with_intercept(meta);
    VectorXd omega(3);
    omega << -1.0, 0.7, -0.4;
    for (const ModelPrior& prior :
         {ModelPrior::logistic(Z, omega),
          ModelPrior::fixed(VectorXd::LinSpaced(p, 0.05, 0.9))}) {
        double total = 0.0;
        for (std::uint64_t mask = 0; mask < (1u << p); ++mask)
            total += std::exp(log_model_prior(prior, ModelIndicator::from_mask(mask, p), p));
        CHECK(total == Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("kappa penalty", "[priors]") {
    const double g = 1.2;
    const int n = 50;
    const double half = 0.5 * std::log1p(g * n);
    CHECK(kappa(0.5, g, n) == Approx(half));
    const int p = 40;
    CHECK(kappa(1.0 / (p + 1), g, n) == Approx(std::log(double(p)) + half).epsilon(1e-12));
    const double e_ratio = std::exp(1.0) / (1.0 + std::exp(1.0));
    CHECK(kappa(e_ratio, g, n) == Approx(half - 1.0).epsilon(1e-12));
    CHECK_THROWS_AS(kappa(0.0, g, n), DomainError);
    CHECK_THROWS_AS(kappa(1.0, g, n), DomainError);

    // strictly decreasing in omega, strictly increasing in n
    double prev = kappa(0.01, g, n);
    for (double w = 0.05; w < 1.0; w += 0.05) {
        const double k = kappa(w, g, n);
        CHECK(k < prev);
        prev = k;
    }
    CHECK(kappa(0.3, g, 100) > kappa(0.3, g, 50));
}

TEST_CASE("calibrated hyperprior scale: frozen value and formula structure", "[priors]") {
    // intercept-only Z has v_j = 1 exactly, so the default calibration equals
    // (log(0.001/0.999)/Phi^-1(0.025))^2 = 12.418006751863337 (independent
    // high-precision computation)
    MetaCovariates I = MetaCovariates::intercept_only(10);
    const double g = calibrate_g_omega(I);
    CHECK(g == Approx(12.418006751863337).epsilon(1e-9));
    CHECK(std::round(g * 10.0) / 10.0 == Approx(12.4));  // 3 significant figures

    // the result is (1/v_max) times a constant: g * v_max is invariant
    RngStream rng(4);
    double ref = -1.0;
    for (int rep = 0; rep < 5; ++rep) {
        MatrixXd meta = oracles::random_matrix(12 + rep, 2, rng);
        MetaCovariates Z = MetaCovariates::with_intercept(meta);
        double vmax = 0.0;
        for (int j = 0; j < Z.p(); ++j)
            vmax = std::max(vmax, (Z.Z().row(j) * Z.V() * Z.Z().row(j).transpose()).value());
        const double prod = calibrate_g_omega(Z) * vmax;
        if (ref < 0.0)
            ref = prod;
        else
            CHECK(prod == Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("calibration is invariant to row reordering", "[priors]") {
    RngStream rng(5);
    MatrixXd meta = oracles::random_matrix(9, 2, rng);
    MetaCovariates Z = MetaCovariates::with_intercept(meta);
    MatrixXd meta2 = meta;
    // rotate rows
    for (int j = 0; j < meta.rows(); ++j) meta2.row(j) = meta.row((j + 3) % meta.rows());
    MetaCovariates Z2 = MetaCovariates::with_intercept(meta2);
    CHECK(calibrate_g_omega(Z) == Approx(calibrate_g_omega(Z2)).epsilon(1e-12));
}

TEST_CASE("calibrated scale meets its coverage target by Monte Carlo", "[priors]") {
    RngStream rng(6);
    MatrixXd meta = oracles::random_matrix(40, 2, rng);
    MetaCovariates Z = MetaCovariates::with_intercept(meta);
    const double g = calibrate_g_omega(Z);

    // worst-case j attains v_max
    int jmax = 0;
    double vmax = 0.0;
    for (int j = 0; j < Z.p(); ++j) {
        const double v = (Z.Z().row(j) * Z.V() * Z.Z().row(j).transpose()).value();
        if (v > vmax) {
            vmax = v;
            jmax = j;
        }
    }
    const Eigen::LLT<MatrixXd> llt(g * Z.V());
    const MatrixXd L = llt.matrixL();
    int inside = 0;
    const int draws = 100000;
    for (int s = 0; s < draws; ++s) {
        VectorXd z(3);
        for (int k = 0; k < 3; ++k) z[k] = rng.normal();
        const double eta = Z.Z().row(jmax).dot(L * z);
        const double m = 1.0 / (1.0 + std::exp(-eta));
        if (m >= 0.001 && m <= 0.999) ++inside;
    }
    CHECK(static_cast<double>(inside) / draws >= 0.95 - 0.01);
}

TEST_CASE("log hyperprior and gradient", "[priors]") {
    SECTION("mode at the origin") {
        HyperPrior hp{2.0, MatrixXd::Identity(2, 2)};
        auto [val, grad] = log_hyperprior_and_grad(VectorXd::Zero(2), hp);
        CHECK(val == 0.0);
        CHECK(grad.norm() == 0.0);
    }
    SECTION("standard normal case") {
        HyperPrior hp{1.0, MatrixXd::Identity(1, 1)};
        VectorXd w(1);
        w << 3.0;
        auto [val, grad] = log_hyperprior_and_grad(w, hp);
        CHECK(val == Approx(-4.5));
        CHECK(grad[0] == Approx(-3.0));
    }
    SECTION("gradient matches central differences") {
        RngStream rng(7);
        MatrixXd A = oracles::random_matrix(3, 3, rng);
        HyperPrior hp{1.7, A * A.transpose() + 3.0 * MatrixXd::Identity(3, 3)};
        const VectorXd w = oracles::random_vector(3, rng);
        auto [val, grad] = log_hyperprior_and_grad(w, hp);
        const VectorXd fd = oracles::fd_gradient(
            [&](const VectorXd& x) { return log_hyperprior_and_grad(x, hp).first; }, w);
        for (int i = 0; i < 3; ++i) CHECK(grad[i] == Approx(fd[i]).epsilon(1e-6));
    }
    SECTION("dimension mismatch") {
        HyperPrior hp{1.0, MatrixXd::Identity(2, 2)};
        CHECK_THROWS_AS(log_hyperprior_and_grad(VectorXd::Zero(3), hp), DimensionMismatch);
    }
}

TEST_CASE("logistic probabilities never saturate to exactly 0 or 1", "[priors]") {
    MetaCovariates I = MetaCovariates::intercept_only(4);
    for (double w0 : {-500.0, -35.0, 35.0, 500.0}) {
        VectorXd w(1);
        w << w0;
        const VectorXd m = prior_inclusion_probs(ModelPrior::logistic(I, w), 4);
        for (int j = 0; j < 4; ++j) {
            CHECK(m[j] > 0.0);
            CHECK(m[j] < 1.0);
        }
    }
}

TEST_CASE("meta covariates: rank checks and V caching", "[priors]") {
    MatrixXd bad(4, 2);
    bad << 1, 2, 2, 4, 3, 6, 4, 8;  // rank 1
    MetaCovariates Z(bad, false);
    CHECK_FALSE(Z.full_rank());
    CHECK_THROWS_AS(Z.V(), RankDeficientZ);
    CHECK_THROWS_AS(calibrate_g_omega(Z), RankDeficientZ);

    MetaCovariates I = MetaCovariates::intercept_only(6);
    CHECK(I.V()(0, 0) == Approx(1.0));
    CHECK(I.q() == 1);
    CHECK(I.has_intercept());
}

TEST_CASE("fixed Bernoulli rejects boundary probabilities", "[priors]") {
    VectorXd probs = VectorXd::Constant(3, 0.5);
    probs[1] = 1.0;
    CHECK_THROWS_AS(ModelPrior::fixed(probs), DomainError);
}

TEST_CASE("normal quantile matches the bisection oracle", "[priors]") {
    for (double p : {1e-6, 1e-3, 0.025, 0.2, 0.5, 0.7, 0.975, 0.999, 1.0 - 1e-7}) {
        const double a = normal_quantile(p);
        const double b = oracles::normal_quantile_bisect(p);
        CHECK(a == Approx(b).margin(1e-11));
    }
    CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
}
