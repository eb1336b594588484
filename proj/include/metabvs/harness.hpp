#pragma once

#include <cmath>
#include <string>
#include <tuple>
#include <vector>

#include "ebayes.hpp"
#include "linmodel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "types.hpp"

namespace metabvs {

/// Data-generating configuration for the simulation study. Noise variance is
/// fixed at 1 and the active coefficients are uniformly spaced on
/// [theta_lo, theta_hi], which with unit-variance covariates puts them in the
/// regime where selection is neither trivial nor hopeless.
struct ScenarioConfig {
    int n = 100;
    int p = 60;
    int q = 2;                 // meta-covariates excluding the intercept
    VectorXd omega_true;       // length q+1, intercept first; empty = default below
    double x_corr = 0.5;       // pairwise correlation of covariates
    double meta_corr = 0.5;    // pairwise correlation of meta-covariates
    double theta_lo = 1.0 / 3.0;
    double theta_hi = 2.0 / 3.0;
    int n_reps = 20;
    std::uint64_t seed = 0;
    double pip_threshold = 0.95;
    std::string label = "scenario";

    // fitting knobs used by run_scenario
    ZellnerConfig zellner = ZellnerConfig::inverse_gamma(1.0);
    int n_sweeps = 2000;
    int em_max_iters = 15;

    /// omega_0 = log(0.05/0.95), omega_1 = given, remaining entries 0.
    static VectorXd default_omega_true(int q, double omega1) {
        VectorXd w = VectorXd::Zero(q + 1);
        w[0] = std::log(0.05 / 0.95);
        if (q >= 1) w[1] = omega1;
        return w;
    }

    void validate() const {
        if (n < 1 || p < 1) throw DomainError("ScenarioConfig: need n >= 1 and p >= 1");
        if (!(theta_lo < theta_hi)) throw DomainError("ScenarioConfig: theta_lo < theta_hi required");
        if (!(x_corr >= 0.0 && x_corr < 1.0) || !(meta_corr >= 0.0 && meta_corr < 1.0))
            throw DomainError("ScenarioConfig: correlations must lie in [0,1)");
        if (n_reps < 1) throw DomainError("ScenarioConfig: n_reps >= 1 required");
    }
};

struct SimTruth {
    ModelIndicator gamma_star;
    VectorXd theta_star;  // length p, zeros off the support
};

struct MetricRow {
    std::string scenario;
    std::string method;
    int rep = 0;  // -1 marks a method-level mean row
    double mse = 0.0;
    double power = 0.0;
    double fdr = 0.0;
};

/// Simulates one dataset. Draw order is fixed: meta-covariates (one shared
/// factor per row), inclusion indicators, coefficients, covariates (one
/// shared factor per row), then noise; equicorrelated Gaussians use the
/// one-factor construction sqrt(rho) w + sqrt(1-rho) e.
inline std::tuple<Dataset, MetaCovariates, SimTruth> simulate_dataset(const ScenarioConfig& cfg,
                                                                      std::uint64_t rep_seed) {
    cfg.validate();
    RngStream rng(rep_seed);
    const int n = cfg.n, p = cfg.p, q = cfg.q;
    const VectorXd omega_true =
        cfg.omega_true.size() == q + 1 ? cfg.omega_true : ScenarioConfig::default_omega_true(q, 2.0);
    if (omega_true.size() != q + 1)
        throw DimensionMismatch("simulate_dataset: omega_true must have length q+1");

    MatrixXd meta(p, q);
    const double sm = std::sqrt(cfg.meta_corr), se = std::sqrt(1.0 - cfg.meta_corr);
    for (int j = 0; j < p; ++j) {
        const double w = rng.normal();
        for (int k = 0; k < q; ++k) meta(j, k) = sm * w + se * rng.normal();
    }
    MetaCovariates Z = MetaCovariates::with_intercept(meta);

    SimTruth truth;
    std::vector<int> active;
    for (int j = 0; j < p; ++j) {
        const double m = detail::clamped_logistic((Z.Z().row(j) * omega_true).value());
        if (rng.bernoulli(m)) active.push_back(j);
    }
    truth.gamma_star = ModelIndicator(active);
    truth.theta_star = VectorXd::Zero(p);
    const int s = truth.gamma_star.size();
    for (int t = 0; t < s; ++t) {
        const double v = (s == 1) ? 0.5 * (cfg.theta_lo + cfg.theta_hi)
                                  : cfg.theta_lo + (cfg.theta_hi - cfg.theta_lo) * t / (s - 1.0);
        truth.theta_star[truth.gamma_star.included[t]] = v;
    }

    MatrixXd X(n, p);
    const double sx = std::sqrt(cfg.x_corr), sxe = std::sqrt(1.0 - cfg.x_corr);
    for (int i = 0; i < n; ++i) {
        const double w = rng.normal();
        for (int j = 0; j < p; ++j) X(i, j) = sx * w + sxe * rng.normal();
    }
    VectorXd y = X * truth.theta_star;
    for (int i = 0; i < n; ++i) y[i] += rng.normal();

    return {Dataset(std::move(y), std::move(X), false), std::move(Z), std::move(truth)};
}

/// Random n x p design with exactly orthogonal columns of norm sqrt(n),
/// i.e. X'X = n I. Requires n >= p.
inline MatrixXd orthonormal_design(int n, int p, RngStream& rng) {
    if (n < p) throw DimensionMismatch("orthonormal_design: need n >= p");
    MatrixXd G(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) G(i, j) = rng.normal();
    const Eigen::HouseholderQR<MatrixXd> qr(G);
    MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, p);
    return std::sqrt(static_cast<double>(n)) * Q;
}

/// Selection and estimation metrics at the given PIP threshold. The FDR is 0
/// when nothing is selected; power is vacuously 1 when nothing is truly
/// active.
inline MetricRow compute_metrics(const VectorXd& theta_hat, const VectorXd& pip,
                                 const SimTruth& truth, double threshold) {
    const int p = static_cast<int>(pip.size());
    if (theta_hat.size() != p || truth.theta_star.size() != p)
        throw DimensionMismatch("compute_metrics: length mismatch");
    int tp = 0, fp = 0, selected = 0;
    const int active = truth.gamma_star.size();
    for (int j = 0; j < p; ++j) {
        if (pip[j] >= threshold) {
            ++selected;
            if (truth.gamma_star.contains(j))
                ++tp;
            else
                ++fp;
        }
    }
    MetricRow row;
    row.mse = (theta_hat - truth.theta_star).squaredNorm();
    row.power = active > 0 ? static_cast<double>(tp) / active : 1.0;
    row.fdr = static_cast<double>(fp) / std::max(1, selected);
    return row;
}

/// Restricted-eigenvalue design diagnostic
///   rho(X) = min over gamma not containing gamma* of
///            lambda_min( X_{gamma* \ gamma}' (I - P_gamma) X_{gamma* \ gamma} / n ),
/// where P_gamma projects onto the span of X_gamma (P_empty = 0). Enumerates
/// all such gamma, so p is capped.
inline double rho_X(const MatrixXd& X, const ModelIndicator& gamma_star, int max_p = 14) {
    const int n = static_cast<int>(X.rows()), p = static_cast<int>(X.cols());
    if (p > max_p)
        throw TooLarge("rho_X: p = " + std::to_string(p) + " exceeds cap " + std::to_string(max_p));
    gamma_star.check_valid(p);
    if (gamma_star.size() == 0) return 0.0;
    std::uint64_t star_mask = 0;
    for (int j : gamma_star.included) star_mask |= (std::uint64_t{1} << j);

    double rho = std::numeric_limits<double>::infinity();
    const std::uint64_t total = std::uint64_t{1} << p;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
        if ((mask & star_mask) == star_mask) continue;  // gamma contains gamma*
        std::vector<int> diff, in;
        for (int j = 0; j < p; ++j) {
            const bool in_mask = mask & (std::uint64_t{1} << j);
            if (in_mask) in.push_back(j);
            if (!in_mask && (star_mask & (std::uint64_t{1} << j))) diff.push_back(j);
        }
        MatrixXd Xd(n, diff.size());
        for (std::size_t c = 0; c < diff.size(); ++c) Xd.col(c) = X.col(diff[c]);
        MatrixXd resid = Xd;
        if (!in.empty()) {
            MatrixXd Xg(n, in.size());
            for (std::size_t c = 0; c < in.size(); ++c) Xg.col(c) = X.col(in[c]);
            Eigen::ColPivHouseholderQR<MatrixXd> qr(Xg);
            const int r = static_cast<int>(qr.rank());
            if (r > 0) {
                MatrixXd Q = qr.householderQ() * MatrixXd::Identity(n, r);
                resid -= Q * (Q.transpose() * Xd);
            }
        }
        const MatrixXd M = resid.transpose() * Xd / static_cast<double>(n);
        const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (M + M.transpose()));
        rho = std::min(rho, eig.eigenvalues().minCoeff());
    }
    return std::max(0.0, rho);
}

/// Theory quantities for a simulated instance with a block structure.
struct TheoryDiagnostics {
    double rho = 0.0;
    VectorXd kappa_per_block;
    VectorXd theta_min_per_block;  // 0 for blocks with no active covariate
    std::vector<int> s_per_block;
    std::vector<int> p_per_block;
};

inline TheoryDiagnostics compute_theory_diagnostics(const MatrixXd& X, const SimTruth& truth,
                                                    const BlockStructure& blocks,
                                                    const VectorXd& omega_per_block,
                                                    double g_theta, int rho_max_p = 14) {
    TheoryDiagnostics d;
    d.rho = rho_X(X, truth.gamma_star, rho_max_p);
    const int n = static_cast<int>(X.rows());
    d.kappa_per_block = VectorXd::Zero(blocks.B);
    d.theta_min_per_block = VectorXd::Zero(blocks.B);
    d.s_per_block.assign(blocks.B, 0);
    d.p_per_block = blocks.block_sizes;
    for (int b = 0; b < blocks.B; ++b) d.kappa_per_block[b] = kappa(omega_per_block[b], g_theta, n);
    for (int j : truth.gamma_star.included) {
        const int b = blocks.labels[j];
        const double a = std::abs(truth.theta_star[j]);
        ++d.s_per_block[b];
        if (d.theta_min_per_block[b] == 0.0 || a < d.theta_min_per_block[b])
            d.theta_min_per_block[b] = a;
    }
    return d;
}

/// The three Bayesian fitting pipelines compared in the experiments, plus the
/// samplers exposed by the command line.
struct FitOptions {
    enum class Method { EmExact, EmGibbs, TwoStep, Mcmc, BetaBinomial };

    Method method = Method::EmGibbs;
    ZellnerConfig zellner = ZellnerConfig::inverse_gamma(1.0);
    GibbsConfig gibbs;           // sweeps / burn-in / seed for all sampling phases
    double g_omega = 0.0;        // <= 0 means calibrate from Z
    double mh_step = 0.5;
    double bb_alpha = 1.0, bb_beta = 1.0;
    int em_max_iters = 30;
    double em_tol = 1e-4;
    bool em_sparse_init = false;  // start EM at prior probabilities 1/(p+1)
    int enum_max_p = 20;
};

struct FitOutput {
    VectorXd pip;
    VectorXd bma;      // model-averaged coefficients on the scale of the given X
    VectorXd omega;    // fitted meta-coefficients (two-step: block probabilities)
    double g_omega = std::numeric_limits<double>::quiet_NaN();
    std::map<ModelIndicator, double> model_weights;
    bool converged = true;
};

namespace detail {

inline std::map<ModelIndicator, double> weights_from_exact(const ExactPosterior& post,
                                                           double floor = 1e-12) {
    std::map<ModelIndicator, double> w;
    double kept = 0.0;
    for (std::size_t mask = 0; mask < post.probs.size(); ++mask) {
        if (post.probs[mask] <= floor) continue;
        w[ModelIndicator::from_mask(mask, post.p)] = post.probs[mask];
        kept += post.probs[mask];
    }
    for (auto& [m, v] : w) v /= kept;
    return w;
}

inline BlockStructure blocks_from_meta(const MetaCovariates& Z) {
    auto [U, labels] = unique_rows(Z.Z());
    if (U.rows() > 64)
        throw NotBlockStructured("two-step: Z has more than 64 distinct rows, not block structured");
    return BlockStructure::from_labels(labels);
}

}  // namespace detail

/// Runs one full fitting pipeline: hyperparameter estimation (when the method
/// has one), then PIPs and model-averaged coefficients at the fitted prior.
inline FitOutput fit_model(const Dataset& data, const MetaCovariates& Z, const FitOptions& opt) {
    const int p = data.p();
    if (Z.p() != p) throw DimensionMismatch("fit_model: Z must have one row per covariate");
    FitOutput out;
    using Method = FitOptions::Method;

    if (opt.method == Method::BetaBinomial) {
        const ModelPrior prior = ModelPrior::beta_binomial(opt.bb_alpha, opt.bb_beta);
        const ChainResult chain = run_chain(data, prior, opt.zellner, opt.gibbs);
        out.pip = chain.pip;
        out.model_weights = chain.model_freq;
        out.bma = bma_point_estimate(out.model_weights, data, opt.zellner);
        return out;
    }

    if (opt.method == Method::TwoStep) {
        const BlockStructure blocks = detail::blocks_from_meta(Z);
        EStep estep = p <= opt.enum_max_p ? EStep::exact() : EStep::stochastic(opt.gibbs);
        const TwoStepResult ts = two_step(data, blocks, opt.zellner, estep);
        out.omega = ts.omega1;
        VectorXd probs = blocks.expand(ts.omega1);
        for (int j = 0; j < p; ++j) probs[j] = std::min(1.0 - 1e-12, std::max(1e-12, probs[j]));
        const ModelPrior prior = ModelPrior::fixed(probs);
        if (p <= opt.enum_max_p) {
            const ExactPosterior post = enumerate_posterior(data, prior, opt.zellner, opt.enum_max_p);
            out.pip = post.pip;
            out.model_weights = detail::weights_from_exact(post);
        } else {
            GibbsConfig g = opt.gibbs;
            g.seed = derive_seed(opt.gibbs.seed, 9001);
            const ChainResult chain = run_chain(data, prior, opt.zellner, g);
            out.pip = chain.pip;
            out.model_weights = chain.model_freq;
        }
        out.bma = bma_point_estimate(out.model_weights, data, opt.zellner);
        return out;
    }

    const double g_omega = opt.g_omega > 0.0 ? opt.g_omega : calibrate_g_omega(Z);
    const HyperPrior hp = HyperPrior::from_meta(Z, g_omega);
    out.g_omega = g_omega;

    if (opt.method == Method::Mcmc) {
        const BlockGibbsResult res =
            block_gibbs_full(data, Z, hp, opt.zellner, opt.gibbs, opt.mh_step);
        out.omega = res.omega_mean;
        out.pip = res.pip;
        out.model_weights = res.model_freq;
        out.bma = bma_point_estimate(out.model_weights, data, opt.zellner);
        return out;
    }

    // EM methods
    EmConfig cfg;
    cfg.max_iters = opt.em_max_iters;
    cfg.tol_omega = opt.em_tol;
    cfg.enum_max_p = opt.enum_max_p;
    if (opt.em_sparse_init) cfg.omega_init = EmConfig::sparse_init(Z.q(), p);
    cfg.e_step = opt.method == Method::EmExact ? EStep::exact() : EStep::stochastic(opt.gibbs);
    const EmTrace trace = em_fit(data, Z, opt.zellner, hp, cfg);
    out.omega = trace.omegas.back();
    out.converged = trace.converged;
    const ModelPrior prior = ModelPrior::logistic(Z, out.omega);
    if (opt.method == Method::EmExact) {
        const ExactPosterior post = enumerate_posterior(data, prior, opt.zellner, opt.enum_max_p);
        out.pip = post.pip;
        out.model_weights = detail::weights_from_exact(post);
    } else {
        GibbsConfig g = opt.gibbs;
        g.seed = derive_seed(opt.gibbs.seed, 9000);
        const ChainResult chain = run_chain(data, prior, opt.zellner, g);
        out.pip = chain.pip;
        out.model_weights = chain.model_freq;
    }
    out.bma = bma_point_estimate(out.model_weights, data, opt.zellner);
    return out;
}

/// Methods compared in the simulation study.
enum class ScenarioMethod { EbayesMeta, EbayesIntercept, BetaBinomial };

inline const char* scenario_method_name(ScenarioMethod m) {
    switch (m) {
        case ScenarioMethod::EbayesMeta: return "ebayes_meta";
        case ScenarioMethod::EbayesIntercept: return "ebayes_intercept";
        case ScenarioMethod::BetaBinomial: return "beta_binomial";
    }
    return "?";
}

/// Batch experiment: simulate n_reps datasets, fit each requested method, and
/// report per-rep metric rows followed by method-level means (rep = -1).
/// Failures are recorded as NaN rows without aborting the batch.
inline std::vector<MetricRow> run_scenario(const ScenarioConfig& cfg,
                                           const std::vector<ScenarioMethod>& methods) {
    cfg.validate();
    std::vector<MetricRow> rows;
    std::vector<std::string> names;
    for (auto m : methods) names.push_back(scenario_method_name(m));

    for (int rep = 0; rep < cfg.n_reps; ++rep) {
        const std::uint64_t rep_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
        auto [data, Z, truth] = simulate_dataset(cfg, rep_seed);
        Dataset std_data = data;
        const VectorXd scales = standardize_columns(std_data);
        for (std::size_t mi = 0; mi < methods.size(); ++mi) {
            MetricRow row;
            row.scenario = cfg.label;
            row.method = names[mi];
            row.rep = rep;
            try {
                FitOptions opt;
                opt.zellner = cfg.zellner;
                opt.gibbs.n_sweeps = cfg.n_sweeps;
                opt.gibbs.seed = derive_seed(rep_seed, 100 + mi);
                opt.em_max_iters = cfg.em_max_iters;
                const bool meta = methods[mi] == ScenarioMethod::EbayesMeta;
                opt.method = methods[mi] == ScenarioMethod::BetaBinomial
                                 ? FitOptions::Method::BetaBinomial
                                 : FitOptions::Method::EmGibbs;
                const MetaCovariates Zi = MetaCovariates::intercept_only(cfg.p);
                const FitOutput fit = fit_model(std_data, meta ? Z : Zi, opt);
                const VectorXd theta = fit.bma.array() / scales.array();
                const MetricRow metrics = compute_metrics(theta, fit.pip, truth, cfg.pip_threshold);
                row.mse = metrics.mse;
                row.power = metrics.power;
                row.fdr = metrics.fdr;
            } catch (const Error&) {
                row.mse = row.power = row.fdr = std::numeric_limits<double>::quiet_NaN();
            }
            rows.push_back(row);
        }
    }
    // method-level means over successful reps
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        MetricRow mean;
        mean.scenario = cfg.label;
        mean.method = names[mi];
        mean.rep = -1;
        int count = 0;
        for (const MetricRow& r : rows) {
            if (r.rep < 0 || r.method != names[mi] || std::isnan(r.mse)) continue;
            mean.mse += r.mse;
            mean.power += r.power;
            mean.fdr += r.fdr;
            ++count;
        }
        if (count > 0) {
            mean.mse /= count;
            mean.power /= count;
            mean.fdr /= count;
        } else {
            mean.mse = mean.power = mean.fdr = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(mean);
    }
    return rows;
}

/// Leave-one-out R^2: refit on each reduced dataset, predict the held-out
/// response via the model-averaged coefficients, and return the squared
/// Pearson correlation between predictions and observations. Standardization
/// (when requested) is redone inside every fold.
inline double loocv_r2(const Dataset& data, const MetaCovariates& Z, const FitOptions& opt,
                       bool standardize = true, VectorXd* predictions_out = nullptr) {
    const int n = data.n(), p = data.p();
    if (n < 3) throw DimensionMismatch("loocv_r2: need n >= 3");
    VectorXd pred(n);
    for (int i = 0; i < n; ++i) {
        MatrixXd Xt(n - 1, p);
        VectorXd yt(n - 1);
        int r = 0;
        for (int s = 0; s < n; ++s) {
            if (s == i) continue;
            Xt.row(r) = data.X.row(s);
            yt[r] = data.y[s];
            ++r;
        }
        Dataset train(std::move(yt), std::move(Xt), data.standardized);
        VectorXd xrow = data.X.row(i).transpose();
        if (standardize) {
            const VectorXd scales = standardize_columns(train);
            xrow = xrow.array() / scales.array();
        }
        FitOptions fold_opt = opt;
        fold_opt.gibbs.seed = derive_seed(opt.gibbs.seed, static_cast<std::uint64_t>(i));
        const FitOutput fit = fit_model(train, Z, fold_opt);
        pred[i] = xrow.dot(fit.bma);
    }
    if (predictions_out) *predictions_out = pred;

    const double my = data.y.mean(), mp = pred.mean();
    const double vy = (data.y.array() - my).square().sum();
    const double vp = (pred.array() - mp).square().sum();
    if (!(vp > 1e-300) || !(vy > 1e-300))
        throw DegenerateVariance("loocv_r2: predictions or outcomes have zero variance");
    const double cov = ((data.y.array() - my) * (pred.array() - mp)).sum();
    return (cov * cov) / (vy * vp);
}

}  // namespace metabvs
