#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "linmodel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "types.hpp"

namespace metabvs {

/// How posterior inclusion probabilities are obtained inside EM / two-step:
/// exact enumeration (small p) or Gibbs sampling frequencies.
struct EStep {
    enum class Kind { Exact, Gibbs };
    Kind kind = Kind::Exact;
    GibbsConfig gibbs;

    static EStep exact() { return EStep{Kind::Exact, GibbsConfig{}}; }
    static EStep stochastic(GibbsConfig cfg) { return EStep{Kind::Gibbs, cfg}; }
};

struct EmConfig {
    int max_iters = 50;
    double tol_omega = 1e-6;   // stop when max|omega_new - omega| < tol
    EStep e_step = EStep::exact();
    int newton_max = 100;
    double newton_tol = 1e-9;
    VectorXd omega_init;       // empty means zeros (all prior probabilities 1/2)
    int enum_max_p = 20;

    /// Sparse alternative start: prior probabilities 1/(p+1) through the
    /// intercept, zero on the meta-coefficients. The objective is typically
    /// multi-modal, so both starts are worth trying.
    static VectorXd sparse_init(int q, int p) {
        VectorXd w = VectorXd::Zero(q);
        w[0] = std::log(1.0 / static_cast<double>(p));
        return w;
    }

    void validate() const {
        if (max_iters < 1) throw DomainError("EmConfig: max_iters must be >= 1");
        if (!(tol_omega > 0.0) || !(newton_tol > 0.0))
            throw DomainError("EmConfig: tolerances must be > 0");
    }
};

struct EmTrace {
    std::vector<VectorXd> omegas;   // omega^(0) .. omega^(K)
    std::vector<double> objective;  // log pi(omega | y) per iterate; exact e-step only
    VectorXd pips;                  // PIPs at the final omega
    bool converged = false;
};

struct TwoStepResult {
    VectorXd omega0;  // all 1/(p+1)
    VectorXd omega1;  // block-mean PIPs
    VectorXd kappa0;
    VectorXd kappa1;
    VectorXd pip;     // PIPs at omega0 that produced omega1
};

/// Gradient of log p(y | omega) for the logistic meta prior:
/// Z' (pip - prior_probs). Exact when pip is the exact posterior inclusion
/// probability vector at omega.
inline VectorXd marginal_loglik_gradient(const VectorXd& pip, const VectorXd& prior_probs,
                                         const MetaCovariates& Z) {
    if (pip.size() != Z.p() || prior_probs.size() != Z.p())
        throw DimensionMismatch("marginal_loglik_gradient: vectors must have length p");
    return Z.Z().transpose() * (pip - prior_probs);
}

/// Gradient and Hessian of the M-step objective
///   f(omega) = sum_j pip_j log m_j + (1 - pip_j) log(1 - m_j):
/// grad = Z'(pip - m(omega)), hess = -Z' diag(m (1-m)) Z.
inline std::pair<VectorXd, MatrixXd> em_objective_grad_hess(const VectorXd& pip_hat,
                                                            const VectorXd& omega,
                                                            const MetaCovariates& Z) {
    if (pip_hat.size() != Z.p())
        throw DimensionMismatch("em_objective_grad_hess: pip_hat must have length p");
    const VectorXd m = logistic_inclusion_probs(Z, omega);
    const VectorXd grad = Z.Z().transpose() * (pip_hat - m);
    const VectorXd d = m.array() * (1.0 - m.array());
    const MatrixXd hess = -(Z.Z().transpose() * d.asDiagonal() * Z.Z());
    return {grad, hess};
}

/// Solves 1/(1+e^-w) + w/c = a for w. The left side is strictly increasing,
/// so for finite c > 0 a solution exists for every real a and is bracketed by
/// [c(a-1), ca]; safeguarded Newton with bisection fallback drives the
/// residual below 1e-12. For c = +inf the solution is logit(a), a in (0,1).
inline double solve_h(double a, double c) {
    if (std::isinf(c)) {
        if (!(a > 0.0 && a < 1.0))
            throw DomainError("solve_h: c = inf requires a strictly in (0,1)");
        return std::log(a / (1.0 - a));
    }
    if (!(c > 0.0)) throw DomainError("solve_h: c must be > 0");
    auto f = [&](double w) { return 1.0 / (1.0 + std::exp(-w)) + w / c - a; };
    double lo = c * (a - 1.0), hi = c * a;  // f(lo) <= 0 <= f(hi)
    double w = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double fw = f(w);
        if (std::abs(fw) < 1e-13) return w;
        if (fw > 0.0)
            hi = w;
        else
            lo = w;
        const double s = 1.0 / (1.0 + std::exp(-w));
        const double deriv = s * (1.0 - s) + 1.0 / c;
        double next = w - fw / deriv;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        w = next;
    }
    return w;
}

namespace detail {

struct NewtonResult {
    VectorXd omega;
    double grad_norm;
    bool converged;
};

/// Damped Newton ascent of f(omega) + log hyperprior. The objective is
/// strictly concave for full-rank Z, so the maximum is unique.
inline NewtonResult mstep_newton_impl(const VectorXd& pip_hat, const MetaCovariates& Z,
                                      const HyperPrior& hp, const EmConfig& cfg,
                                      const VectorXd& start) {
    const int q = Z.q();
    const bool penalized = !std::isinf(hp.g_omega);
    MatrixXd Vinv;
    if (penalized) Vinv = hp.V.llt().solve(MatrixXd::Identity(q, q)) / hp.g_omega;

    auto objective = [&](const VectorXd& w) {
        const VectorXd m = logistic_inclusion_probs(Z, w);
        double val = 0.0;
        for (int j = 0; j < Z.p(); ++j)
            val += pip_hat[j] * std::log(m[j]) + (1.0 - pip_hat[j]) * std::log1p(-m[j]);
        if (penalized) val -= 0.5 * w.dot(Vinv * w);
        return val;
    };

    VectorXd omega = start;
    double obj = objective(omega);
    double grad_norm = std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.newton_max; ++it) {
        auto [grad, hess] = em_objective_grad_hess(pip_hat, omega, Z);
        if (penalized) {
            grad -= Vinv * omega;
            hess -= Vinv;
        }
        grad_norm = grad.lpNorm<Eigen::Infinity>();
        if (grad_norm < cfg.newton_tol) return {omega, grad_norm, true};
        const VectorXd step = (-hess).ldlt().solve(grad);
        // once the predicted gain 0.5 g'H^-1 g drops below fp resolution the
        // line search can no longer certify an increase; take plain Newton
        // steps there, where strict concavity guarantees convergence
        const double predicted = 0.5 * grad.dot(step);
        if (predicted < 1e-13 * (1.0 + std::abs(obj))) {
            omega += step;
            obj = objective(omega);
            continue;
        }
        double t = 1.0;
        VectorXd cand;
        double cand_obj = -std::numeric_limits<double>::infinity();
        for (int h = 0; h < 30; ++h) {
            cand = omega + t * step;
            cand_obj = objective(cand);
            if (cand_obj >= obj) break;
            t *= 0.5;
        }
        if (!(cand_obj >= obj)) return {omega, grad_norm, false};
        omega = cand;
        obj = cand_obj;
    }
    auto [grad, hess] = em_objective_grad_hess(pip_hat, omega, Z);
    if (penalized) grad -= Vinv * omega;
    grad_norm = grad.lpNorm<Eigen::Infinity>();
    return {omega, grad_norm, grad_norm < cfg.newton_tol};
}

/// Unique rows of Z in order of first appearance, with per-row group labels.
inline std::pair<MatrixXd, std::vector<int>> unique_rows(const MatrixXd& Z) {
    std::vector<int> labels(Z.rows());
    std::vector<int> reps;
    for (int i = 0; i < Z.rows(); ++i) {
        int found = -1;
        for (std::size_t u = 0; u < reps.size(); ++u) {
            if ((Z.row(i) - Z.row(reps[u])).cwiseAbs().maxCoeff() == 0.0) {
                found = static_cast<int>(u);
                break;
            }
        }
        if (found < 0) {
            found = static_cast<int>(reps.size());
            reps.push_back(i);
        }
        labels[i] = found;
    }
    MatrixXd U(reps.size(), Z.cols());
    for (std::size_t u = 0; u < reps.size(); ++u) U.row(u) = Z.row(reps[u]);
    return {U, labels};
}

}  // namespace detail

/// Newton M-step: maximizes f(omega) + log N(omega; 0, g_omega V).
inline VectorXd mstep_newton(const VectorXd& pip_hat, const MetaCovariates& Z,
                             const HyperPrior& hp, const EmConfig& cfg) {
    if (!Z.full_rank()) throw RankDeficientZ("mstep_newton: Z must have full column rank");
    const VectorXd start =
        cfg.omega_init.size() == Z.q() ? cfg.omega_init : VectorXd::Zero(Z.q());
    auto res = detail::mstep_newton_impl(pip_hat, Z, hp, cfg, start);
    if (!res.converged)
        throw NoConvergence("mstep_newton: no convergence after " + std::to_string(cfg.newton_max) +
                            " iterations (gradient norm " + std::to_string(res.grad_norm) + ")");
    return res.omega;
}

/// Closed-form M-step for block-structured Z (exactly q distinct rows forming
/// an invertible matrix U), under the hyperprior N(0, g_omega (Z'Z/p)^-1).
/// Solves the stationarity equation Z'[m(omega) + Z omega/(g p)] = Z' pip
/// via one univariate root-find per block.
inline VectorXd mstep_closed_form(const VectorXd& pip_hat, const MetaCovariates& Z,
                                  double g_omega) {
    const int p = Z.p(), q = Z.q();
    if (pip_hat.size() != p)
        throw DimensionMismatch("mstep_closed_form: pip_hat must have length p");
    auto [U, labels] = detail::unique_rows(Z.Z());
    if (U.rows() != q)
        throw NotBlockStructured("mstep_closed_form: Z has " + std::to_string(U.rows()) +
                                 " unique rows, need exactly q = " + std::to_string(q));
    Eigen::FullPivLU<MatrixXd> lu(U);
    if (!lu.isInvertible())
        throw NotBlockStructured("mstep_closed_form: matrix of unique rows is singular");

    // Ztilde = Z U^-1 has rows equal to standard basis vectors, so column j of
    // Ztilde indicates membership of group j.
    VectorXd num = VectorXd::Zero(q), den = VectorXd::Zero(q);
    for (int i = 0; i < p; ++i) {
        num[labels[i]] += pip_hat[i];
        den[labels[i]] += 1.0;
    }
    const double c = g_omega * static_cast<double>(p);
    VectorXd omega_tilde(q);
    for (int j = 0; j < q; ++j) omega_tilde[j] = solve_h(num[j] / den[j], c);
    return lu.solve(omega_tilde);  // omega = U^-1 omega_tilde
}

namespace detail {

/// Whether the closed-form M-step applies: block-structured Z and the
/// hyperprior matches (Z'Z/p)^-1 for the given shape V.
inline bool closed_form_applicable(const MetaCovariates& Z, const HyperPrior& hp) {
    if (!Z.full_rank()) return false;
    auto [U, labels] = unique_rows(Z.Z());
    if (U.rows() != Z.q()) return false;
    Eigen::FullPivLU<MatrixXd> lu(U);
    if (!lu.isInvertible()) return false;
    const MatrixXd& V = Z.V();
    if (hp.V.rows() != V.rows()) return false;
    return (hp.V - V).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + V.cwiseAbs().maxCoeff());
}

}  // namespace detail

/// EM for the empirical Bayes estimate of omega: E-step computes posterior
/// inclusion probabilities at the current omega (exactly, or by Gibbs
/// frequencies), M-step maximizes the expected complete-data log prior plus
/// the hyperprior. With the exact E-step, log pi(omega | y) is recorded per
/// iterate and never decreases. With the stochastic E-step, the stopping
/// tolerance is floored at the Monte Carlo error ~ 1/sqrt(n_kept).
inline EmTrace em_fit(const Dataset& data, const MetaCovariates& Z, const ZellnerConfig& cfg_z,
                      const HyperPrior& hp, const EmConfig& cfg) {
    cfg.validate();
    if (Z.p() != data.p()) throw DimensionMismatch("em_fit: Z must have one row per covariate");
    const int q = Z.q();
    VectorXd omega = cfg.omega_init.size() == q ? cfg.omega_init : VectorXd::Zero(q);

    const bool exact = cfg.e_step.kind == EStep::Kind::Exact;
    std::optional<ModelEnumeration> enumeration;
    std::shared_ptr<LogMarginalCache> cache;
    if (exact)
        enumeration.emplace(data, cfg_z, cfg.enum_max_p);
    else
        cache = std::make_shared<LogMarginalCache>();
    const bool closed_form = detail::closed_form_applicable(Z, hp);

    EmTrace trace;
    trace.omegas.push_back(omega);
    bool converged = false;
    for (int iter = 0;; ++iter) {
        // E-step at the current omega
        const ModelPrior prior = ModelPrior::logistic(Z, omega);
        VectorXd pip;
        double mc_floor = 0.0;
        if (exact) {
            const ExactPosterior post = enumeration->posterior(prior);
            pip = post.pip;
            trace.objective.push_back(post.log_evidence +
                                      log_hyperprior_and_grad(omega, hp).first);
        } else {
            GibbsConfig g = cfg.e_step.gibbs;
            g.seed = derive_seed(cfg.e_step.gibbs.seed, static_cast<std::uint64_t>(iter));
            const ChainResult chain = run_chain(data, prior, cfg_z, g, cache);
            pip = chain.pip;
            mc_floor = 1.0 / std::sqrt(static_cast<double>(chain.n_kept));
        }
        trace.pips = pip;
        if (converged || iter >= cfg.max_iters) break;

        // M-step; with a stochastic E-step there is no point solving past the
        // Monte Carlo error of the inclusion frequencies
        VectorXd omega_new;
        if (closed_form) {
            omega_new = mstep_closed_form(pip, Z, hp.g_omega);
        } else {
            EmConfig mcfg = cfg;
            mcfg.omega_init = omega;  // warm start
            mcfg.newton_tol = std::max(cfg.newton_tol, mc_floor);
            auto res = detail::mstep_newton_impl(pip, Z, hp, mcfg, omega);
            if (!res.converged) {
                trace.converged = false;
                break;
            }
            omega_new = res.omega;
        }
        trace.omegas.push_back(omega_new);
        const double move = (omega_new - omega).lpNorm<Eigen::Infinity>();
        if (move < std::max(cfg.tol_omega, mc_floor)) converged = true;
        omega = omega_new;
    }
    trace.converged = converged;
    return trace;
}

/// Two-step block estimator: start every block at omega_b = 1/(p+1), compute
/// PIPs there, and set omega_b to the block-mean PIP.
inline TwoStepResult two_step(const Dataset& data, const BlockStructure& blocks,
                              const ZellnerConfig& cfg_z, const EStep& e_step) {
    const int p = data.p();
    if (blocks.p() != p) throw DimensionMismatch("two_step: blocks must cover all p covariates");
    const double w0 = 1.0 / static_cast<double>(p + 1);
    const ModelPrior prior0 = ModelPrior::fixed(VectorXd::Constant(p, w0));

    VectorXd pip;
    if (e_step.kind == EStep::Kind::Exact)
        pip = enumerate_posterior(data, prior0, cfg_z).pip;
    else
        pip = run_chain(data, prior0, cfg_z, e_step.gibbs).pip;

    TwoStepResult out;
    out.pip = pip;
    out.omega0 = VectorXd::Constant(blocks.B, w0);
    out.omega1 = VectorXd::Zero(blocks.B);
    for (int j = 0; j < p; ++j) out.omega1[blocks.labels[j]] += pip[j];
    for (int b = 0; b < blocks.B; ++b) out.omega1[b] /= static_cast<double>(blocks.block_sizes[b]);

    auto kappa_or_inf = [&](double w) {
        if (w <= 0.0) return std::numeric_limits<double>::infinity();
        if (w >= 1.0) return -std::numeric_limits<double>::infinity();
        return kappa(w, cfg_z.g_theta, data.n());
    };
    out.kappa0 = VectorXd::Constant(blocks.B, kappa_or_inf(w0));
    out.kappa1 = VectorXd::Zero(blocks.B);
    for (int b = 0; b < blocks.B; ++b) out.kappa1[b] = kappa_or_inf(out.omega1[b]);
    return out;
}

struct BlockGibbsResult {
    std::vector<std::pair<ModelIndicator, VectorXd>> samples;  // post burn-in (gamma, omega)
    VectorXd omega_mean;
    VectorXd pip;
    std::map<ModelIndicator, double> model_freq;
    double accept_rate = 0.0;
};

/// Block Gibbs over (gamma, omega): each iteration runs one full model sweep
/// at the current omega, then a random-walk Metropolis update of omega
/// targeting pi(omega | gamma) ∝ prod_j Bern(gamma_j; m_j(omega)) N(omega; 0,
/// g_omega V) with proposal N(omega, mh_step^2 V). The step size adapts only
/// during burn-in.
inline BlockGibbsResult block_gibbs_full(const Dataset& data, const MetaCovariates& Z,
                                         const HyperPrior& hp, const ZellnerConfig& cfg_z,
                                         const GibbsConfig& cfg_g, double mh_step = 0.5) {
    cfg_g.validate();
    if (!(mh_step > 0.0)) throw DomainError("block_gibbs_full: mh_step must be > 0");
    const int p = data.p(), q = Z.q();
    RngStream rng(cfg_g.seed);
    auto cache = std::make_shared<LogMarginalCache>();

    VectorXd omega = VectorXd::Zero(q);
    GibbsChain chain(data, ModelPrior::logistic(Z, omega), cfg_z, cache, &rng, cfg_g.init);

    const Eigen::LLT<MatrixXd> vchol(hp.V);
    const MatrixXd Lv = vchol.matrixL();

    auto log_target = [&](const VectorXd& w) {
        const VectorXd m = logistic_inclusion_probs(Z, w);
        const auto& bits = chain.inclusion_bits();
        double val = 0.0;
        for (int j = 0; j < p; ++j)
            val += bits[j] ? std::log(m[j]) : std::log1p(-m[j]);
        return val + log_hyperprior_and_grad(w, hp).first;
    };

    const int burn = cfg_g.effective_burn_in();
    double step = mh_step;
    int accepted_kept = 0, kept = 0, accepted_burn = 0, burn_count = 0;

    BlockGibbsResult out;
    VectorXd counts = VectorXd::Zero(p);
    VectorXd omega_sum = VectorXd::Zero(q);
    std::map<ModelIndicator, int> visits;

    for (int l = 0; l < cfg_g.n_sweeps; ++l) {
        chain.sweep();

        double cur = log_target(omega);
        VectorXd z(q);
        for (int k = 0; k < q; ++k) z[k] = rng.normal();
        const VectorXd prop = omega + step * (Lv * z);
        const double cand = log_target(prop);
        const bool accept = std::log(rng.uniform()) < cand - cur;
        if (accept) {
            omega = prop;
            chain.set_inclusion_probs(logistic_inclusion_probs(Z, omega));
        }

        if (l < burn) {
            ++burn_count;
            accepted_burn += accept ? 1 : 0;
            if (burn_count % 25 == 0) {
                const double rate = accepted_burn / 25.0;
                step *= std::exp(rate - 0.3);
                step = std::min(10.0, std::max(1e-3, step));
                accepted_burn = 0;
            }
            continue;
        }
        ++kept;
        accepted_kept += accept ? 1 : 0;
        const ModelIndicator m = chain.state();
        out.samples.emplace_back(m, omega);
        for (int j : m.included) counts[j] += 1.0;
        omega_sum += omega;
        ++visits[m];
    }

    out.omega_mean = omega_sum / static_cast<double>(kept);
    out.pip = counts / static_cast<double>(kept);
    for (const auto& [m, c] : visits)
        out.model_freq[m] = static_cast<double>(c) / static_cast<double>(kept);
    out.accept_rate = static_cast<double>(accepted_kept) / static_cast<double>(kept);
    return out;
}

}  // namespace metabvs
