#pragma once

#include <cmath>
#include <optional>
#include <variant>

#include "linmodel.hpp"
#include "types.hpp"

namespace metabvs {

namespace detail {

/// Linear predictors are clamped to +-35 before the logistic map: beyond that
/// the result is 0/1 within double precision, and the clamp keeps log-odds
/// and gradients finite near saturated priors.
constexpr double kLogisticClamp = 35.0;

inline double clamped_logistic(double eta) {
    if (eta > kLogisticClamp) eta = kLogisticClamp;
    if (eta < -kLogisticClamp) eta = -kLogisticClamp;
    return 1.0 / (1.0 + std::exp(-eta));
}

inline double lbeta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

}  // namespace detail

/// Standard normal quantile. Acklam's rational approximation polished with
/// one Halley step against the erfc-based CDF; accurate to full double
/// precision over (0, 1).
inline double normal_quantile(double prob) {
    if (!(prob > 0.0 && prob < 1.0)) throw DomainError("normal_quantile: p must be in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425, p_high = 1.0 - p_low;
    double x;
    if (prob < p_low) {
        const double q = std::sqrt(-2.0 * std::log(prob));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (prob <= p_high) {
        const double q = prob - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - prob));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - prob;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

/// Per-covariate meta information: p x q matrix Z with one row per covariate.
/// When built through with_intercept()/intercept_only() the first column is
/// all ones. The hyperprior shape V = (Z'Z/p)^-1 is computed once at
/// construction and cached (empty when Z is rank deficient).
class MetaCovariates {
  public:
    MetaCovariates(MatrixXd Z, bool has_intercept) : Z_(std::move(Z)), has_intercept_(has_intercept) {
        if (Z_.rows() < 1 || Z_.cols() < 1)
            throw DimensionMismatch("MetaCovariates: need p >= 1 and q >= 1");
        const MatrixXd ztz = Z_.transpose() * Z_ / static_cast<double>(Z_.rows());
        if (auto L = detail::cholesky_rank_checked(ztz)) {
            const MatrixXd eye = MatrixXd::Identity(q(), q());
            const MatrixXd Linv = L->triangularView<Eigen::Lower>().solve(eye);
            V_ = Linv.transpose() * Linv;
        }
    }

    /// Prepends a column of ones to the given meta columns.
    static MetaCovariates with_intercept(const MatrixXd& meta_cols) {
        MatrixXd Z(meta_cols.rows(), meta_cols.cols() + 1);
        Z.col(0).setOnes();
        Z.rightCols(meta_cols.cols()) = meta_cols;
        return MetaCovariates(std::move(Z), true);
    }

    static MetaCovariates intercept_only(int p) {
        return MetaCovariates(MatrixXd::Ones(p, 1), true);
    }

    int p() const { return static_cast<int>(Z_.rows()); }
    int q() const { return static_cast<int>(Z_.cols()); }
    const MatrixXd& Z() const { return Z_; }
    bool has_intercept() const { return has_intercept_; }

    /// (Z'Z/p)^-1. Throws when Z is numerically rank deficient.
    const MatrixXd& V() const {
        if (V_.size() == 0)
            throw RankDeficientZ("MetaCovariates: Z is rank deficient, V = (Z'Z/p)^-1 undefined");
        return V_;
    }

    bool full_rank() const { return V_.size() != 0; }

  private:
    MatrixXd Z_;
    bool has_intercept_;
    MatrixXd V_;
};

/// Prior inclusion probabilities m_j(omega) = logistic(z_j' omega), clamped.
inline VectorXd logistic_inclusion_probs(const MetaCovariates& Z, const VectorXd& omega) {
    if (omega.size() != Z.q())
        throw DimensionMismatch("logistic_inclusion_probs: omega has wrong length");
    const VectorXd eta = Z.Z() * omega;
    VectorXd m(Z.p());
    for (int j = 0; j < Z.p(); ++j) m[j] = detail::clamped_logistic(eta[j]);
    return m;
}

struct LogisticMetaPrior {
    MetaCovariates Z;
    VectorXd omega;
};

struct BetaBinomialPrior {
    double alpha = 1.0;
    double beta = 1.0;
};

struct FixedBernoulliPrior {
    VectorXd probs;
};

/// Model-space prior: logistic meta-covariate, Beta-Binomial, or fixed
/// per-covariate Bernoulli probabilities.
struct ModelPrior {
    std::variant<LogisticMetaPrior, BetaBinomialPrior, FixedBernoulliPrior> v;

    static ModelPrior logistic(MetaCovariates Z, VectorXd omega) {
        if (omega.size() != Z.q())
            throw DimensionMismatch("ModelPrior::logistic: omega length != q");
        return ModelPrior{LogisticMetaPrior{std::move(Z), std::move(omega)}};
    }
    static ModelPrior beta_binomial(double alpha = 1.0, double beta = 1.0) {
        if (!(alpha > 0.0) || !(beta > 0.0))
            throw InvalidHyper("ModelPrior::beta_binomial: alpha, beta must be > 0");
        return ModelPrior{BetaBinomialPrior{alpha, beta}};
    }
    static ModelPrior fixed(VectorXd probs) {
        for (int j = 0; j < probs.size(); ++j)
            if (!(probs[j] > 0.0 && probs[j] < 1.0))
                throw DomainError("ModelPrior::fixed: probabilities must lie strictly in (0,1)");
        return ModelPrior{FixedBernoulliPrior{std::move(probs)}};
    }

    bool factorizable() const { return !std::holds_alternative<BetaBinomialPrior>(v); }
};

/// Per-covariate prior inclusion probabilities for factorizable priors.
inline VectorXd prior_inclusion_probs(const ModelPrior& prior, int p) {
    if (const auto* lm = std::get_if<LogisticMetaPrior>(&prior.v)) {
        if (lm->Z.p() != p) throw DimensionMismatch("prior_inclusion_probs: Z has wrong row count");
        return logistic_inclusion_probs(lm->Z, lm->omega);
    }
    if (const auto* fb = std::get_if<FixedBernoulliPrior>(&prior.v)) {
        if (fb->probs.size() != p)
            throw DimensionMismatch("prior_inclusion_probs: probs has wrong length");
        return fb->probs;
    }
    throw NotFactorizable("prior_inclusion_probs: Beta-Binomial is not independent Bernoulli");
}

/// log pi(gamma) under the given model prior.
inline double log_model_prior(const ModelPrior& prior, const ModelIndicator& gamma, int p) {
    gamma.check_valid(p);
    if (const auto* bb = std::get_if<BetaBinomialPrior>(&prior.v)) {
        const int k = gamma.size();
        return detail::lbeta(bb->alpha + k, bb->beta + p - k) - detail::lbeta(bb->alpha, bb->beta);
    }
    const VectorXd m = prior_inclusion_probs(prior, p);
    double lp = 0.0;
    int idx = 0;
    for (int j = 0; j < p; ++j) {
        const bool in = idx < gamma.size() && gamma.included[idx] == j;
        if (in) ++idx;
        lp += in ? std::log(m[j]) : std::log1p(-m[j]);
    }
    return lp;
}

/// log [pi(gamma_j=1 | rest) / pi(gamma_j=0 | rest)] where `others` counts the
/// included covariates besides j. For the Beta-Binomial this is the size-mass
/// ratio B(a+k+1, b+p-k-1)/B(a+k, b+p-k) = (a+k)/(b+p-k-1).
inline double conditional_log_prior_odds(const ModelPrior& prior, int j, int others, int p) {
    if (const auto* bb = std::get_if<BetaBinomialPrior>(&prior.v))
        return std::log(bb->alpha + others) - std::log(bb->beta + p - others - 1);
    const VectorXd m = prior_inclusion_probs(prior, p);
    return std::log(m[j]) - std::log1p(-m[j]);
}

/// Per-inclusion log penalty kappa_b = log(1+g n)/2 + log(1/omega_b - 1).
inline double kappa(double omega_b, double g_theta, int n) {
    if (!(omega_b > 0.0 && omega_b < 1.0))
        throw DomainError("kappa: omega_b must lie strictly in (0,1)");
    return 0.5 * std::log1p(g_theta * static_cast<double>(n)) + std::log(1.0 / omega_b - 1.0);
}

/// Gaussian hyperprior omega ~ N(0, g_omega * V) on the meta-coefficients.
struct HyperPrior {
    double g_omega;
    MatrixXd V;

    static HyperPrior from_meta(const MetaCovariates& Z, double g_omega) {
        if (!(g_omega > 0.0)) throw InvalidHyper("HyperPrior: g_omega must be > 0");
        return HyperPrior{g_omega, Z.V()};
    }
};

/// Minimally informative scale for the omega hyperprior: the largest g such
/// that each m_j(omega) stays within [lo, hi] with the requested prior
/// probability,
///   g = (1 / max_j v_j) * (logit(lo) / Phi^-1((1-coverage)/2))^2,
/// with v_j = z_j' V z_j. For asymmetric bounds the tighter log-odds
/// magnitude is used.
inline double calibrate_g_omega(const MetaCovariates& Z, double lo = 0.001, double hi = 0.999,
                                double coverage = 0.95) {
    if (!(lo > 0.0 && hi < 1.0 && lo < hi)) throw DomainError("calibrate_g_omega: need 0 < lo < hi < 1");
    if (!(coverage > 0.0 && coverage < 1.0))
        throw DomainError("calibrate_g_omega: coverage must be in (0,1)");
    const MatrixXd& V = Z.V();  // throws RankDeficientZ when rank(Z) < q
    double vmax = 0.0;
    for (int j = 0; j < Z.p(); ++j)
        vmax = std::max(vmax, (Z.Z().row(j) * V * Z.Z().row(j).transpose()).value());
    const double lo_odds = std::abs(std::log(lo / (1.0 - lo)));
    const double hi_odds = std::abs(std::log(hi / (1.0 - hi)));
    const double odds = std::min(lo_odds, hi_odds);
    const double zq = normal_quantile(0.5 * (1.0 - coverage));
    const double ratio = odds / zq;
    return ratio * ratio / vmax;
}

/// Log hyperprior density up to its additive constant (the Gaussian
/// normalizing constant is dropped) and its gradient:
///   value = -omega' V^-1 omega / (2 g),  grad = -V^-1 omega / g.
inline std::pair<double, VectorXd> log_hyperprior_and_grad(const VectorXd& omega,
                                                           const HyperPrior& hp) {
    if (omega.size() != hp.V.rows())
        throw DimensionMismatch("log_hyperprior_and_grad: omega length != dim(V)");
    if (std::isinf(hp.g_omega)) return {0.0, VectorXd::Zero(omega.size())};
    const VectorXd Vinv_omega = hp.V.llt().solve(omega);
    return {-0.5 * omega.dot(Vinv_omega) / hp.g_omega, -Vinv_omega / hp.g_omega};
}

/// Partition of the p covariates into B blocks (labels 0..B-1).
struct BlockStructure {
    std::vector<int> labels;
    int B = 0;
    std::vector<int> block_sizes;

    static BlockStructure from_labels(std::vector<int> labels_) {
        BlockStructure s;
        s.labels = std::move(labels_);
        for (int lab : s.labels) {
            if (lab < 0) throw DimensionMismatch("BlockStructure: labels must be >= 0");
            s.B = std::max(s.B, lab + 1);
        }
        s.block_sizes.assign(s.B, 0);
        for (int lab : s.labels) ++s.block_sizes[lab];
        for (int b = 0; b < s.B; ++b)
            if (s.block_sizes[b] == 0)
                throw DimensionMismatch("BlockStructure: empty block " + std::to_string(b));
        return s;
    }

    int p() const { return static_cast<int>(labels.size()); }

    /// p x B indicator matrix (column b marks membership of block b).
    MatrixXd indicator() const {
        MatrixXd Z = MatrixXd::Zero(p(), B);
        for (int j = 0; j < p(); ++j) Z(j, labels[j]) = 1.0;
        return Z;
    }

    /// Expands per-block values to a per-covariate vector.
    VectorXd expand(const VectorXd& per_block) const {
        if (per_block.size() != B) throw DimensionMismatch("BlockStructure::expand: wrong length");
        VectorXd out(p());
        for (int j = 0; j < p(); ++j) out[j] = per_block[labels[j]];
        return out;
    }
};

}  // namespace metabvs
