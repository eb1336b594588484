#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "linmodel.hpp"
#include "priors.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace metabvs {

struct GibbsConfig {
    int n_sweeps = 1000;   // full passes over all p coordinates
    int burn_in = -1;      // sweeps discarded; negative means n_sweeps/10
    std::uint64_t seed = 0;
    ModelIndicator init;   // default: empty model

    int effective_burn_in() const { return burn_in >= 0 ? burn_in : n_sweeps / 10; }

    void validate() const {
        if (n_sweeps < 1) throw DomainError("GibbsConfig: n_sweeps must be >= 1");
        if (effective_burn_in() >= n_sweeps)
            throw DomainError("GibbsConfig: burn_in must be < n_sweeps");
    }
};

struct ChainResult {
    VectorXd pip;                                 // post-burn-in inclusion frequencies
    std::map<ModelIndicator, double> model_freq;  // visit probabilities, sums to 1
    int n_kept = 0;
    std::vector<double> log_post_trace;           // unnormalized log posterior per sweep
};

/// Single-site Gibbs sampler over models at a fixed model prior. Sweeps visit
/// coordinates j = 1..p in fixed ascending order; each flip uses the exact
/// conditional sigma(delta log-marginal + log prior odds), with marginals
/// served by the cache or by an O(|gamma|^2) factor update. Rank-deficient
/// proposals get probability zero. Exactly one uniform draw is consumed per
/// coordinate, so the generator position depends only on the sweep count.
class GibbsChain {
  public:
    GibbsChain(const Dataset& data, const ModelPrior& prior, const ZellnerConfig& cfg,
               std::shared_ptr<LogMarginalCache> cache, RngStream* rng,
               ModelIndicator init = ModelIndicator())
        : data_(&data),
          prior_(prior),
          cfg_(cfg),
          cache_(std::move(cache)),
          rng_(rng),
          XtX_(data.X.transpose() * data.X),
          Xty_(data.X.transpose() * data.y),
          yty_(data.y.squaredNorm()),
          factor_(XtX_, Xty_, data.n()),
          in_(data.p(), 0),
          key_((data.p() + 63) / 64, 0) {
        cfg_.validate();
        init.check_valid(data.p());
        factorizable_ = prior_.factorizable();
        if (factorizable_) {
            prior_probs_ = prior_inclusion_probs(prior_, data.p());
            logit_.resize(data.p());
            log_prior_empty_ = 0.0;
            for (int j = 0; j < data.p(); ++j) {
                logit_[j] = std::log(prior_probs_[j]) - std::log1p(-prior_probs_[j]);
                log_prior_empty_ += std::log1p(-prior_probs_[j]);
            }
        } else {
            bb_ = std::get<BetaBinomialPrior>(prior_.v);
        }
        for (int j : init.included) {
            if (!factor_.try_add(j))
                throw RankDeficient("GibbsChain: initial model is rank deficient");
            set_bit(j, true);
            ++k_;
        }
        cur_logm_ = current_marginal_from_factor();
        if (cache_) cache_->insert(key_, cur_logm_);
    }

    GibbsChain(const GibbsChain&) = delete;
    GibbsChain& operator=(const GibbsChain&) = delete;

    int p() const { return data_->p(); }
    int model_size() const { return k_; }

    ModelIndicator state() const {
        std::vector<int> idx;
        for (int j = 0; j < p(); ++j)
            if (in_[j]) idx.push_back(j);
        return ModelIndicator(std::move(idx));
    }

    double log_marginal_current() const { return cur_logm_; }

    double log_prior_current() const {
        if (!factorizable_)
            return detail::lbeta(bb_.alpha + k_, bb_.beta + p() - k_) -
                   detail::lbeta(bb_.alpha, bb_.beta);
        double lp = log_prior_empty_;
        for (int j = 0; j < p(); ++j)
            if (in_[j]) lp += logit_[j];
        return lp;
    }

    double log_posterior_current() const { return cur_logm_ + log_prior_current(); }

    const std::vector<char>& inclusion_bits() const { return in_; }

    /// Replaces the factorizable prior's inclusion probabilities in place
    /// (used by the block Gibbs sampler when omega moves).
    void set_inclusion_probs(const VectorXd& m) {
        if (!factorizable_)
            throw NotFactorizable("GibbsChain::set_inclusion_probs: prior is not factorizable");
        if (m.size() != p())
            throw DimensionMismatch("GibbsChain::set_inclusion_probs: wrong length");
        prior_probs_ = m;
        log_prior_empty_ = 0.0;
        for (int j = 0; j < p(); ++j) {
            logit_[j] = std::log(m[j]) - std::log1p(-m[j]);
            log_prior_empty_ += std::log1p(-m[j]);
        }
    }

    /// One full pass over all coordinates.
    void sweep() {
        for (int j = 0; j < p(); ++j) update_coordinate(j);
    }

  private:
    void set_bit(int j, bool on) {
        in_[j] = on ? 1 : 0;
        const std::uint64_t bit = std::uint64_t{1} << (j % 64);
        if (on)
            key_[j / 64] |= bit;
        else
            key_[j / 64] &= ~bit;
    }

    double current_marginal_from_factor() const {
        return log_marginal_core(factor_.fitted_sumsq(), k_, data_->n(), yty_, cfg_);
    }

    void update_coordinate(int j) {
        const double u = rng_->uniform();
        const int others = k_ - (in_[j] ? 1 : 0);
        double log_odds;
        if (factorizable_)
            log_odds = logit_[j];
        else
            log_odds = std::log(bb_.alpha + others) - std::log(bb_.beta + p() - others - 1);

        // marginal of the flipped model: cache first, factor update on a miss
        const std::uint64_t bit = std::uint64_t{1} << (j % 64);
        key_[j / 64] ^= bit;
        double flip_logm;
        bool have_flip = false;
        if (cache_) {
            if (auto hit = cache_->lookup(key_)) {
                flip_logm = *hit;
                have_flip = true;
            }
        }
        if (!have_flip) {
            if (in_[j]) {
                flip_logm = log_marginal_core(factor_.fitted_if_removed(j), k_ - 1, data_->n(),
                                              yty_, cfg_);
            } else if (auto fitted = factor_.fitted_if_added(j)) {
                flip_logm = log_marginal_core(*fitted, k_ + 1, data_->n(), yty_, cfg_);
            } else {
                flip_logm = -std::numeric_limits<double>::infinity();
            }
            if (cache_) cache_->insert(key_, flip_logm);
        }
        key_[j / 64] ^= bit;  // restore

        double p_include;
        if (in_[j]) {
            const double a = cur_logm_ - flip_logm + log_odds;
            p_include = 1.0 / (1.0 + std::exp(-a));
        } else if (std::isinf(flip_logm)) {
            p_include = 0.0;
        } else {
            const double a = flip_logm - cur_logm_ + log_odds;
            p_include = 1.0 / (1.0 + std::exp(-a));
        }

        const bool include = u < p_include;
        if (include == static_cast<bool>(in_[j])) return;
        if (include) {
            if (!factor_.try_add(j)) return;  // numerically rank deficient after all
            set_bit(j, true);
            ++k_;
        } else {
            factor_.remove(j);
            set_bit(j, false);
            --k_;
        }
        cur_logm_ = current_marginal_from_factor();
    }

    const Dataset* data_;
    ModelPrior prior_;
    ZellnerConfig cfg_;
    std::shared_ptr<LogMarginalCache> cache_;
    RngStream* rng_;
    MatrixXd XtX_;
    VectorXd Xty_;
    double yty_;
    GramFactor factor_;
    std::vector<char> in_;
    ModelKey key_;
    int k_ = 0;
    double cur_logm_ = 0.0;
    bool factorizable_ = true;
    VectorXd prior_probs_;
    std::vector<double> logit_;
    double log_prior_empty_ = 0.0;
    BetaBinomialPrior bb_;
};

/// One full Gibbs pass over the coordinates starting from `state`.
inline ModelIndicator gibbs_sweep(const ModelIndicator& state, const Dataset& data,
                                  const ModelPrior& prior, const ZellnerConfig& cfg,
                                  std::shared_ptr<LogMarginalCache> cache, RngStream& rng) {
    GibbsChain chain(data, prior, cfg, std::move(cache), &rng, state);
    chain.sweep();
    return chain.state();
}

/// Runs a full chain. Deterministic given the seed; each chain owns a private
/// cache unless one is supplied.
inline ChainResult run_chain(const Dataset& data, const ModelPrior& prior,
                             const ZellnerConfig& cfg_z, const GibbsConfig& cfg_g,
                             std::shared_ptr<LogMarginalCache> cache = nullptr) {
    cfg_g.validate();
    if (!cache) cache = std::make_shared<LogMarginalCache>();
    RngStream rng(cfg_g.seed);
    GibbsChain chain(data, prior, cfg_z, cache, &rng, cfg_g.init);
    const int p = data.p();
    const int burn = cfg_g.effective_burn_in();

    ChainResult out;
    out.log_post_trace.reserve(cfg_g.n_sweeps);
    VectorXd counts = VectorXd::Zero(p);
    std::map<ModelIndicator, int> visits;
    for (int s = 0; s < cfg_g.n_sweeps; ++s) {
        chain.sweep();
        out.log_post_trace.push_back(chain.log_posterior_current());
        if (s < burn) continue;
        const ModelIndicator m = chain.state();
        for (int j : m.included) counts[j] += 1.0;
        ++visits[m];
        ++out.n_kept;
    }
    out.pip = counts / static_cast<double>(out.n_kept);
    for (const auto& [m, c] : visits)
        out.model_freq[m] = static_cast<double>(c) / static_cast<double>(out.n_kept);
    return out;
}

struct ExactPosterior {
    double log_evidence = 0.0;
    std::vector<double> probs;  // indexed by the model bit mask (bit j = covariate j)
    VectorXd pip;
    int p = 0;

    double prob(const ModelIndicator& gamma) const {
        std::uint64_t mask = 0;
        for (int j : gamma.included) mask |= (std::uint64_t{1} << j);
        return probs[mask];
    }

    ModelIndicator mode() const {
        std::uint64_t best = 0;
        for (std::uint64_t m = 1; m < probs.size(); ++m)
            if (probs[m] > probs[best]) best = m;
        return ModelIndicator::from_mask(best, p);
    }
};

/// Precomputes log p(y | gamma) for all 2^p models so that posteriors under
/// many different model priors (e.g. along an EM path) reuse the same
/// marginals. Rank-deficient models carry -inf and get zero mass.
class ModelEnumeration {
  public:
    ModelEnumeration(const Dataset& data, const ZellnerConfig& cfg, int max_p = 20,
                     std::shared_ptr<LogMarginalCache> cache = nullptr)
        : p_(data.p()) {
        if (p_ > max_p)
            throw TooLarge("ModelEnumeration: p = " + std::to_string(p_) + " exceeds cap " +
                           std::to_string(max_p));
        MarginalEvaluator eval(data, cfg, std::move(cache));
        const std::size_t total = std::size_t{1} << p_;
        logm_.resize(total);
        for (std::size_t mask = 0; mask < total; ++mask)
            logm_[mask] = eval(ModelIndicator::from_mask(mask, p_));
    }

    int p() const { return p_; }
    double log_marginal(std::uint64_t mask) const { return logm_[mask]; }

    ExactPosterior posterior(const ModelPrior& prior) const {
        const std::size_t total = logm_.size();
        std::vector<double> logpost(total);
        double best = -std::numeric_limits<double>::infinity();
        if (prior.factorizable()) {
            const VectorXd m = prior_inclusion_probs(prior, p_);
            VectorXd logit(p_);
            double base = 0.0;
            for (int j = 0; j < p_; ++j) {
                logit[j] = std::log(m[j]) - std::log1p(-m[j]);
                base += std::log1p(-m[j]);
            }
            for (std::size_t mask = 0; mask < total; ++mask) {
                double lp = base;
                for (std::uint64_t bits = mask; bits;) {
                    lp += logit[__builtin_ctzll(bits)];
                    bits &= bits - 1;
                }
                logpost[mask] = logm_[mask] + lp;
                best = std::max(best, logpost[mask]);
            }
        } else {
            const auto& bb = std::get<BetaBinomialPrior>(prior.v);
            std::vector<double> by_size(p_ + 1);
            const double norm = detail::lbeta(bb.alpha, bb.beta);
            for (int k = 0; k <= p_; ++k)
                by_size[k] = detail::lbeta(bb.alpha + k, bb.beta + p_ - k) - norm;
            for (std::size_t mask = 0; mask < total; ++mask) {
                logpost[mask] = logm_[mask] + by_size[__builtin_popcountll(mask)];
                best = std::max(best, logpost[mask]);
            }
        }

        ExactPosterior out;
        out.p = p_;
        out.probs.resize(total);
        double sum = 0.0;
        for (std::size_t mask = 0; mask < total; ++mask) {
            const double w = std::isinf(logpost[mask]) ? 0.0 : std::exp(logpost[mask] - best);
            out.probs[mask] = w;
            sum += w;
        }
        out.log_evidence = best + std::log(sum);
        out.pip = VectorXd::Zero(p_);
        for (std::size_t mask = 0; mask < total; ++mask) {
            out.probs[mask] /= sum;
            for (std::uint64_t bits = mask; bits;) {
                out.pip[__builtin_ctzll(bits)] += out.probs[mask];
                bits &= bits - 1;
            }
        }
        return out;
    }

    double log_evidence(const ModelPrior& prior) const { return posterior(prior).log_evidence; }

  private:
    int p_;
    std::vector<double> logm_;
};

/// Exact normalized posterior over all 2^p models.
inline ExactPosterior enumerate_posterior(const Dataset& data, const ModelPrior& prior,
                                          const ZellnerConfig& cfg, int max_p = 20) {
    return ModelEnumeration(data, cfg, max_p).posterior(prior);
}

}  // namespace metabvs
