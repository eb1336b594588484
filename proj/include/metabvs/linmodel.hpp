#pragma once

#include <atomic>
#include <cmath>
#include <limits>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <utility>

#include "types.hpp"

namespace metabvs {

/// Gaussian coefficient prior theta_gamma ~ N(0, g_theta * phi * n * (X'X)^-1)
/// plus the treatment of the error variance phi: either fixed (Known) or
/// integrated against phi ~ InverseGamma(shape = a0/2, rate = b0/2).
/// The a0 = b0 = 0.01 default makes the variance prior minimally informative.
struct ZellnerConfig {
    enum class VarianceMode { Known, InverseGamma };

    double g_theta = 1.0;
    VarianceMode mode = VarianceMode::Known;
    double phi = 1.0;   // Known mode
    double a0 = 0.01;   // InverseGamma mode
    double b0 = 0.01;

    static ZellnerConfig known(double g, double phi_) {
        ZellnerConfig c;
        c.g_theta = g;
        c.mode = VarianceMode::Known;
        c.phi = phi_;
        return c;
    }
    static ZellnerConfig inverse_gamma(double g, double a0_ = 0.01, double b0_ = 0.01) {
        ZellnerConfig c;
        c.g_theta = g;
        c.mode = VarianceMode::InverseGamma;
        c.a0 = a0_;
        c.b0 = b0_;
        return c;
    }

    void validate() const {
        if (!(g_theta > 0.0)) throw InvalidHyper("ZellnerConfig: g_theta must be > 0");
        if (mode == VarianceMode::Known) {
            if (!(phi > 0.0)) throw NonPositiveVariance("ZellnerConfig: phi must be > 0");
        } else {
            if (!(a0 > 0.0) || !(b0 > 0.0))
                throw InvalidHyper("ZellnerConfig: a0 and b0 must be > 0");
        }
    }
};

struct FitResult {
    VectorXd theta_hat;      // least-squares coefficients, one per included covariate
    double fitted_sumsq;     // theta' X'X theta = y' P y
    double residual_sumsq;   // y'y - fitted_sumsq
};

namespace detail {

// Rank rule: the smallest pivot of the (LDL'-style) factorization must stay
// above 1e-10 times the largest. Exact duplicate columns produce pivots at
// roundoff level (~1e-16 relative) and are excluded; strongly correlated but
// distinct columns keep pivots far above the threshold.
constexpr double kRankTol = 1e-10;

/// Cholesky C = L L' with the rank rule applied to the squared factor
/// diagonal (the pivots). Returns std::nullopt when C is numerically rank
/// deficient.
inline std::optional<MatrixXd> cholesky_rank_checked(const MatrixXd& C) {
    const int k = static_cast<int>(C.rows());
    MatrixXd L = MatrixXd::Zero(k, k);
    double max_pivot = 0.0;
    for (int i = 0; i < k; ++i) {
        double d = C(i, i);
        for (int l = 0; l < i; ++l) d -= L(i, l) * L(i, l);
        if (!(d > 0.0)) return std::nullopt;
        max_pivot = std::max(max_pivot, d);
        if (d <= kRankTol * max_pivot) return std::nullopt;
        const double di = std::sqrt(d);
        L(i, i) = di;
        for (int r = i + 1; r < k; ++r) {
            double s = C(r, i);
            for (int l = 0; l < i; ++l) s -= L(r, l) * L(i, l);
            L(r, i) = s / di;
        }
    }
    // the largest pivot may come after the smallest
    for (int i = 0; i < k; ++i)
        if (L(i, i) * L(i, i) <= kRankTol * max_pivot) return std::nullopt;
    return L;
}

}  // namespace detail

/// Least squares fit of y on the columns selected by gamma.
inline FitResult least_squares_fit(const Dataset& data, const ModelIndicator& gamma) {
    gamma.check_valid(data.p());
    const int k = gamma.size();
    const double yty = data.y.squaredNorm();
    if (k == 0) return FitResult{VectorXd(0), 0.0, yty};
    if (k > data.n())
        throw RankDeficient("least_squares_fit: |gamma| = " + std::to_string(k) +
                            " exceeds n = " + std::to_string(data.n()));

    MatrixXd Xg(data.n(), k);
    for (int c = 0; c < k; ++c) Xg.col(c) = data.X.col(gamma.included[c]);
    const MatrixXd C = Xg.transpose() * Xg;
    const VectorXd b = Xg.transpose() * data.y;

    auto L = detail::cholesky_rank_checked(C);
    if (!L) throw RankDeficient("least_squares_fit: X_gamma is numerically rank deficient");

    const VectorXd w = L->triangularView<Eigen::Lower>().solve(b);
    const double fitted = w.squaredNorm();
    VectorXd theta = L->transpose().triangularView<Eigen::Upper>().solve(w);
    return FitResult{std::move(theta), fitted, std::max(0.0, yty - fitted)};
}

/// log p(y | gamma) from the sufficient pieces (fitted sum of squares, model
/// size, n, y'y). Known variance:
///   y | gamma ~ N(0, phi (I + g n P_gamma)),
/// giving
///   -(n/2) log(2 pi phi) - (k/2) log(1+gn) - [y'y - gn/(1+gn) fitted] / (2 phi).
/// Unknown variance integrates phi ~ InverseGamma(a0/2, b0/2) analytically,
/// which turns the Gaussian kernel into a Student-type expression.
inline double log_marginal_core(double fitted_sumsq, int k, int n, double yty,
                                const ZellnerConfig& cfg) {
    cfg.validate();
    static const double log2pi = std::log(2.0 * M_PI);
    const double gn = cfg.g_theta * static_cast<double>(n);
    const double log1gn = std::log1p(gn);
    const double shrink = gn / (1.0 + gn);
    const double S = yty - shrink * fitted_sumsq;  // y' (I + gn P)^-1 y
    if (cfg.mode == ZellnerConfig::VarianceMode::Known) {
        return -0.5 * n * (log2pi + std::log(cfg.phi)) - 0.5 * k * log1gn - S / (2.0 * cfg.phi);
    }
    const double alpha = 0.5 * cfg.a0;
    const double beta = 0.5 * cfg.b0;
    return -0.5 * n * log2pi - 0.5 * k * log1gn + alpha * std::log(beta) - std::lgamma(alpha) +
           std::lgamma(0.5 * n + alpha) - (0.5 * n + alpha) * std::log(0.5 * S + beta);
}

inline double log_marginal_known_var(const Dataset& data, const ModelIndicator& gamma,
                                     const ZellnerConfig& cfg) {
    if (cfg.mode != ZellnerConfig::VarianceMode::Known)
        throw InvalidHyper("log_marginal_known_var: config is not in Known variance mode");
    const FitResult fit = least_squares_fit(data, gamma);
    return log_marginal_core(fit.fitted_sumsq, gamma.size(), data.n(), data.y.squaredNorm(), cfg);
}

inline double log_marginal_unknown_var(const Dataset& data, const ModelIndicator& gamma,
                                       const ZellnerConfig& cfg) {
    if (cfg.mode != ZellnerConfig::VarianceMode::InverseGamma)
        throw InvalidHyper("log_marginal_unknown_var: config is not in InverseGamma mode");
    const FitResult fit = least_squares_fit(data, gamma);
    return log_marginal_core(fit.fitted_sumsq, gamma.size(), data.n(), data.y.squaredNorm(), cfg);
}

inline double log_marginal(const Dataset& data, const ModelIndicator& gamma,
                           const ZellnerConfig& cfg) {
    const FitResult fit = least_squares_fit(data, gamma);
    return log_marginal_core(fit.fitted_sumsq, gamma.size(), data.n(), data.y.squaredNorm(), cfg);
}

/// Posterior mean E[theta_gamma | y, gamma] = gn/(1+gn) * theta_hat.
inline VectorXd posterior_shrinkage_mean(const FitResult& fit, const ZellnerConfig& cfg, int n) {
    const double gn = cfg.g_theta * static_cast<double>(n);
    const double factor = std::isinf(gn) ? 1.0 : gn / (1.0 + gn);
    return factor * fit.theta_hat;
}

/// Model-averaged coefficient vector: sum of posterior-weighted shrinkage
/// means, each embedded at its covariate indices.
inline VectorXd bma_point_estimate(const std::map<ModelIndicator, double>& weights,
                                   const Dataset& data, const ZellnerConfig& cfg) {
    double total = 0.0;
    for (const auto& [gamma, wgt] : weights) {
        if (wgt < 0.0) throw WeightsNotNormalized("bma_point_estimate: negative weight");
        total += wgt;
    }
    if (std::abs(total - 1.0) > 1e-8)
        throw WeightsNotNormalized("bma_point_estimate: weights sum to " + std::to_string(total));
    VectorXd out = VectorXd::Zero(data.p());
    for (const auto& [gamma, wgt] : weights) {
        if (wgt == 0.0) continue;
        const FitResult fit = least_squares_fit(data, gamma);
        const VectorXd mean = posterior_shrinkage_mean(fit, cfg, data.n());
        for (int c = 0; c < gamma.size(); ++c) out[gamma.included[c]] += wgt * mean[c];
    }
    return out;
}

namespace detail {
struct ModelKeyHash {
    std::size_t operator()(const ModelKey& k) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::uint64_t w : k) {
            h ^= w;
            h *= 0x100000001b3ULL;
            h = (h ^ (h >> 29)) * 0xBF58476D1CE4E5B9ULL;
        }
        return static_cast<std::size_t>(h);
    }
};
}  // namespace detail

/// Sharded LRU cache for log p(y | gamma), keyed by the packed model bits.
/// Values are deterministic functions of the key, so concurrent inserts of
/// the same key are benign (last writer wins).
class LogMarginalCache {
  public:
    explicit LogMarginalCache(std::size_t capacity = std::size_t{1} << 20)
        : n_shards_(capacity >= 16 * kShards ? kShards : 1),
          capacity_per_shard_(std::max<std::size_t>(1, capacity / n_shards_)) {}

    std::optional<double> lookup(const ModelKey& key) {
        Shard& s = shard(key);
        std::lock_guard<std::mutex> lock(s.mtx);
        auto it = s.index.find(key);
        if (it == s.index.end()) {
            misses_.fetch_add(1, std::memory_order_relaxed);
            return std::nullopt;
        }
        s.lru.splice(s.lru.begin(), s.lru, it->second);
        hits_.fetch_add(1, std::memory_order_relaxed);
        return it->second->second;
    }

    void insert(const ModelKey& key, double value) {
        Shard& s = shard(key);
        std::lock_guard<std::mutex> lock(s.mtx);
        auto it = s.index.find(key);
        if (it != s.index.end()) {
            it->second->second = value;
            s.lru.splice(s.lru.begin(), s.lru, it->second);
            return;
        }
        s.lru.emplace_front(key, value);
        s.index[key] = s.lru.begin();
        if (s.index.size() > capacity_per_shard_) {
            s.index.erase(s.lru.back().first);
            s.lru.pop_back();
        }
    }

    std::size_t size() const {
        std::size_t total = 0;
        for (std::size_t i = 0; i < n_shards_; ++i) {
            std::lock_guard<std::mutex> lock(shards_[i].mtx);
            total += shards_[i].index.size();
        }
        return total;
    }
    std::uint64_t hits() const { return hits_.load(); }
    std::uint64_t misses() const { return misses_.load(); }

  private:
    static constexpr std::size_t kShards = 16;
    struct Shard {
        mutable std::mutex mtx;
        std::list<std::pair<ModelKey, double>> lru;
        std::unordered_map<ModelKey, std::list<std::pair<ModelKey, double>>::iterator,
                           detail::ModelKeyHash>
            index;
    };

    Shard& shard(const ModelKey& key) {
        return shards_[detail::ModelKeyHash{}(key) % n_shards_];
    }

    std::size_t n_shards_;
    std::size_t capacity_per_shard_;
    mutable std::atomic<std::uint64_t> hits_{0}, misses_{0};
    Shard shards_[kShards];
};

/// Cache-through evaluator of log p(y | gamma). Rank-deficient models are
/// mapped to -inf (excluded from the model space) instead of throwing.
class MarginalEvaluator {
  public:
    MarginalEvaluator(const Dataset& data, const ZellnerConfig& cfg,
                      std::shared_ptr<LogMarginalCache> cache = nullptr)
        : data_(&data), cfg_(cfg), cache_(std::move(cache)), yty_(data.y.squaredNorm()) {
        cfg_.validate();
    }

    double operator()(const ModelIndicator& gamma) const {
        const ModelKey key = gamma.key(data_->p());
        if (cache_) {
            if (auto hit = cache_->lookup(key)) return *hit;
        }
        double value;
        try {
            const FitResult fit = least_squares_fit(*data_, gamma);
            value = log_marginal_core(fit.fitted_sumsq, gamma.size(), data_->n(), yty_, cfg_);
        } catch (const RankDeficient&) {
            value = -std::numeric_limits<double>::infinity();
        }
        if (cache_) cache_->insert(key, value);
        return value;
    }

    const Dataset& data() const { return *data_; }
    const ZellnerConfig& config() const { return cfg_; }
    double yty() const { return yty_; }

  private:
    const Dataset* data_;
    ZellnerConfig cfg_;
    std::shared_ptr<LogMarginalCache> cache_;
    double yty_;
};

/// Incrementally maintained Cholesky factor of X_gamma' X_gamma for Gibbs
/// sweeps: adding or removing one covariate costs O(|gamma|^2) instead of a
/// fresh O(|gamma|^3) factorization. A full refactorization runs every
/// `refactor_period` committed flips to bound floating-point drift.
///
/// Internally R is upper triangular with R'R = C restricted to the members
/// (in insertion order) and w = R^-T b, so fitted_sumsq = |w|^2.
class GramFactor {
  public:
    GramFactor(const MatrixXd& XtX, const VectorXd& Xty, int n, int refactor_period = 0)
        : C_(&XtX),
          b_(&Xty),
          n_(n),
          refactor_period_(refactor_period > 0 ? refactor_period
                                               : static_cast<int>(XtX.rows())) {}

    int size() const { return static_cast<int>(members_.size()); }
    const std::vector<int>& members() const { return members_; }
    double fitted_sumsq() const { return fitted_; }

    bool contains(int j) const {
        return std::find(members_.begin(), members_.end(), j) != members_.end();
    }

    /// Fitted sum of squares if covariate j were added; nullopt when the
    /// augmented design is rank deficient.
    std::optional<double> fitted_if_added(int j) const {
        AddStep step;
        if (!compute_add(j, step)) return std::nullopt;
        return fitted_ + step.w_new * step.w_new;
    }

    /// Fitted sum of squares if covariate j (a member) were removed.
    double fitted_if_removed(int j) const {
        const int t = position_of(j);
        const int k = size();
        if (k == 1) return 0.0;
        // copy the trailing block affected by the deletion and rotate it
        MatrixXd Rt = R_.topLeftCorner(k, k);
        VectorXd wt = w_.head(k);
        const double removed = remove_core(Rt, wt, t);
        return fitted_ - removed * removed;
    }

    /// Adds covariate j. Returns false (and leaves the state untouched) when
    /// the augmented design fails the rank check.
    bool try_add(int j) {
        AddStep step;
        if (!compute_add(j, step)) return false;
        const int k = size();
        grow_to(k + 1);
        R_.col(k).head(k) = step.r;
        R_(k, k) = step.diag;
        w_[k] = step.w_new;
        fitted_ += step.w_new * step.w_new;
        members_.push_back(j);
        after_commit();
        return true;
    }

    void remove(int j) {
        const int t = position_of(j);
        const int k = size();
        MatrixXd Rt = R_.topLeftCorner(k, k);
        VectorXd wt = w_.head(k);
        const double removed = remove_core(Rt, wt, t);
        R_.topLeftCorner(k - 1, k - 1) = Rt.topLeftCorner(k - 1, k - 1);
        w_.head(k - 1) = wt.head(k - 1);
        fitted_ = std::max(0.0, fitted_ - removed * removed);
        members_.erase(members_.begin() + t);
        after_commit();
    }

    /// Rebuilds the factor from scratch (resets accumulated drift).
    void refactorize() {
        const int k = size();
        flips_since_refactor_ = 0;
        if (k == 0) {
            fitted_ = 0.0;
            return;
        }
        MatrixXd C(k, k);
        VectorXd b(k);
        for (int r = 0; r < k; ++r) {
            b[r] = (*b_)[members_[r]];
            for (int c = 0; c < k; ++c) C(r, c) = (*C_)(members_[r], members_[c]);
        }
        auto L = detail::cholesky_rank_checked(C);
        if (!L) throw RankDeficient("GramFactor: refactorization found rank-deficient model");
        grow_to(k);
        R_.topLeftCorner(k, k) = L->transpose();
        w_.head(k) = L->triangularView<Eigen::Lower>().solve(b);
        fitted_ = w_.head(k).squaredNorm();
    }

  private:
    struct AddStep {
        VectorXd r;
        double diag;
        double w_new;
    };

    int position_of(int j) const {
        auto it = std::find(members_.begin(), members_.end(), j);
        if (it == members_.end())
            throw DimensionMismatch("GramFactor: covariate not in the current model");
        return static_cast<int>(it - members_.begin());
    }

    bool compute_add(int j, AddStep& step) const {
        const int k = size();
        if (k >= n_) return false;
        step.r.resize(k);
        // forward solve R' r = C(members, j)
        for (int i = 0; i < k; ++i) {
            double s = (*C_)(members_[i], j);
            for (int l = 0; l < i; ++l) s -= R_(l, i) * step.r[l];
            step.r[i] = s / R_(i, i);
        }
        double d = (*C_)(j, j) - step.r.squaredNorm();
        if (!(d > 0.0)) return false;
        double max_pivot = d, min_pivot = d;
        for (int i = 0; i < k; ++i) {
            const double pivot = R_(i, i) * R_(i, i);
            max_pivot = std::max(max_pivot, pivot);
            min_pivot = std::min(min_pivot, pivot);
        }
        if (min_pivot <= detail::kRankTol * max_pivot) return false;
        const double nd = std::sqrt(d);
        step.diag = nd;
        step.w_new = ((*b_)[j] - step.r.dot(w_.head(k))) / nd;
        return true;
    }

    /// Deletes column t from the k x k upper factor R (in place, using Givens
    /// rotations) and applies the same rotations to w. Returns the entry of
    /// the rotated w that drops out (its square is the fitted-sumsq loss).
    static double remove_core(MatrixXd& R, VectorXd& w, int t) {
        const int k = static_cast<int>(R.rows());
        for (int col = t + 1; col < k; ++col) R.col(col - 1).head(col + 1) = R.col(col).head(col + 1);
        for (int i = t; i < k - 1; ++i) {
            const double a = R(i, i), b = R(i + 1, i);
            const double rad = std::hypot(a, b);
            if (rad == 0.0) continue;
            const double c = a / rad, s = b / rad;
            for (int col = i; col < k - 1; ++col) {
                const double x = R(i, col), y = R(i + 1, col);
                R(i, col) = c * x + s * y;
                R(i + 1, col) = -s * x + c * y;
            }
            R(i + 1, i) = 0.0;
            const double wx = w[i], wy = w[i + 1];
            w[i] = c * wx + s * wy;
            w[i + 1] = -s * wx + c * wy;
        }
        return w[k - 1];
    }

    void grow_to(int k) {
        if (R_.rows() < k) {
            const int cap = std::max(k, static_cast<int>(R_.rows()) * 2 + 4);
            MatrixXd R2 = MatrixXd::Zero(cap, cap);
            R2.topLeftCorner(R_.rows(), R_.cols()) = R_;
            R_.swap(R2);
            VectorXd w2 = VectorXd::Zero(cap);
            w2.head(w_.size()) = w_;
            w_.swap(w2);
        }
    }

    void after_commit() {
        if (++flips_since_refactor_ >= refactor_period_) refactorize();
    }

    const MatrixXd* C_;
    const VectorXd* b_;
    int n_;
    int refactor_period_;
    std::vector<int> members_;
    MatrixXd R_{0, 0};
    VectorXd w_{0};
    double fitted_ = 0.0;
    int flips_since_refactor_ = 0;
};

}  // namespace metabvs
