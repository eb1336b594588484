#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace metabvs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};
struct RankDeficient : Error {
    using Error::Error;
};
struct RankDeficientZ : Error {
    using Error::Error;
};
struct NonPositiveVariance : Error {
    using Error::Error;
};
struct InvalidHyper : Error {
    using Error::Error;
};
struct WeightsNotNormalized : Error {
    using Error::Error;
};
struct NotFactorizable : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
struct NotBlockStructured : Error {
    using Error::Error;
};
struct TooLarge : Error {
    using Error::Error;
};
struct NoConvergence : Error {
    using Error::Error;
};
struct DegenerateVariance : Error {
    using Error::Error;
};
struct MalformedCsv : Error {
    using Error::Error;
};

/// Response vector y and n x p design matrix X.
///
/// `standardized` records whether the columns of X were rescaled to unit
/// sample variance (divisor n-1). The model itself has no intercept; center
/// y beforehand if it is not already.
struct Dataset {
    VectorXd y;
    MatrixXd X;
    bool standardized = false;

    Dataset() = default;
    Dataset(VectorXd y_, MatrixXd X_, bool standardized_ = false)
        : y(std::move(y_)), X(std::move(X_)), standardized(standardized_) {
        if (y.size() != X.rows())
            throw DimensionMismatch("Dataset: y has " + std::to_string(y.size()) +
                                    " entries but X has " + std::to_string(X.rows()) + " rows");
        if (X.rows() < 1 || X.cols() < 1)
            throw DimensionMismatch("Dataset: need n >= 1 and p >= 1");
    }

    int n() const { return static_cast<int>(X.rows()); }
    int p() const { return static_cast<int>(X.cols()); }
};

/// Rescales every column of X to unit sample variance (divisor n-1).
/// Returns the scale factors (original column standard deviations).
/// Constant columns are rejected.
inline VectorXd standardize_columns(Dataset& data) {
    const int n = data.n(), p = data.p();
    if (n < 2) throw DimensionMismatch("standardize_columns: need n >= 2");
    VectorXd scales(p);
    for (int j = 0; j < p; ++j) {
        const double mean = data.X.col(j).mean();
        const double ss = (data.X.col(j).array() - mean).square().sum();
        const double sd = std::sqrt(ss / (n - 1));
        if (!(sd > 0.0))
            throw DegenerateVariance("standardize_columns: column " + std::to_string(j + 1) +
                                     " is constant");
        data.X.col(j) /= sd;
        scales[j] = sd;
    }
    data.standardized = true;
    return scales;
}

/// Canonical packed-bit key identifying a model; used for caching and CSV output.
using ModelKey = std::vector<std::uint64_t>;

/// A model: the subset of covariate indices (0-based, strictly increasing)
/// whose coefficients are nonzero.
struct ModelIndicator {
    std::vector<int> included;

    ModelIndicator() = default;
    explicit ModelIndicator(std::vector<int> idx) : included(std::move(idx)) {
        std::sort(included.begin(), included.end());
        included.erase(std::unique(included.begin(), included.end()), included.end());
    }

    int size() const { return static_cast<int>(included.size()); }
    bool empty() const { return included.empty(); }

    bool contains(int j) const {
        return std::binary_search(included.begin(), included.end(), j);
    }

    ModelIndicator with(int j) const {
        ModelIndicator out = *this;
        auto it = std::lower_bound(out.included.begin(), out.included.end(), j);
        if (it == out.included.end() || *it != j) out.included.insert(it, j);
        return out;
    }

    ModelIndicator without(int j) const {
        ModelIndicator out = *this;
        auto it = std::lower_bound(out.included.begin(), out.included.end(), j);
        if (it != out.included.end() && *it == j) out.included.erase(it);
        return out;
    }

    void check_valid(int p) const {
        for (int j : included)
            if (j < 0 || j >= p)
                throw DimensionMismatch("ModelIndicator: index " + std::to_string(j) +
                                        " out of range for p = " + std::to_string(p));
    }

    ModelKey key(int p) const {
        ModelKey k((p + 63) / 64, 0);
        for (int j : included) k[j / 64] |= (std::uint64_t{1} << (j % 64));
        return k;
    }

    /// Bit j set means covariate j is included (bit 0 = first covariate).
    static ModelIndicator from_mask(std::uint64_t mask, int p) {
        std::vector<int> idx;
        for (int j = 0; j < p; ++j)
            if (mask & (std::uint64_t{1} << j)) idx.push_back(j);
        return ModelIndicator(std::move(idx));
    }

    std::string bit_string(int p) const {
        std::string s(p, '0');
        for (int j : included) s[j] = '1';
        return s;
    }

    friend bool operator==(const ModelIndicator& a, const ModelIndicator& b) {
        return a.included == b.included;
    }
    friend bool operator<(const ModelIndicator& a, const ModelIndicator& b) {
        return a.included < b.included;
    }
};

}  // namespace metabvs
