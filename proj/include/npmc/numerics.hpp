#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "npmc/rng.hpp"

namespace npmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A point in parameter space.
using ParameterVector = Eigen::VectorXd;

/// Natural-log weight; -inf stands for weight zero.
using LogWeight = double;

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

//---------------------------------------------------------------------------//
// Errors
//---------------------------------------------------------------------------//

/// Caller violated a precondition (bad argument, bad config value).
struct UsageError : std::invalid_argument
{
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure could not produce a meaningful result.
struct NumericalError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

/// Every weight of a population is zero.
struct DegenerateWeights : NumericalError
{
    explicit DegenerateWeights(const std::string& what, long iteration = -1)
        : NumericalError(what), iteration(iteration)
    {
    }

    long iteration;
};

//---------------------------------------------------------------------------//
// Log-domain weights
//---------------------------------------------------------------------------//

/// log(sum_i exp(values_i)), shifted by the maximum before exponentiation.
inline LogWeight log_sum_exp(std::span<const double> values)
{
    if (values.empty())
        throw UsageError("log_sum_exp: empty input");
    if (std::any_of(values.begin(), values.end(), [](double v) { return std::isnan(v); }))
        throw NumericalError("log_sum_exp: NaN input");
    const double top = *std::max_element(values.begin(), values.end());
    if (top == neg_inf)
        return neg_inf;
    if (top == std::numeric_limits<double>::infinity())
        throw NumericalError("log_sum_exp: +inf input");
    double sum = 0.0;
    for (double v : values)
        sum += std::exp(v - top);
    return top + std::log(sum);
}

/*!
 * Writes exp(values_i - lse) to `out` and returns lse = log_sum_exp(values),
 * with the same error policy. Vectorized; `out` is left untouched when every
 * value is -inf.
 */
inline LogWeight exp_normalize(std::span<const double> values, std::span<double> out)
{
    if (values.empty())
        throw UsageError("log_sum_exp: empty input");
    if (out.size() != values.size())
        throw UsageError("exp_normalize: output size mismatch");
    const auto n = static_cast<Eigen::Index>(values.size());
    const Eigen::Map<const Eigen::ArrayXd> v(values.data(), n);
    if (v.isNaN().any())
        throw NumericalError("log_sum_exp: NaN input");
    const double top = v.maxCoeff();
    if (top == neg_inf)
        return neg_inf;
    if (top == std::numeric_limits<double>::infinity())
        throw NumericalError("log_sum_exp: +inf input");
    // exp and the sum run on owned (aligned) storage: with wide SIMD, Eigen
    // treats an unaligned head with scalar code, which would make the last
    // bits depend on where the caller's buffer happens to sit.
    thread_local Eigen::ArrayXd buf;
    buf = v - top;
    buf = buf.exp();
    const double sum = buf.sum();
    buf /= sum;
    std::copy(buf.begin(), buf.end(), out.begin());
    return top + std::log(sum);
}

/// Normalized linear-domain probabilities exp(values_i - lse(values)).
inline std::vector<double> normalize_log_weights(std::span<const double> values)
{
    const double total = log_sum_exp(values);
    if (total == neg_inf)
        throw DegenerateWeights("normalize_log_weights: all weights are zero");
    std::vector<double> out(values.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
    {
        out[i] = std::exp(values[i] - total);
        sum += out[i];
    }
    // Rounding in exp/log leaves |sum - 1| ~ 1e-16 * size; fold it back.
    for (double& w : out)
        w /= sum;
    return out;
}

//---------------------------------------------------------------------------//
// Discrete sampling
//---------------------------------------------------------------------------//

/// Draws out.size() i.i.d. indices with probabilities proportional to
/// weights. Weights must be nonnegative and sum to one within 1e-9.
inline void multinomial_sample(std::span<const double> weights,
                               std::span<std::size_t> out,
                               RngStream& rng,
                               std::vector<double>& cumulative)
{
    if (weights.empty())
        throw UsageError("multinomial_sample: empty weight vector");
    cumulative.resize(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
    {
        if (!(weights[i] >= 0.0))
            throw UsageError("multinomial_sample: negative or NaN weight");
        acc += weights[i];
        cumulative[i] = acc;
    }
    if (std::abs(acc - 1.0) > 1e-9)
        throw UsageError("multinomial_sample: weights do not sum to one");
    const auto first = cumulative.begin();
    const auto last = cumulative.end();
    for (auto& idx : out)
    {
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(first, last, u);
        idx = static_cast<std::size_t>(std::min(it, last - 1) - first);
    }
}

/*!
 * Multinomial draw returned in nondecreasing index order, in O(N + count).
 *
 * The sorted uniforms come from normalized exponential spacings, so the
 * counts per index have exactly the multinomial law of multinomial_sample;
 * only the order of the output differs. Same preconditions.
 */
inline void multinomial_sample_sorted(std::span<const double> weights,
                                      std::span<std::size_t> out,
                                      RngStream& rng,
                                      Eigen::ArrayXd& spacings)
{
    if (weights.empty())
        throw UsageError("multinomial_sample: empty weight vector");
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
    {
        if (!(weights[i] >= 0.0))
            throw UsageError("multinomial_sample: negative or NaN weight");
        acc += weights[i];
        if (weights[i] > 0.0)
            last_positive = i;
    }
    if (std::abs(acc - 1.0) > 1e-9)
        throw UsageError("multinomial_sample: weights do not sum to one");

    const std::size_t n = out.size();
    spacings.resize(static_cast<Eigen::Index>(n + 1));
    for (auto& e : spacings)
        e = rng.uniform_open();
    spacings = -spacings.log();
    const double scale = acc / spacings.sum();

    double target = 0.0;
    double cw = weights[0];
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k)
    {
        target += spacings[static_cast<Eigen::Index>(k)] * scale;
        while (target > cw && j < last_positive)
            cw += weights[++j];
        out[k] = j;
    }
}

inline std::vector<std::size_t>
multinomial_sample(std::span<const double> weights, std::size_t count, RngStream& rng)
{
    if (count == 0)
        throw UsageError("multinomial_sample: count must be positive");
    std::vector<std::size_t> out(count);
    std::vector<double> cumulative;
    multinomial_sample(weights, out, rng, cumulative);
    return out;
}

//---------------------------------------------------------------------------//
// Gaussian utilities
//---------------------------------------------------------------------------//

/*!
 * Multivariate normal with a regularized Cholesky factor.
 *
 * Factorization is tried on the covariance as given; if that fails a
 * jitter eps*I is added, with eps = 1e-10 * trace/d (1e-10 when the trace
 * is zero), escalated by x10 up to three times. The same regularized
 * covariance serves both sampling and density evaluation.
 */
class Gaussian
{
  public:
    Gaussian(Vector mean, const Matrix& covariance) : mean_(std::move(mean))
    {
        const auto d = mean_.size();
        if (d == 0 || covariance.rows() != d || covariance.cols() != d)
            throw UsageError("Gaussian: dimension mismatch");
        if (!covariance.allFinite() || !mean_.allFinite())
            throw NumericalError("Gaussian: non-finite mean or covariance");
        const double scale = covariance.cwiseAbs().maxCoeff();
        if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + scale))
            throw UsageError("Gaussian: covariance not symmetric");

        const Matrix sym = 0.5 * (covariance + covariance.transpose());
        const double trace = sym.trace();
        double eps = trace > 0.0 ? 1e-10 * trace / static_cast<double>(d) : 1e-10;
        Eigen::LLT<Matrix> llt(sym);
        for (int attempt = 0; llt.info() != Eigen::Success || !factor_ok(llt); ++attempt)
        {
            if (attempt > 3)
                throw NumericalError("Gaussian: covariance not factorizable after jitter");
            llt.compute(sym + eps * Matrix::Identity(d, d));
            eps *= 10.0;
        }
        lower_ = llt.matrixL();
        log_det_ = 2.0 * lower_.diagonal().array().log().sum();
    }

    Eigen::Index dimension() const { return mean_.size(); }
    const Vector& mean() const { return mean_; }
    const Matrix& cholesky_lower() const { return lower_; }
    Matrix covariance() const { return lower_ * lower_.transpose(); }

    Vector sample(RngStream& rng) const
    {
        Vector z(mean_.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            z[i] = rng.normal();
        return mean_ + lower_.triangularView<Eigen::Lower>() * z;
    }

    double log_pdf(const Eigen::Ref<const Vector>& x) const
    {
        if (x.size() != mean_.size())
            throw UsageError("Gaussian::log_pdf: dimension mismatch");
        const Vector z = lower_.triangularView<Eigen::Lower>().solve(x - mean_);
        const double d = static_cast<double>(mean_.size());
        return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det_ + z.squaredNorm());
    }

  private:
    static bool factor_ok(const Eigen::LLT<Matrix>& llt)
    {
        const auto diag = llt.matrixLLT().diagonal();
        return diag.allFinite() && (diag.array() > 0.0).all();
    }

    Vector mean_;
    Matrix lower_;
    double log_det_ = 0.0;
};

inline Vector sample_multivariate_gaussian(const Vector& mean, const Matrix& covariance, RngStream& rng)
{
    return Gaussian(mean, covariance).sample(rng);
}

inline double gaussian_log_pdf(const Vector& x, const Vector& mean, const Matrix& covariance)
{
    return Gaussian(mean, covariance).log_pdf(x);
}

/// Scalar normal log-density.
inline double normal_log_pdf(double x, double mean, double variance)
{
    const double r = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + r * r / variance);
}

/// Weighted mean and (biased, weights-normalized) covariance of a cloud.
inline std::pair<Vector, Matrix> weighted_mean_cov(std::span<const ParameterVector> samples,
                                                   std::span<const double> weights)
{
    if (samples.empty() || samples.size() != weights.size())
        throw UsageError("weighted_mean_cov: sample/weight count mismatch");
    const auto d = samples.front().size();
    Vector mean = Vector::Zero(d);
    for (std::size_t i = 0; i < samples.size(); ++i)
    {
        if (samples[i].size() != d)
            throw UsageError("weighted_mean_cov: dimension mismatch");
        mean += weights[i] * samples[i];
    }
    Matrix cov = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < samples.size(); ++i)
    {
        const Vector r = samples[i] - mean;
        cov.noalias() += weights[i] * r * r.transpose();
    }
    return {std::move(mean), std::move(cov)};
}

} // namespace npmc
