#pragma once

#include <cmath>
#include <concepts>

#include "npmc/numerics.hpp"
#include "npmc/rng.hpp"

namespace npmc {

/// Parameter prior p_0: draws and log-density.
template <class P>
concept ParameterPrior = requires(const P& prior, const ParameterVector& theta, RngStream& rng) {
    { prior.sample(rng) } -> std::convertible_to<ParameterVector>;
    { prior.log_pdf(theta) } -> std::convertible_to<double>;
    { prior.dimension() } -> std::convertible_to<std::size_t>;
};

/// Estimator of log l(y | theta); may consume randomness.
template <class L>
concept LikelihoodEstimator = requires(const L& lik, const ParameterVector& theta, RngStream& rng) {
    { lik(theta, rng) } -> std::convertible_to<double>;
};

class GaussianPrior
{
  public:
    GaussianPrior(Vector mean, const Matrix& covariance) : dist_(std::move(mean), covariance) {}

    ParameterVector sample(RngStream& rng) const { return dist_.sample(rng); }
    double log_pdf(const ParameterVector& theta) const { return dist_.log_pdf(theta); }
    std::size_t dimension() const { return static_cast<std::size_t>(dist_.dimension()); }
    const Gaussian& distribution() const { return dist_; }

  private:
    Gaussian dist_;
};

/// Uniform on an axis-aligned box; log-density -inf outside.
class BoxUniformPrior
{
  public:
    BoxUniformPrior(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper))
    {
        if (lower_.size() != upper_.size() || lower_.size() == 0 || !(upper_.array() > lower_.array()).all())
            throw UsageError("BoxUniformPrior: invalid bounds");
        log_density_ = -(upper_ - lower_).array().log().sum();
    }

    ParameterVector sample(RngStream& rng) const
    {
        ParameterVector theta(lower_.size());
        for (Eigen::Index i = 0; i < theta.size(); ++i)
            theta[i] = rng.uniform(lower_[i], upper_[i]);
        return theta;
    }

    double log_pdf(const ParameterVector& theta) const
    {
        const bool inside = (theta.array() >= lower_.array()).all() && (theta.array() <= upper_.array()).all();
        return inside ? log_density_ : neg_inf;
    }

    std::size_t dimension() const { return static_cast<std::size_t>(lower_.size()); }

  private:
    Vector lower_, upper_;
    double log_density_ = 0.0;
};

/// Prior on [log P_t, nu, log rho] used for the tracking experiments.
inline GaussianPrior tracking_parameter_prior()
{
    return GaussianPrior(Vector{{-0.11, 0.0, -11.02}}, Vector{{0.22, 4.0, 0.4}}.asDiagonal().toDenseMatrix());
}

} // namespace npmc
