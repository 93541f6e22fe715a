#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "npmc/numerics.hpp"
#include "npmc/rng.hpp"
#include "npmc/ssm.hpp"

namespace npmc {

/// log l^N(y | theta) together with the filter settings that produced it.
struct LikelihoodEstimate
{
    LogWeight log_value = neg_inf;
    std::size_t particle_count = 0;
    std::size_t horizon = 0;
};

namespace detail {

// One pass of the bootstrap filter. Calls on_resampled(n, particles) after
// each resampling step. Returns the log-likelihood estimate; stops early
// with -inf when every particle has zero weight.
template <StateSpaceModel Model, class OnResampled>
double bootstrap_pass(const Model& model, const ParameterVector& theta, const Observations& y,
                      std::size_t particle_count, RngStream& rng, OnResampled&& on_resampled)
{
    if (particle_count == 0)
        throw UsageError("bootstrap filter: particle count must be positive");
    if (y.rows() == 0)
        throw UsageError("bootstrap filter: no observations");
    if (static_cast<std::size_t>(y.cols()) != model.observation_dimension())
        throw UsageError("bootstrap filter: observation dimension mismatch");

    const auto params = model.bind(theta);
    const double log_n = std::log(static_cast<double>(particle_count));
    typename Model::Particles particles;
    model.sample_prior(particles, particle_count, rng);

    std::vector<double> log_w(particle_count);
    std::vector<double> w(particle_count);
    Eigen::ArrayXd scratch;
    std::vector<std::size_t> ancestors(particle_count);
    double total = 0.0;
    for (Eigen::Index n = 0; n < y.rows(); ++n)
    {
        const auto step = static_cast<std::size_t>(n + 1);
        model.propagate(particles, params, step, rng);
        model.log_likelihood(particles, y.row(n), params, log_w);

        // Average of the weights over the predictive particle cloud.
        const double lse = exp_normalize(log_w, w);
        if (lse == neg_inf)
            return neg_inf;
        total += lse - log_n;

        multinomial_sample_sorted(w, ancestors, rng, scratch);
        model.resample(particles, ancestors);
        on_resampled(step, particles);
    }
    return total;
}

} // namespace detail

/*!
 * Bootstrap particle filter estimate of the log-likelihood.
 *
 * Particles are drawn from the prior, moved with the transition kernel,
 * weighted by the observation density and resampled multinomially at every
 * step. The returned value is the log of the product over steps of the
 * average unnormalized weight; its exponential is an unbiased estimate of
 * l(y | theta). A collapse (all weights zero) yields -inf.
 *
 * Stateless: concurrent calls are safe given distinct streams.
 */
template <StateSpaceModel Model>
LikelihoodEstimate run_bootstrap_filter(const Model& model, const ParameterVector& theta,
                                        const Observations& y, std::size_t particle_count,
                                        RngStream& rng)
{
    const double value = detail::bootstrap_pass(model, theta, y, particle_count, rng, [](auto, const auto&) {});
    return {value, particle_count, static_cast<std::size_t>(y.rows())};
}

/// Per-step mean of the resampled (unweighted) particles, one entry per
/// observation. Steps after a weight collapse are not reported.
template <StateSpaceModel Model>
std::vector<Vector> filter_posterior_mean(const Model& model, const ParameterVector& theta,
                                          const Observations& y, std::size_t particle_count,
                                          RngStream& rng)
{
    std::vector<Vector> means;
    means.reserve(static_cast<std::size_t>(y.rows()));
    detail::bootstrap_pass(model, theta, y, particle_count, rng,
                           [&](auto, const auto& particles) { means.push_back(model.particle_mean(particles)); });
    return means;
}

/// Adapts a model and data set to the likelihood-estimator interface used
/// by the parameter samplers: (theta, rng) -> log l^N(y | theta).
template <StateSpaceModel Model>
class BootstrapLikelihood
{
  public:
    BootstrapLikelihood(const Model& model, const Observations& y, std::size_t particle_count)
        : model_(&model), y_(&y), particle_count_(particle_count)
    {
    }

    double operator()(const ParameterVector& theta, RngStream& rng) const
    {
        return run_bootstrap_filter(*model_, theta, *y_, particle_count_, rng).log_value;
    }

    std::size_t particle_count() const { return particle_count_; }

  private:
    const Model* model_;
    const Observations* y_;
    std::size_t particle_count_;
};

} // namespace npmc
