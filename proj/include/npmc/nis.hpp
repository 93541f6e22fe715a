#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "npmc/bootstrap_filter.hpp"
#include "npmc/numerics.hpp"
#include "npmc/parallel.hpp"
#include "npmc/prior.hpp"
#include "npmc/rng.hpp"

namespace npmc {

//---------------------------------------------------------------------------//
// Types
//---------------------------------------------------------------------------//

enum class WeightTransform
{
    clip,     ///< nonlinear PMC: flatten the M_c largest weights
    identity, ///< plain PMC
};

/// Largest clipping parameter allowed for M samples: floor(sqrt(M)).
inline std::size_t default_clip_count(std::size_t sample_count)
{
    auto mc = static_cast<std::size_t>(std::sqrt(static_cast<double>(sample_count)));
    while (mc * mc > sample_count)
        --mc;
    while ((mc + 1) * (mc + 1) <= sample_count)
        ++mc;
    return std::max<std::size_t>(mc, 1);
}

struct SamplerConfig
{
    std::size_t samples = 100;   ///< M
    std::size_t iterations = 10; ///< K
    std::size_t clip_count = 0;  ///< M_c; 0 selects default_clip_count(M)
    std::size_t particles = 400; ///< N, for bootstrap-filter likelihoods
    WeightTransform transform = WeightTransform::clip;
    std::size_t workers = 1; ///< threads for the per-sample likelihoods

    std::size_t effective_clip_count() const
    {
        return clip_count == 0 ? default_clip_count(samples) : clip_count;
    }

    void validate() const
    {
        if (samples == 0)
            throw UsageError("SamplerConfig: M must be positive");
        if (particles == 0)
            throw UsageError("SamplerConfig: N must be positive");
        const std::size_t mc = effective_clip_count();
        if (transform == WeightTransform::clip && (mc < 1 || mc * mc > samples))
            throw UsageError("SamplerConfig: clipping parameter must satisfy 1 <= M_c <= sqrt(M)");
    }
};

/// q_k = N(mean, covariance).
struct GaussianProposal
{
    Vector mean;
    Matrix covariance;
};

/// One population of weighted parameter samples.
struct WeightedParameterCloud
{
    std::vector<ParameterVector> samples;
    std::vector<LogWeight> raw_log_weights;
    std::vector<LogWeight> transformed_log_weights;
    std::vector<double> normalized_weights;
    std::size_t iteration = 0;

    std::size_t size() const { return samples.size(); }
};

//---------------------------------------------------------------------------//
// Weight transformation
//---------------------------------------------------------------------------//

/*!
 * Clipping transform in the log domain.
 *
 * With t the clip_count-th largest input, returns min(w_i, t) for every i:
 * the clip_count largest weights (and any tied with t) are flattened to t,
 * all others are untouched.
 */
inline std::vector<LogWeight> clip_weights(std::span<const LogWeight> raw, std::size_t clip_count)
{
    if (clip_count < 1 || clip_count > raw.size())
        throw UsageError("clip_weights: clipping parameter out of range");
    std::vector<LogWeight> sorted(raw.begin(), raw.end());
    const auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(clip_count - 1);
    std::nth_element(sorted.begin(), nth, sorted.end(), std::greater<>());
    const LogWeight threshold = *nth;
    std::vector<LogWeight> out(raw.size());
    std::transform(raw.begin(), raw.end(), out.begin(), [threshold](LogWeight w) { return std::min(w, threshold); });
    return out;
}

inline std::vector<LogWeight> transform_weights(std::span<const LogWeight> raw, const SamplerConfig& config)
{
    if (config.transform == WeightTransform::identity)
        return {raw.begin(), raw.end()};
    return clip_weights(raw, config.effective_clip_count());
}

//---------------------------------------------------------------------------//
// Sampler
//---------------------------------------------------------------------------//

/*!
 * One importance-sampling step.
 *
 * Without a proposal (k = 0) the samples come from the prior and the raw
 * log-weight is the log-likelihood estimate alone. With a proposal q the
 * raw log-weight is log l^N + log p_0 - log q. Weights are transformed
 * according to config and normalized.
 *
 * Sample i of iteration k uses stream rng.split(k).split(i) for both its
 * draw and its likelihood estimate, so the result does not depend on the
 * number of workers.
 */
template <ParameterPrior Prior, LikelihoodEstimator Likelihood>
WeightedParameterCloud nis_iteration(const std::optional<GaussianProposal>& proposal, const Prior& prior,
                                     const Likelihood& likelihood, const SamplerConfig& config,
                                     std::size_t iteration, const RngStream& rng)
{
    config.validate();
    std::optional<Gaussian> q;
    if (proposal)
        q.emplace(proposal->mean, proposal->covariance);

    const std::size_t m = config.samples;
    WeightedParameterCloud cloud;
    cloud.iteration = iteration;
    cloud.samples.resize(m);
    cloud.raw_log_weights.resize(m);
    const RngStream iteration_rng = rng.split(iteration);
    parallel_for(m, config.workers, [&](std::size_t i) {
        RngStream sample_rng = iteration_rng.split(i);
        ParameterVector theta = q ? q->sample(sample_rng) : prior.sample(sample_rng);
        double log_w = likelihood(theta, sample_rng);
        if (q && log_w != neg_inf)
            log_w += prior.log_pdf(theta) - q->log_pdf(theta);
        if (std::isnan(log_w) || log_w == std::numeric_limits<double>::infinity())
            throw NumericalError("nis_iteration: invalid importance weight");
        cloud.samples[i] = std::move(theta);
        cloud.raw_log_weights[i] = log_w;
    });

    cloud.transformed_log_weights = transform_weights(cloud.raw_log_weights, config);
    try
    {
        cloud.normalized_weights = normalize_log_weights(cloud.transformed_log_weights);
    }
    catch (const DegenerateWeights&)
    {
        throw DegenerateWeights("all importance weights are zero at iteration " + std::to_string(iteration),
                                static_cast<long>(iteration));
    }
    return cloud;
}

/// Gaussian refit of the next proposal from a weighted cloud.
inline GaussianProposal fit_proposal(const WeightedParameterCloud& cloud)
{
    auto [mean, cov] = weighted_mean_cov(cloud.samples, cloud.normalized_weights);
    return {std::move(mean), std::move(cov)};
}

/// Full K-iteration sampler; returns the clouds of iterations 0..K.
template <ParameterPrior Prior, LikelihoodEstimator Likelihood>
std::vector<WeightedParameterCloud> run_sampler(const Prior& prior, const Likelihood& likelihood,
                                                const SamplerConfig& config, const RngStream& rng)
{
    config.validate();
    std::vector<WeightedParameterCloud> clouds;
    clouds.reserve(config.iterations + 1);
    clouds.push_back(nis_iteration(std::nullopt, prior, likelihood, config, 0, rng));
    for (std::size_t k = 1; k <= config.iterations; ++k)
        clouds.push_back(nis_iteration(fit_proposal(clouds.back()), prior, likelihood, config, k, rng));
    return clouds;
}

/// Convenience overload estimating the likelihood with a bootstrap filter
/// of config.particles particles.
template <ParameterPrior Prior, StateSpaceModel Model>
std::vector<WeightedParameterCloud> run_sampler(const Model& model, const Observations& y, const Prior& prior,
                                                const SamplerConfig& config, const RngStream& rng)
{
    return run_sampler(prior, BootstrapLikelihood<Model>(model, y, config.particles), config, rng);
}

//---------------------------------------------------------------------------//
// Estimators
//---------------------------------------------------------------------------//

inline ParameterVector posterior_mean(const WeightedParameterCloud& cloud)
{
    if (cloud.samples.empty())
        throw UsageError("posterior_mean: empty cloud");
    ParameterVector mean = ParameterVector::Zero(cloud.samples.front().size());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        mean += cloud.normalized_weights[i] * cloud.samples[i];
    return mean;
}

/// sum_i w_i |theta_i - theta_hat|^2.
inline double posterior_mse_estimate(const WeightedParameterCloud& cloud)
{
    const ParameterVector mean = posterior_mean(cloud);
    double mse = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        mse += cloud.normalized_weights[i] * (cloud.samples[i] - mean).squaredNorm();
    return mse;
}

/// Component-wise squared error of the posterior mean against `truth`.
inline Vector squared_errors(const ParameterVector& estimate, const ParameterVector& truth)
{
    if (estimate.size() != truth.size())
        throw UsageError("squared_errors: dimension mismatch");
    return (estimate - truth).array().square().matrix();
}

inline double estimation_error(const WeightedParameterCloud& cloud, const ParameterVector& truth)
{
    return squared_errors(posterior_mean(cloud), truth).sum();
}

//---------------------------------------------------------------------------//
// Serialization
//---------------------------------------------------------------------------//

/// CSV, one row per sample: theta components, raw, transformed and
/// normalized weight, iteration.
inline void write_cloud_header(std::ostream& os, std::size_t dimension)
{
    for (std::size_t c = 0; c < dimension; ++c)
        os << "theta_" << c << ",";
    os << "raw_log_weight,transformed_log_weight,normalized_weight,iteration\n";
}

inline void write_cloud_rows(std::ostream& os, const WeightedParameterCloud& cloud)
{
    const auto old_prec = os.precision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i)
    {
        for (Eigen::Index c = 0; c < cloud.samples[i].size(); ++c)
            os << cloud.samples[i][c] << ",";
        os << cloud.raw_log_weights[i] << "," << cloud.transformed_log_weights[i] << ","
           << cloud.normalized_weights[i] << "," << cloud.iteration << "\n";
    }
    os.precision(old_prec);
}

} // namespace npmc
