#pragma once

#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "npmc/bootstrap_filter.hpp"
#include "npmc/numerics.hpp"
#include "npmc/prior.hpp"
#include "npmc/rng.hpp"

namespace npmc {

struct ChainState
{
    ParameterVector theta;
    LogWeight cached_log_lik = neg_inf;
    double cached_log_prior = neg_inf;
    bool accepted = false;
};

struct PmhConfig
{
    std::size_t chain_length = 2000; ///< L
    Matrix proposal_covariance;
    std::size_t particles = 400;
    double burn_in_fraction = 0.5;

    /// (2/10) * diag(0.22, 4, 0.4): the random-walk covariance for the
    /// tracking parameters.
    static Matrix tracking_proposal_covariance()
    {
        return 0.2 * Vector{{0.22, 4.0, 0.4}}.asDiagonal().toDenseMatrix();
    }

    void validate() const
    {
        if (chain_length < 2)
            throw UsageError("PmhConfig: chain length must be at least 2");
        if (particles == 0)
            throw UsageError("PmhConfig: N must be positive");
        if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
            throw UsageError("PmhConfig: burn-in fraction must lie in [0, 1)");
    }
};

struct PmhResult
{
    /// theta_0 .. theta_L.
    std::vector<ChainState> chain;
    double acceptance_rate = 0.0;
};

/*!
 * Pseudo-marginal random-walk Metropolis-Hastings.
 *
 * theta_0 ~ p_0. Each step proposes N(theta_{r-1}, C), estimates its
 * likelihood once, and accepts when log u < log target(proposal) -
 * log target(current), with the current state's estimate taken from the
 * cache; it is never re-estimated. A -inf estimate is always rejected.
 * Step r uses stream rng.split(r); step 0 draws the initial state.
 */
template <ParameterPrior Prior, LikelihoodEstimator Likelihood>
PmhResult run_pmh(const Prior& prior, const Likelihood& likelihood, const PmhConfig& config, const RngStream& rng)
{
    config.validate();
    const auto d = static_cast<Eigen::Index>(prior.dimension());
    if (config.proposal_covariance.rows() != d || config.proposal_covariance.cols() != d)
        throw UsageError("run_pmh: proposal covariance has wrong dimension");
    const Gaussian step_noise(Vector::Zero(d), config.proposal_covariance);

    PmhResult result;
    result.chain.reserve(config.chain_length + 1);
    {
        RngStream init = rng.split(0);
        ChainState s;
        s.theta = prior.sample(init);
        s.cached_log_prior = prior.log_pdf(s.theta);
        s.cached_log_lik = likelihood(s.theta, init);
        s.accepted = true;
        result.chain.push_back(std::move(s));
    }
    std::size_t accepted = 0;
    for (std::size_t r = 1; r <= config.chain_length; ++r)
    {
        RngStream step = rng.split(r);
        const ChainState& current = result.chain.back();
        ParameterVector candidate = current.theta + step_noise.sample(step);
        const double log_prior = prior.log_pdf(candidate);
        // The draw order is fixed (proposal, estimate, u) whatever the outcome.
        const double log_lik = likelihood(candidate, step);
        const double log_u = std::log(step.uniform_open());

        const double proposed = log_lik + log_prior;
        const double current_target = current.cached_log_lik + current.cached_log_prior;
        bool accept = false;
        if (proposed != neg_inf)
            accept = current_target == neg_inf || log_u < proposed - current_target;
        if (accept)
        {
            result.chain.push_back(ChainState{std::move(candidate), log_lik, log_prior, true});
            ++accepted;
        }
        else
        {
            ChainState copy = current;
            copy.accepted = false;
            result.chain.push_back(std::move(copy));
        }
    }
    result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(config.chain_length);
    return result;
}

template <ParameterPrior Prior, StateSpaceModel Model>
PmhResult run_pmh(const Model& model, const Observations& y, const Prior& prior, const PmhConfig& config,
                  const RngStream& rng)
{
    return run_pmh(prior, BootstrapLikelihood<Model>(model, y, config.particles), config, rng);
}

/// Mean of theta_{floor(f L)+1} .. theta_L for a chain theta_0 .. theta_L.
inline ParameterVector pmh_posterior_mean(std::span<const ChainState> chain, double burn_in_fraction)
{
    if (chain.size() < 2 || !(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
        throw UsageError("pmh_posterior_mean: chain too short or invalid burn-in");
    const std::size_t length = chain.size() - 1;
    const auto first = static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(length))) + 1;
    if (first > length)
        throw UsageError("pmh_posterior_mean: empty post-burn-in segment");
    ParameterVector mean = ParameterVector::Zero(chain.front().theta.size());
    for (std::size_t r = first; r <= length; ++r)
        mean += chain[r].theta;
    return mean / static_cast<double>(length - first + 1);
}

/// CSV, one row per step: step, theta components, cached log-likelihood,
/// accepted flag.
inline void write_chain(std::ostream& os, std::span<const ChainState> chain)
{
    if (chain.empty())
        return;
    os << "step";
    for (Eigen::Index c = 0; c < chain.front().theta.size(); ++c)
        os << ",theta_" << c;
    os << ",log_likelihood,accepted\n";
    const auto old_prec = os.precision(17);
    for (std::size_t r = 0; r < chain.size(); ++r)
    {
        os << r;
        for (Eigen::Index c = 0; c < chain[r].theta.size(); ++c)
            os << "," << chain[r].theta[c];
        os << "," << chain[r].cached_log_lik << "," << (chain[r].accepted ? 1 : 0) << "\n";
    }
    os.precision(old_prec);
}

} // namespace npmc
