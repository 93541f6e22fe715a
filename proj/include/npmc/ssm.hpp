#pragma once

#include <concepts>
#include <cstddef>
#include <span>

#include <Eigen/Dense>

#include "npmc/numerics.hpp"
#include "npmc/rng.hpp"

namespace npmc {

/// Observation record y_{1:m}; row n-1 holds y_n.
using Observations = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One observation y_n (a contiguous row of Observations).
using ObservationRow = Eigen::Ref<const Eigen::RowVectorXd>;

/*!
 * State-space model with parameter-dependent kernels, operating on a whole
 * particle population at once.
 *
 * - bind(theta) maps a parameter vector to the model's kernel parameters.
 * - sample_prior(particles, count, rng) fills `count` draws from K_0.
 * - propagate(particles, params, n, rng) draws x_n ~ K_{n,theta}(.|x_{n-1})
 *   for every particle; each particle's move depends only on its own state.
 * - log_likelihood(particles, y_n, params, out) writes log l_{n,theta}(y_n|x_n).
 * - resample(particles, indices) replaces the population by the selected
 *   members, in order.
 */
template <class M>
concept StateSpaceModel = requires(const M& model,
                                   const ParameterVector& theta,
                                   const typename M::Params& params,
                                   typename M::Particles& particles,
                                   const typename M::Particles& cparticles,
                                   std::span<const std::size_t> indices,
                                   const ObservationRow& y,
                                   std::span<double> out,
                                   RngStream& rng,
                                   std::size_t n) {
    { model.bind(theta) } -> std::convertible_to<typename M::Params>;
    model.sample_prior(particles, n, rng);
    model.propagate(particles, params, n, rng);
    model.log_likelihood(cparticles, y, params, out);
    model.resample(particles, indices);
    { model.particle_mean(cparticles) } -> std::convertible_to<Vector>;
    { model.state_dimension() } -> std::convertible_to<std::size_t>;
    { model.observation_dimension() } -> std::convertible_to<std::size_t>;
};

} // namespace npmc
