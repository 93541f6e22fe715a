#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "npmc/numerics.hpp"
#include "npmc/rng.hpp"
#include "npmc/ssm.hpp"

namespace npmc::tracking {

using Vec2 = Eigen::Vector2d;

//---------------------------------------------------------------------------//
// Region and reflection
//---------------------------------------------------------------------------//

/// Closed axis-aligned rectangle the target lives in.
struct Region
{
    double x_min = -20.0;
    double x_max = 20.0;
    double y_min = -10.0;
    double y_max = 10.0;

    bool contains(const Vec2& p) const
    {
        return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
    }

    /// Vertices c_0..c_3: upper right, upper left, lower left, lower right.
    std::array<Vec2, 4> corners() const
    {
        return {Vec2(x_max, y_max), Vec2(x_min, y_max), Vec2(x_min, y_min), Vec2(x_max, y_min)};
    }
};

/// Walls, indexed like the corner that starts them counterclockwise.
enum class Wall
{
    top = 0,
    left = 1,
    bottom = 2,
    right = 3,
};

inline constexpr int max_reflections = 8;

namespace detail {

inline double angle_2pi(const Vec2& v)
{
    double a = std::atan2(v.y(), v.x());
    if (a < 0.0)
        a += 2.0 * std::numbers::pi;
    return a;
}

// The wall crossed by the ray from `from` along `step`. Corner angles are
// ordered counterclockwise; a ray through a corner goes to the lower index.
inline Wall crossed_wall(const Region& region, const Vec2& from, const Vec2& step)
{
    const auto c = region.corners();
    std::array<double, 4> theta{};
    for (int j = 0; j < 4; ++j)
        theta[j] = angle_2pi(c[j] - from);
    const double ts = angle_2pi(step);
    for (int j = 0; j < 3; ++j)
        if (theta[j] <= ts && ts <= theta[j + 1])
            return static_cast<Wall>(j);
    return Wall::right;
}

} // namespace detail

/*!
 * Bounces a step that left the region back inside by the law of reflection.
 *
 * The displacement s = proposed - prev is split at the crossed wall into
 * s' (up to the wall) and s'' (beyond it); s'' is mirrored about the wall.
 * The returned velocity points along the mirrored s'' with the speed of
 * proposed_velocity. Repeated while the result is still outside, up to
 * max_reflections times.
 */
inline std::pair<Vec2, Vec2> reflect(const Region& region, Vec2 prev, Vec2 proposed,
                                     const Vec2& proposed_velocity)
{
    if (!region.contains(prev))
        throw UsageError("reflect: previous position outside the region");
    if (region.contains(proposed))
        return {proposed, proposed_velocity};
    const double speed = proposed_velocity.norm();
    Vec2 velocity = proposed_velocity;
    const auto c = region.corners();
    for (int bounce = 0; bounce < max_reflections; ++bounce)
    {
        const Vec2 s = proposed - prev;
        const Wall wall = detail::crossed_wall(region, prev, s);
        const int j = static_cast<int>(wall);
        const bool horizontal = (wall == Wall::top || wall == Wall::bottom);
        const double lambda = horizontal ? (c[j].y() - prev.y()) / s.y() : (c[j].x() - prev.x()) / s.x();
        const Vec2 s1 = lambda * s;
        const Vec2 s2 = (1.0 - lambda) * s;
        const Vec2 normal = horizontal ? Vec2(0.0, 1.0) : Vec2(1.0, 0.0);
        const Vec2 mirrored = s2 - 2.0 * normal * normal.dot(s2);

        const Vec2 next = prev + s1 + s2 - 2.0 * normal * normal.dot(s2);
        const double len = mirrored.norm();
        velocity = len > 0.0 ? Vec2(mirrored / len * speed) : velocity;
        if (region.contains(next))
            return {next, velocity};

        // Restart from the hit point, pinned onto the wall line.
        Vec2 hit = prev + s1;
        if (horizontal)
            hit.y() = c[j].y();
        else
            hit.x() = c[j].x();
        prev = hit;
        proposed = next;
    }
    throw NumericalError("reflect: reflection cap exceeded");
}

//---------------------------------------------------------------------------//
// Model description
//---------------------------------------------------------------------------//

struct TrackingState
{
    Vec2 position = Vec2::Zero();
    Vec2 velocity = Vec2::Zero();
};

/// Known constants of the dynamics and the sensors.
struct TrackingConstants
{
    double kappa = 1.0;
    double sigma_u2 = 1e-2;
    double sigma_z2 = 1e-2;
    double sigma_eps2 = 1.0;
    double prior_velocity_var = 1.0 / 20.0;
    // Minimum target-sensor distance in the path-loss term.
    double distance_floor = 1e-6;
};

/// theta = [log P_t, nu, log rho].
struct TrackingParams
{
    double log_pt = std::log(0.8);
    double nu = 3.0;
    double log_rho = std::log(1e-5);

    static TrackingParams from_theta(const ParameterVector& theta)
    {
        if (theta.size() != 3)
            throw UsageError("TrackingParams: theta must have 3 components");
        return {theta[0], theta[1], theta[2]};
    }

    ParameterVector theta() const { return ParameterVector{{log_pt, nu, log_rho}}; }

    /// Ground truth used in the experiments: P_t = 0.8, nu = 3, rho = 1e-5.
    static TrackingParams ground_truth() { return {}; }
};

struct SensorGrid
{
    std::vector<Vec2> positions;

    std::size_t size() const { return positions.size(); }

    /// 4x4 uniform layout at x in {-15,-5,5,15}, y in {-7.5,-2.5,2.5,7.5}.
    static SensorGrid default_grid()
    {
        SensorGrid grid;
        for (double x : {-15.0, -5.0, 5.0, 15.0})
            for (double y : {-7.5, -2.5, 2.5, 7.5})
                grid.positions.emplace_back(x, y);
        return grid;
    }
};

//---------------------------------------------------------------------------//
// Single-state kernels
//---------------------------------------------------------------------------//

/// x_0: position uniform on the region, velocity N(0, v I_2).
inline TrackingState tracking_prior_sample(RngStream& rng, const Region& region = {},
                                           const TrackingConstants& k = {})
{
    TrackingState s;
    s.position.x() = rng.uniform(region.x_min, region.x_max);
    s.position.y() = rng.uniform(region.y_min, region.y_max);
    const double sd = std::sqrt(k.prior_velocity_var);
    s.velocity.x() = sd * rng.normal();
    s.velocity.y() = sd * rng.normal();
    return s;
}

/// Constant-velocity move with Gaussian noise, reflected at the border.
inline TrackingState tracking_transition(const TrackingState& prev, RngStream& rng,
                                         const Region& region = {}, const TrackingConstants& k = {})
{
    const double sd_pos = std::sqrt(k.kappa * k.sigma_u2 + k.sigma_z2);
    const double sd_vel = std::sqrt(k.sigma_u2);
    TrackingState next;
    next.position = prev.position + k.kappa * prev.velocity;
    next.position.x() += sd_pos * rng.normal();
    next.position.y() += sd_pos * rng.normal();
    next.velocity = prev.velocity;
    next.velocity.x() += sd_vel * rng.normal();
    next.velocity.y() += sd_vel * rng.normal();
    if (!region.contains(next.position))
        std::tie(next.position, next.velocity) = reflect(region, prev.position, next.position, next.velocity);
    return next;
}

/// Received power in dB at distance `distance`.
inline double received_power_db(double distance, const TrackingParams& p, const TrackingConstants& k = {})
{
    const double d = std::max(distance, k.distance_floor);
    return 10.0 * std::log10(std::exp(p.log_pt) / std::pow(d, p.nu) + std::exp(p.log_rho));
}

/// log l(y | x): independent Gaussian readings around the path-loss curve.
inline double tracking_obs_log_lik(std::span<const double> y, const TrackingState& state,
                                   const TrackingParams& p, const SensorGrid& sensors,
                                   const TrackingConstants& k = {})
{
    if (y.size() != sensors.size())
        throw UsageError("tracking_obs_log_lik: reading count does not match sensor count");
    double total = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j)
    {
        const double mean = received_power_db((state.position - sensors.positions[j]).norm(), p, k);
        total += normal_log_pdf(y[j], mean, k.sigma_eps2);
    }
    return total;
}

//---------------------------------------------------------------------------//
// Population model
//---------------------------------------------------------------------------//

/*!
 * The target-tracking model in population form.
 *
 * log_likelihood evaluates the path-loss curve for all particles in single
 * precision through Eigen's vectorized log/exp, as
 * ln(P_t d^-nu + rho) = logaddexp(log P_t - nu ln d, log rho); the
 * per-particle sums are returned in double. The agreement with
 * tracking_obs_log_lik is ~1e-5 relative.
 */
class TrackingModel
{
  public:
    using Params = TrackingParams;

    /// Structure-of-arrays particle storage.
    struct Particles
    {
        Eigen::ArrayXd rx, ry, vx, vy;

        std::size_t size() const { return static_cast<std::size_t>(rx.size()); }

        TrackingState state(Eigen::Index i) const
        {
            return {Vec2(rx[i], ry[i]), Vec2(vx[i], vy[i])};
        }

        void set(Eigen::Index i, const TrackingState& s)
        {
            rx[i] = s.position.x();
            ry[i] = s.position.y();
            vx[i] = s.velocity.x();
            vy[i] = s.velocity.y();
        }

        void resize(std::size_t n)
        {
            const auto m = static_cast<Eigen::Index>(n);
            rx.resize(m);
            ry.resize(m);
            vx.resize(m);
            vy.resize(m);
        }
    };

    explicit TrackingModel(SensorGrid sensors = SensorGrid::default_grid(), Region region = {},
                           TrackingConstants constants = {})
        : sensors_(std::move(sensors)), region_(region), k_(constants)
    {
        if (sensors_.size() == 0)
            throw UsageError("TrackingModel: no sensors");
        for (const auto& s : sensors_.positions)
            if (!(s.x() > region_.x_min && s.x() < region_.x_max && s.y() > region_.y_min
                  && s.y() < region_.y_max))
                throw UsageError("TrackingModel: sensors must lie strictly inside the region");
    }

    const SensorGrid& sensors() const { return sensors_; }
    const Region& region() const { return region_; }
    const TrackingConstants& constants() const { return k_; }

    std::size_t state_dimension() const { return 4; }
    std::size_t observation_dimension() const { return sensors_.size(); }

    Params bind(const ParameterVector& theta) const { return TrackingParams::from_theta(theta); }

    void sample_prior(Particles& x, std::size_t count, RngStream& rng) const
    {
        x.resize(count);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(count); ++i)
            x.set(i, tracking_prior_sample(rng, region_, k_));
    }

    // Same draws, in the same order, as tracking_transition on each particle.
    void propagate(Particles& x, const Params&, std::size_t, RngStream& rng) const
    {
        const double sd_pos = std::sqrt(k_.kappa * k_.sigma_u2 + k_.sigma_z2);
        const double sd_vel = std::sqrt(k_.sigma_u2);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(x.size()); ++i)
        {
            const double px = x.rx[i], py = x.ry[i];
            const double nx = px + k_.kappa * x.vx[i] + sd_pos * rng.normal();
            const double ny = py + k_.kappa * x.vy[i] + sd_pos * rng.normal();
            x.vx[i] += sd_vel * rng.normal();
            x.vy[i] += sd_vel * rng.normal();
            if (nx >= region_.x_min && nx <= region_.x_max && ny >= region_.y_min && ny <= region_.y_max)
            {
                x.rx[i] = nx;
                x.ry[i] = ny;
                continue;
            }
            const auto [pos, vel] = reflect(region_, Vec2(px, py), Vec2(nx, ny), Vec2(x.vx[i], x.vy[i]));
            x.rx[i] = pos.x();
            x.ry[i] = pos.y();
            x.vx[i] = vel.x();
            x.vy[i] = vel.y();
        }
    }

    void log_likelihood(const Particles& x, const ObservationRow& y, const Params& p,
                        std::span<double> out) const
    {
        const auto n = static_cast<Eigen::Index>(x.size());
        const float floor2 = static_cast<float>(k_.distance_floor * k_.distance_floor);
        const float log_pt = static_cast<float>(p.log_pt);
        const float half_nu = static_cast<float>(0.5 * p.nu);
        const float log_rho = static_cast<float>(p.log_rho);
        const float db = static_cast<float>(10.0 / std::numbers::ln10);
        Eigen::ArrayXf acc = Eigen::ArrayXf::Zero(n);
        Eigen::ArrayXf a(n);
        for (std::size_t j = 0; j < sensors_.size(); ++j)
        {
            const Vec2& s = sensors_.positions[j];
            a = ((x.rx - s.x()).square() + (x.ry - s.y()).square()).cast<float>().max(floor2);
            a = log_pt - half_nu * a.log();
            const auto hi = a.max(log_rho);
            const auto gap = (a - log_rho).abs();
            const auto mean_db = db * (hi + (1.0f + (-gap).exp()).log());
            acc += (static_cast<float>(y[static_cast<Eigen::Index>(j)]) - mean_db).square();
        }
        const double c = static_cast<double>(sensors_.size()) * std::log(2.0 * std::numbers::pi * k_.sigma_eps2);
        for (Eigen::Index i = 0; i < n; ++i)
            out[static_cast<std::size_t>(i)] = -0.5 * (c + static_cast<double>(acc[i]) / k_.sigma_eps2);
    }

    void resample(Particles& x, std::span<const std::size_t> indices) const
    {
        Particles next;
        next.resize(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i)
        {
            const auto src = static_cast<Eigen::Index>(indices[i]);
            const auto dst = static_cast<Eigen::Index>(i);
            next.rx[dst] = x.rx[src];
            next.ry[dst] = x.ry[src];
            next.vx[dst] = x.vx[src];
            next.vy[dst] = x.vy[src];
        }
        x = std::move(next);
    }

    Vector particle_mean(const Particles& x) const
    {
        return Vector{{x.rx.mean(), x.ry.mean(), x.vx.mean(), x.vy.mean()}};
    }

  private:
    SensorGrid sensors_;
    Region region_;
    TrackingConstants k_;
};

static_assert(StateSpaceModel<TrackingModel>);

//---------------------------------------------------------------------------//
// Synthetic data
//---------------------------------------------------------------------------//

struct TrackingDataset
{
    SensorGrid sensors;
    ParameterVector truth;
    std::uint64_t seed = 0;
    Observations observations;
    /// x_0..x_m; diagnostics only, never read by the samplers.
    std::vector<TrackingState> trajectory;
};

/// Simulates a trajectory of length m and its sensor readings.
inline TrackingDataset simulate_dataset(const TrackingModel& model, const TrackingParams& params,
                                        std::size_t horizon, RngStream& rng)
{
    if (horizon == 0)
        throw UsageError("simulate_dataset: horizon must be at least 1");
    const auto& k = model.constants();
    const auto& sensors = model.sensors();
    TrackingDataset data;
    data.sensors = sensors;
    data.truth = params.theta();
    data.seed = rng.seed();
    data.observations.resize(static_cast<Eigen::Index>(horizon), static_cast<Eigen::Index>(sensors.size()));
    TrackingState x = tracking_prior_sample(rng, model.region(), k);
    data.trajectory.push_back(x);
    const double sd = std::sqrt(k.sigma_eps2);
    for (std::size_t n = 1; n <= horizon; ++n)
    {
        x = tracking_transition(x, rng, model.region(), k);
        data.trajectory.push_back(x);
        for (std::size_t j = 0; j < sensors.size(); ++j)
        {
            const double mean = received_power_db((x.position - sensors.positions[j]).norm(), params, k);
            data.observations(static_cast<Eigen::Index>(n - 1), static_cast<Eigen::Index>(j))
                = mean + sd * rng.normal();
        }
    }
    return data;
}

/*!
 * Plain-text dataset. One header line
 *
 *   # J=<J> m=<m> seed=<seed> theta=<a>,<b>,<c> sensors=<x>:<y>,<x>:<y>,...
 *
 * then m rows of J space-separated readings.
 */
inline void write_dataset(std::ostream& os, const TrackingDataset& data)
{
    const auto old_prec = os.precision(17);
    os << "# J=" << data.sensors.size() << " m=" << data.observations.rows() << " seed=" << data.seed
       << " theta=";
    for (Eigen::Index i = 0; i < data.truth.size(); ++i)
        os << (i ? "," : "") << data.truth[i];
    os << " sensors=";
    for (std::size_t j = 0; j < data.sensors.size(); ++j)
        os << (j ? "," : "") << data.sensors.positions[j].x() << ":" << data.sensors.positions[j].y();
    os << "\n";
    for (Eigen::Index n = 0; n < data.observations.rows(); ++n)
    {
        for (Eigen::Index j = 0; j < data.observations.cols(); ++j)
            os << (j ? " " : "") << data.observations(n, j);
        os << "\n";
    }
    os.precision(old_prec);
}

inline TrackingDataset read_dataset(std::istream& is)
{
    std::string header;
    if (!std::getline(is, header) || header.rfind("# ", 0) != 0)
        throw UsageError("read_dataset: missing header line");
    TrackingDataset data;
    std::size_t J = 0, m = 0;
    std::istringstream hs(header.substr(2));
    std::string field;
    auto split = [](const std::string& s, char sep) {
        std::vector<std::string> parts;
        std::stringstream ss(s);
        std::string part;
        while (std::getline(ss, part, sep))
            parts.push_back(part);
        return parts;
    };
    while (hs >> field)
    {
        const auto eq = field.find('=');
        if (eq == std::string::npos)
            throw UsageError("read_dataset: malformed header field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "J")
            J = std::stoul(value);
        else if (key == "m")
            m = std::stoul(value);
        else if (key == "seed")
            data.seed = std::stoull(value);
        else if (key == "theta")
        {
            const auto parts = split(value, ',');
            data.truth.resize(static_cast<Eigen::Index>(parts.size()));
            for (std::size_t i = 0; i < parts.size(); ++i)
                data.truth[static_cast<Eigen::Index>(i)] = std::stod(parts[i]);
        }
        else if (key == "sensors")
        {
            for (const auto& xy : split(value, ','))
            {
                const auto c = xy.find(':');
                if (c == std::string::npos)
                    throw UsageError("read_dataset: malformed sensor '" + xy + "'");
                data.sensors.positions.emplace_back(std::stod(xy.substr(0, c)), std::stod(xy.substr(c + 1)));
            }
        }
    }
    if (J == 0 || m == 0 || data.sensors.size() != J)
        throw UsageError("read_dataset: inconsistent header");
    data.observations.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(J));
    for (Eigen::Index n = 0; n < data.observations.rows(); ++n)
        for (Eigen::Index j = 0; j < data.observations.cols(); ++j)
            if (!(is >> data.observations(n, j)))
                throw UsageError("read_dataset: truncated data");
    return data;
}

} // namespace npmc::tracking
