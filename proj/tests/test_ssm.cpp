#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "npmc/linear_gaussian.hpp"
#include "npmc/tracking.hpp"

using namespace npmc;
using namespace npmc::tracking;

namespace {

// Log-density of y_{1:T} from the full joint Gaussian of the stacked
// observations, built directly from the model matrices.
double joint_gaussian_log_lik(const Matrix& A, const Matrix& Q, const Matrix& H, const Matrix& W, const Vector& m0,
                              const Matrix& P0, const Vector& drift, const Observations& y)
{
    const auto T = y.rows();
    const auto dx = A.rows();
    const auto dy = H.rows();
    std::vector<Vector> mean_x(T + 1);
    std::vector<Matrix> var_x(T + 1);
    mean_x[0] = m0;
    var_x[0] = P0;
    for (Eigen::Index n = 1; n <= T; ++n)
    {
        mean_x[n] = A * mean_x[n - 1] + drift;
        var_x[n] = A * var_x[n - 1] * A.transpose() + Q;
    }
    Vector mu(T * dy), flat(T * dy);
    Matrix S(T * dy, T * dy);
    for (Eigen::Index n = 1; n <= T; ++n)
    {
        mu.segment((n - 1) * dy, dy) = H * mean_x[n];
        flat.segment((n - 1) * dy, dy) = y.row(n - 1).transpose();
        for (Eigen::Index m = 1; m <= n; ++m)
        {
            // Cov(x_n, x_m) = A^(n-m) Var(x_m) for n >= m.
            Matrix power = Matrix::Identity(dx, dx);
            for (Eigen::Index k = m; k < n; ++k)
                power = A * power;
            Matrix block = H * power * var_x[m] * H.transpose();
            if (n == m)
                block += W;
            S.block((n - 1) * dy, (m - 1) * dy, dy, dy) = block;
            S.block((m - 1) * dy, (n - 1) * dy, dy, dy) = block.transpose();
        }
    }
    Eigen::LDLT<Matrix> ldlt(S);
    const Vector r = flat - mu;
    const double logdet = ldlt.vectorD().array().log().sum();
    return -0.5 * (static_cast<double>(T * dy) * std::log(2 * std::numbers::pi) + logdet + r.dot(ldlt.solve(r)));
}

Matrix random_spd(Eigen::Index d, RngStream& rng, double ridge)
{
    Matrix a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            a(i, j) = rng.normal();
    return a * a.transpose() / static_cast<double>(d) + ridge * Matrix::Identity(d, d);
}

} // namespace

//---------------------------------------------------------------------------//
// Linear-Gaussian model and Kalman likelihood
//---------------------------------------------------------------------------//

TEST(Kalman, StaticStateClosedForm)
{
    const double w = 0.7, m0 = 0.3, p0 = 2.0;
    const auto model = LinearGaussianModel::scalar(1.0, 0.0, 1.0, w, m0, p0);
    Observations y(6, 1);
    y << 0.4, 1.1, -0.2, 0.9, 0.5, 1.6;
    const double n = 6;
    const double ybar = y.mean();
    double ss = 0.0;
    for (int i = 0; i < 6; ++i)
        ss += (y(i, 0) - ybar) * (y(i, 0) - ybar);
    const double v = p0 + w / n;
    const double expected = -0.5 * n * std::log(2 * std::numbers::pi * w) - ss / (2 * w)
                            + 0.5 * std::log(2 * std::numbers::pi * w / n)
                            - 0.5 * std::log(2 * std::numbers::pi * v) - (ybar - m0) * (ybar - m0) / (2 * v);
    EXPECT_NEAR(kalman_log_likelihood(model, ParameterVector(0), y), expected, 1e-10);
}

TEST(Kalman, EmptySequenceIsZero)
{
    const auto model = LinearGaussianModel::scalar(0.9, 0.5, 1.0, 1.0, 0.0, 1.0);
    EXPECT_EQ(kalman_log_likelihood(model, ParameterVector(0), Observations(0, 1)), 0.0);
}

TEST(Kalman, MatchesJointGaussianOracle)
{
    RngStream rng(21);
    for (int trial = 0; trial < 20; ++trial)
    {
        const Eigen::Index dx = 1 + trial % 3, dy = 1 + (trial / 3) % 3;
        Matrix A(dx, dx), H(dy, dx);
        for (Eigen::Index i = 0; i < dx; ++i)
            for (Eigen::Index j = 0; j < dx; ++j)
                A(i, j) = 0.4 * rng.normal();
        for (Eigen::Index i = 0; i < dy; ++i)
            for (Eigen::Index j = 0; j < dx; ++j)
                H(i, j) = rng.normal();
        const Matrix Q = random_spd(dx, rng, 0.2), W = random_spd(dy, rng, 0.3), P0 = random_spd(dx, rng, 0.5);
        Vector m0(dx);
        for (auto& v : m0)
            v = rng.normal();
        const Matrix B = Matrix::Identity(dx, dx);
        Vector theta(dx);
        for (auto& v : theta)
            v = 0.3 * rng.normal();
        const LinearGaussianModel model(A, Q, H, W, m0, P0, B);
        const auto y = model.simulate(theta, 20, rng).first;
        ASSERT_NEAR(kalman_log_likelihood(model, theta, y),
                    joint_gaussian_log_lik(A, Q, H, W, m0, P0, B * theta, y), 1e-8)
            << "dx=" << dx << " dy=" << dy;
    }
}

TEST(LinearGaussian, RejectsIndefiniteObservationNoise)
{
    EXPECT_THROW(LinearGaussianModel::scalar(1.0, 1.0, 1.0, 0.0, 0.0, 1.0), UsageError);
}

//---------------------------------------------------------------------------//
// Tracking model
//---------------------------------------------------------------------------//

TEST(TrackingPrior, Moments)
{
    RngStream rng(31);
    const int n = 100000;
    double mx = 0, my = 0, left = 0, vx2 = 0, vy2 = 0, vx = 0, vy = 0;
    for (int i = 0; i < n; ++i)
    {
        const auto s = tracking_prior_sample(rng);
        mx += s.position.x();
        my += s.position.y();
        left += s.position.x() < 0.0;
        vx += s.velocity.x();
        vy += s.velocity.y();
        vx2 += s.velocity.x() * s.velocity.x();
        vy2 += s.velocity.y() * s.velocity.y();
    }
    EXPECT_NEAR(mx / n, 0.0, 0.15);
    EXPECT_NEAR(my / n, 0.0, 0.15);
    EXPECT_NEAR(left / n, 0.5, 0.005);
    EXPECT_NEAR(vx2 / n - (vx / n) * (vx / n), 0.05, 0.002);
    EXPECT_NEAR(vy2 / n - (vy / n) * (vy / n), 0.05, 0.002);
}

TEST(TrackingTransition, NoiselessExamples)
{
    TrackingConstants k;
    k.sigma_u2 = 0.0;
    k.sigma_z2 = 0.0;
    RngStream rng(1);
    const TrackingState still{Vec2(0, 0), Vec2(0, 0)};
    const auto a = tracking_transition(still, rng, Region{}, k);
    EXPECT_EQ(a.position, still.position);
    EXPECT_EQ(a.velocity, still.velocity);

    const TrackingState moving{Vec2(0, 5), Vec2(0, 1)};
    const auto b = tracking_transition(moving, rng, Region{}, k);
    EXPECT_EQ(b.position, Vec2(0, 6));
    EXPECT_EQ(b.velocity, Vec2(0, 1));
}

TEST(TrackingTransition, TrajectoryStaysInside)
{
    RngStream rng(32);
    const Region region;
    auto s = tracking_prior_sample(rng);
    for (int n = 0; n < 100000; ++n)
    {
        s = tracking_transition(s, rng);
        ASSERT_TRUE(region.contains(s.position)) << "step " << n;
    }
}

TEST(Reflect, WallExamples)
{
    const Region r;
    auto [p1, v1] = reflect(r, Vec2(0, 9), Vec2(0, 11), Vec2(0, 2));
    EXPECT_NEAR((p1 - Vec2(0, 9)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((v1 - Vec2(0, -2)).norm(), 0.0, 1e-12);
    auto [p2, v2] = reflect(r, Vec2(19, 0), Vec2(21, 0), Vec2(2, 0));
    EXPECT_NEAR((p2 - Vec2(19, 0)).norm(), 0.0, 1e-12);
    EXPECT_NEAR((v2 - Vec2(-2, 0)).norm(), 0.0, 1e-12);
    auto [p3, v3] = reflect(r, Vec2(0, -9), Vec2(1, -12), Vec2(1, -3));
    EXPECT_NEAR((p3 - Vec2(1, -8)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(v3.norm(), std::sqrt(10.0), 1e-12);
    auto [p4, v4] = reflect(r, Vec2(-19.5, 3), Vec2(-21, 3.5), Vec2(-1, 0));
    EXPECT_NEAR((p4 - Vec2(-19, 3.5)).norm(), 0.0, 1e-12);
    EXPECT_GT(v4.x(), 0.0);
}

TEST(Reflect, Preconditions)
{
    const Region r;
    EXPECT_THROW(reflect(r, Vec2(0, 11), Vec2(0, 12), Vec2(0, 1)), UsageError);
    auto [p, v] = reflect(r, Vec2(0, 0), Vec2(1, 1), Vec2(3, 4));
    EXPECT_EQ(p, Vec2(1, 1));
    EXPECT_EQ(v, Vec2(3, 4));
}

TEST(Reflect, MirrorInvolutionAndSpeed)
{
    const Region r;
    RngStream rng(33);
    int tested = 0;
    for (int i = 0; i < 20000; ++i)
    {
        const Vec2 prev(rng.uniform(-20, 20), rng.uniform(-10, 10));
        const Vec2 proposed = prev + Vec2(2.0 * rng.normal(), 2.0 * rng.normal());
        // Single crossings only: exactly one coordinate outside, by less than the box size.
        const bool out_x = proposed.x() < -20 || proposed.x() > 20;
        const bool out_y = proposed.y() < -10 || proposed.y() > 10;
        if (out_x == out_y)
            continue;
        ++tested;
        const Vec2 vel(rng.normal(), rng.normal());
        const auto [p, v] = reflect(r, prev, proposed, vel);
        ASSERT_TRUE(r.contains(p));
        Vec2 back = p;
        if (out_x)
            back.x() = 2.0 * (proposed.x() > 20 ? 20.0 : -20.0) - p.x();
        else
            back.y() = 2.0 * (proposed.y() > 10 ? 10.0 : -10.0) - p.y();
        ASSERT_LT((back - proposed).norm(), 1e-10);
        ASSERT_NEAR(v.norm(), vel.norm(), 1e-12 * std::max(1.0, vel.norm()));
    }
    EXPECT_GT(tested, 1000);
}

TEST(Reflect, CornerHitGoesToLowerIndex)
{
    const Region r;
    // Straight through the upper-right corner: wall "top" (index 0) wins.
    auto [p, v] = reflect(r, Vec2(19, 9), Vec2(21, 11), Vec2(1, 1));
    EXPECT_TRUE(r.contains(p));
    EXPECT_NEAR(v.norm(), std::sqrt(2.0), 1e-12);
}

TEST(ObservationModel, FarFieldLimit)
{
    const TrackingParams p;
    EXPECT_NEAR(received_power_db(1e9, p), 10.0 * std::log10(1e-5), 1e-9);
}

TEST(ObservationModel, ModeValue)
{
    const auto sensors = SensorGrid::default_grid();
    const TrackingParams p;
    const TrackingState s{Vec2(1.3, -2.2), Vec2(0, 0)};
    std::vector<double> y;
    for (const auto& q : sensors.positions)
        y.push_back(received_power_db((s.position - q).norm(), p));
    EXPECT_NEAR(tracking_obs_log_lik(y, s, p, sensors), -8.0 * std::log(2 * std::numbers::pi), 1e-12);
}

TEST(ObservationModel, MatchesNaiveSumAndIsPermutationInvariant)
{
    RngStream rng(34);
    const auto sensors = SensorGrid::default_grid();
    for (int t = 0; t < 100; ++t)
    {
        const TrackingParams p{std::log(rng.uniform(0.1, 2.0)), rng.uniform(1.5, 4.0), std::log(rng.uniform(1e-6, 1e-4))};
        const auto s = tracking_prior_sample(rng);
        std::vector<double> y(16);
        for (auto& v : y)
            v = -60.0 + 20.0 * rng.normal();
        double naive = 0.0;
        for (std::size_t j = 0; j < 16; ++j)
        {
            const double dx = s.position.x() - sensors.positions[j].x();
            const double dy = s.position.y() - sensors.positions[j].y();
            const double d = std::sqrt(dx * dx + dy * dy);
            const double mean = 10.0 * std::log10(std::exp(p.log_pt) * std::pow(d, -p.nu) + std::exp(p.log_rho));
            naive += -0.5 * std::log(2 * std::numbers::pi) - 0.5 * (y[j] - mean) * (y[j] - mean);
        }
        const double got = tracking_obs_log_lik(y, s, p, sensors);
        ASSERT_NEAR(got, naive, 1e-12 * std::max(1.0, std::abs(naive)));

        std::vector<std::size_t> perm(16);
        std::iota(perm.begin(), perm.end(), 0);
        std::reverse(perm.begin(), perm.end());
        std::rotate(perm.begin(), perm.begin() + t % 16, perm.end());
        SensorGrid shuffled;
        std::vector<double> y2;
        for (auto j : perm)
        {
            shuffled.positions.push_back(sensors.positions[j]);
            y2.push_back(y[j]);
        }
        ASSERT_NEAR(tracking_obs_log_lik(y2, s, p, shuffled), got, 1e-9);
    }
}

TEST(ObservationModel, DistanceFloorKeepsValuesFinite)
{
    const auto sensors = SensorGrid::default_grid();
    const TrackingState s{sensors.positions[5], Vec2(0, 0)};
    std::vector<double> y(16, 0.0);
    EXPECT_TRUE(std::isfinite(tracking_obs_log_lik(y, s, TrackingParams{}, sensors)));
}

TEST(TrackingModel, BatchedLikelihoodAgreesWithScalarReference)
{
    const TrackingModel model;
    RngStream rng(35);
    TrackingModel::Particles x;
    model.sample_prior(x, 257, rng);
    const TrackingParams p;
    auto data = simulate_dataset(model, p, 3, rng);
    std::vector<double> out(x.size());
    for (Eigen::Index n = 0; n < 3; ++n)
    {
        model.log_likelihood(x, data.observations.row(n), p, out);
        std::vector<double> y(data.observations.row(n).begin(), data.observations.row(n).end());
        for (std::size_t i = 0; i < x.size(); ++i)
        {
            const double ref = tracking_obs_log_lik(y, x.state(static_cast<Eigen::Index>(i)), p, model.sensors());
            ASSERT_NEAR(out[i], ref, 1e-4 * std::max(1.0, std::abs(ref)));
        }
    }
}

TEST(TrackingModel, RejectsSensorsOnOrOutsideBorder)
{
    SensorGrid g;
    g.positions.emplace_back(20.0, 0.0);
    EXPECT_THROW(TrackingModel{g}, UsageError);
}

TEST(SimulateDataset, ShapeAndDeterminism)
{
    const TrackingModel model;
    RngStream a(77), b(77);
    const auto d1 = simulate_dataset(model, TrackingParams::ground_truth(), 50, a);
    const auto d2 = simulate_dataset(model, TrackingParams::ground_truth(), 50, b);
    EXPECT_EQ(d1.observations.rows(), 50);
    EXPECT_EQ(d1.observations.cols(), 16);
    EXPECT_EQ(d1.trajectory.size(), 51u);
    EXPECT_TRUE((d1.observations.array() == d2.observations.array()).all());
    RngStream zero(0);
    EXPECT_THROW(simulate_dataset(model, TrackingParams{}, 0, zero), UsageError);
}

TEST(SimulateDataset, SymmetricSensorsSeeEqualReadingsWithoutNoise)
{
    TrackingConstants k;
    k.sigma_u2 = 0.0;
    k.sigma_z2 = 0.0;
    k.prior_velocity_var = 0.0;
    k.sigma_eps2 = 0.0;
    SensorGrid probe;
    probe.positions = {Vec2(0, 0), Vec2(1, 1)};
    RngStream r1(5);
    const auto first = simulate_dataset(TrackingModel(probe, Region{}, k), TrackingParams{}, 4, r1);
    const Vec2 c = first.trajectory.back().position;
    // Two sensors mirrored about the (stationary) target.
    const Vec2 off(0.5, -0.25);
    const Vec2 s1 = (c + off).cwiseMax(Vec2(-19.9, -9.9)).cwiseMin(Vec2(19.9, 9.9));
    const Vec2 s2 = 2.0 * c - s1;
    SensorGrid sym;
    sym.positions = {s1, s2};
    if (!Region{}.contains(s2))
        GTEST_SKIP() << "mirrored sensor fell outside";
    RngStream r2(5);
    const auto data = simulate_dataset(TrackingModel(sym, Region{}, k), TrackingParams{}, 4, r2);
    for (Eigen::Index n = 0; n < 4; ++n)
        EXPECT_EQ(data.observations(n, 0), data.observations(n, 1));
}

TEST(DatasetIo, RoundTrip)
{
    const TrackingModel model;
    RngStream rng(88);
    const auto data = simulate_dataset(model, TrackingParams{}, 7, rng);
    std::stringstream ss;
    write_dataset(ss, data);
    const auto back = read_dataset(ss);
    EXPECT_EQ(back.seed, data.seed);
    EXPECT_EQ(back.truth, data.truth);
    ASSERT_EQ(back.sensors.size(), data.sensors.size());
    for (std::size_t j = 0; j < back.sensors.size(); ++j)
        EXPECT_EQ(back.sensors.positions[j], data.sensors.positions[j]);
    EXPECT_TRUE((back.observations.array() == data.observations.array()).all());
}
