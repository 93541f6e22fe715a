#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "npmc/numerics.hpp"

using namespace npmc;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

// Naive two-pass weighted moments, written independently of the library.
std::pair<Vector, Matrix> two_pass_moments(const std::vector<Vector>& xs, const std::vector<double>& w)
{
    const auto d = xs.front().size();
    Vector mu = Vector::Zero(d);
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (Eigen::Index a = 0; a < d; ++a)
            mu[a] += w[i] * xs[i][a];
    Matrix cov = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b)
                cov(a, b) += w[i] * (xs[i][a] - mu[a]) * (xs[i][b] - mu[b]);
    return {mu, cov};
}

} // namespace

TEST(LogSumExp, Examples)
{
    EXPECT_NEAR(log_sum_exp(std::vector<double>{0.0, 0.0}), std::log(2.0), 1e-15);
    EXPECT_EQ(log_sum_exp(std::vector<double>{-inf, 0.0}), 0.0);
    const long double direct = std::log(std::exp(3.2L) + std::exp(1.1L) + std::exp(-0.5L));
    EXPECT_NEAR(log_sum_exp(std::vector<double>{3.2, 1.1, -0.5}), static_cast<double>(direct), 1e-12);
}

TEST(LogSumExp, EdgeCases)
{
    EXPECT_THROW(log_sum_exp(std::vector<double>{}), UsageError);
    EXPECT_EQ(log_sum_exp(std::vector<double>{-inf, -inf}), -inf);
    EXPECT_THROW(log_sum_exp(std::vector<double>{0.0, std::nan("")}), NumericalError);
    EXPECT_THROW(log_sum_exp(std::vector<double>{0.0, inf}), NumericalError);
}

TEST(LogSumExp, NoOverflowInRange)
{
    const double v = log_sum_exp(std::vector<double>{700.0, 700.0, -1e6});
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 700.0 + std::log(2.0), 1e-12);
    EXPECT_NEAR(log_sum_exp(std::vector<double>{-1e6, -1e6}), -1e6 + std::log(2.0), 1e-9);
}

TEST(NormalizeLogWeights, Examples)
{
    for (double c : {-500.0, 0.0, 3.7, 600.0})
    {
        const auto w = normalize_log_weights(std::vector<double>{c, c, c, c});
        for (double wi : w)
            EXPECT_NEAR(wi, 0.25, 1e-15);
    }
    const auto w = normalize_log_weights(std::vector<double>{std::log(3.0), 0.0});
    EXPECT_NEAR(w[0], 0.75, 1e-15);
    EXPECT_NEAR(w[1], 0.25, 1e-15);
    EXPECT_THROW(normalize_log_weights(std::vector<double>{-inf, -inf}), DegenerateWeights);
}

TEST(NormalizeLogWeights, SumsToOneAndShiftInvariant)
{
    RngStream rng(3);
    for (int t = 0; t < 200; ++t)
    {
        std::vector<double> lw(1 + t % 50);
        for (auto& v : lw)
            v = 30.0 * rng.normal();
        const auto w = normalize_log_weights(lw);
        double s = 0.0;
        for (double x : w)
        {
            ASSERT_GE(x, 0.0);
            ASSERT_LE(x, 1.0);
            s += x;
        }
        ASSERT_NEAR(s, 1.0, 1e-12);
        const double shift = 100.0 * rng.normal();
        for (auto& v : lw)
            v += shift;
        const auto w2 = normalize_log_weights(lw);
        for (std::size_t i = 0; i < w.size(); ++i)
            ASSERT_NEAR(w[i], w2[i], 1e-12);
    }
}

TEST(MultinomialSample, PointMass)
{
    RngStream rng(1);
    const auto idx = multinomial_sample(std::vector<double>{1.0, 0.0, 0.0}, 5, rng);
    EXPECT_EQ(idx, std::vector<std::size_t>(5, 0));
    for (std::size_t pos = 0; pos < 6; ++pos)
        for (std::size_t count : {1u, 7u, 100u})
        {
            std::vector<double> w(6, 0.0);
            w[pos] = 1.0;
            for (auto i : multinomial_sample(w, count, rng))
                ASSERT_EQ(i, pos);
        }
}

TEST(MultinomialSample, BinomialBound)
{
    RngStream rng(2);
    const auto idx = multinomial_sample(std::vector<double>{0.5, 0.5}, 1000000, rng);
    double zeros = 0;
    for (auto i : idx)
        zeros += i == 0;
    EXPECT_NEAR(zeros / 1e6, 0.5, 0.002);
}

TEST(MultinomialSample, ChiSquare)
{
    RngStream rng(4);
    const std::vector<double> p{0.2, 0.3, 0.5};
    const std::size_t n = 1000000;
    std::vector<double> counts(3, 0.0);
    for (auto i : multinomial_sample(p, n, rng))
        counts[i] += 1;
    double chi2 = 0.0;
    for (int k = 0; k < 3; ++k)
    {
        const double e = p[k] * n;
        chi2 += (counts[k] - e) * (counts[k] - e) / e;
    }
    EXPECT_LT(chi2, 13.816); // 99.9% quantile, 2 degrees of freedom
}

TEST(MultinomialSample, Errors)
{
    RngStream rng(5);
    EXPECT_THROW(multinomial_sample(std::vector<double>{1.2, -0.2}, 3, rng), UsageError);
    EXPECT_THROW(multinomial_sample(std::vector<double>{0.5, 0.4}, 3, rng), UsageError);
}

TEST(MultinomialSampleSorted, PointMassAndZeroWeights)
{
    RngStream rng(6);
    Eigen::ArrayXd scratch;
    for (std::size_t pos = 0; pos < 6; ++pos)
    {
        std::vector<double> w(6, 0.0);
        w[pos] = 1.0;
        std::vector<std::size_t> out(50);
        multinomial_sample_sorted(w, out, rng, scratch);
        for (auto i : out)
            ASSERT_EQ(i, pos);
    }
    const std::vector<double> w{0.0, 0.5, 0.0, 0.5, 0.0};
    std::vector<std::size_t> out(1000);
    multinomial_sample_sorted(w, out, rng, scratch);
    for (auto i : out)
        ASSERT_TRUE(i == 1 || i == 3);
}

TEST(MultinomialSampleSorted, NondecreasingAndMarginalChiSquare)
{
    RngStream rng(7);
    Eigen::ArrayXd scratch;
    const std::vector<double> p{0.1, 0.25, 0.05, 0.6};
    std::vector<double> counts(4, 0.0);
    std::vector<std::size_t> out(10);
    const int reps = 100000;
    for (int r = 0; r < reps; ++r)
    {
        multinomial_sample_sorted(p, out, rng, scratch);
        ASSERT_TRUE(std::is_sorted(out.begin(), out.end()));
        for (auto i : out)
            counts[i] += 1;
    }
    double chi2 = 0.0;
    for (int k = 0; k < 4; ++k)
    {
        const double e = p[k] * reps * 10;
        chi2 += (counts[k] - e) * (counts[k] - e) / e;
    }
    EXPECT_LT(chi2, 16.266); // 99.9% quantile, 3 degrees of freedom
}

// Joint law of a size-2 draw: (0,0), (0,1), (1,1) with 1/4, 1/2, 1/4.
TEST(MultinomialSampleSorted, PairLawMatchesMultinomial)
{
    RngStream rng(8);
    Eigen::ArrayXd scratch;
    const std::vector<double> p{0.5, 0.5};
    std::vector<std::size_t> out(2);
    std::vector<double> counts(3, 0.0);
    const int reps = 200000;
    for (int r = 0; r < reps; ++r)
    {
        multinomial_sample_sorted(p, out, rng, scratch);
        counts[out[0] + out[1]] += 1;
    }
    const double expect[3] = {0.25 * reps, 0.5 * reps, 0.25 * reps};
    double chi2 = 0.0;
    for (int k = 0; k < 3; ++k)
        chi2 += (counts[k] - expect[k]) * (counts[k] - expect[k]) / expect[k];
    EXPECT_LT(chi2, 13.816);
}

TEST(MultinomialSampleSorted, Errors)
{
    RngStream rng(9);
    Eigen::ArrayXd scratch;
    std::vector<std::size_t> out(3);
    EXPECT_THROW(multinomial_sample_sorted(std::vector<double>{1.2, -0.2}, out, rng, scratch), UsageError);
    EXPECT_THROW(multinomial_sample_sorted(std::vector<double>{0.5, 0.4}, out, rng, scratch), UsageError);
    EXPECT_THROW(multinomial_sample_sorted(std::vector<double>{}, out, rng, scratch), UsageError);
}

TEST(ExpNormalize, MatchesNormalizeLogWeights)
{
    RngStream rng(10);
    for (int rep = 0; rep < 50; ++rep)
    {
        std::vector<double> v(37);
        for (auto& x : v)
            x = 300.0 * rng.normal();
        v[5] = neg_inf;
        std::vector<double> out(v.size());
        const double lse = exp_normalize(v, out);
        EXPECT_NEAR(lse, log_sum_exp(v), 1e-12 * std::abs(lse) + 1e-12);
        const auto ref = normalize_log_weights(v);
        for (std::size_t i = 0; i < v.size(); ++i)
            ASSERT_NEAR(out[i], ref[i], 1e-14);
    }
    std::vector<double> out(2, 7.0);
    EXPECT_EQ(exp_normalize(std::vector<double>{neg_inf, neg_inf}, out), neg_inf);
    EXPECT_THROW(exp_normalize(std::vector<double>{0.0, std::nan("")}, out), NumericalError);
    EXPECT_THROW(exp_normalize(std::vector<double>{0.0, 1.0}, std::span<double>(out.data(), 1)), UsageError);
}

TEST(ExpNormalize, BitIdenticalForAnyBufferOffset)
{
    RngStream rng(11);
    std::vector<double> base(403);
    for (auto& x : base)
        x = 40.0 * rng.normal();
    std::vector<double> ref_out(400);
    const double ref = exp_normalize(std::span<const double>(base.data(), 400), ref_out);
    for (std::size_t offset = 1; offset < 4; ++offset)
    {
        std::vector<double> shifted(403 + offset);
        std::copy(base.begin(), base.begin() + 400, shifted.begin() + static_cast<std::ptrdiff_t>(offset));
        std::vector<double> out(400 + offset);
        const double got = exp_normalize(std::span<const double>(shifted.data() + offset, 400),
                                         std::span<double>(out.data() + offset, 400));
        EXPECT_EQ(got, ref);
        for (std::size_t i = 0; i < 400; ++i)
            ASSERT_EQ(out[i + offset], ref_out[i]);
    }
}

TEST(Gaussian, ZeroCovarianceSamplesAtMean)
{
    RngStream rng(6);
    const Vector m{{1.5, -2.0, 0.25}};
    for (int i = 0; i < 100; ++i)
    {
        const Vector x = sample_multivariate_gaussian(m, Matrix::Zero(3, 3), rng);
        ASSERT_LT((x - m).cwiseAbs().maxCoeff(), 1e-4);
    }
}

TEST(Gaussian, IdentityCovarianceMoments)
{
    RngStream rng(7);
    const int n = 100000;
    Matrix s = Matrix::Zero(2, 2);
    Vector mean = Vector::Zero(2);
    std::vector<Vector> xs;
    for (int i = 0; i < n; ++i)
        xs.push_back(sample_multivariate_gaussian(Vector::Zero(2), Matrix::Identity(2, 2), rng));
    for (const auto& x : xs)
        mean += x / n;
    for (const auto& x : xs)
        s += (x - mean) * (x - mean).transpose() / n;
    EXPECT_LT((s - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 0.05);
}

TEST(Gaussian, CorrelatedMean)
{
    RngStream rng(8);
    const Vector m{{1.0, 2.0}};
    Matrix c(2, 2);
    c << 2, 1, 1, 2;
    Vector mean = Vector::Zero(2);
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        mean += sample_multivariate_gaussian(m, c, rng) / n;
    EXPECT_LT((mean - m).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Gaussian, LogPdfClosedForms)
{
    for (int d = 1; d <= 4; ++d)
        EXPECT_NEAR(gaussian_log_pdf(Vector::Ones(d), Vector::Ones(d), Matrix::Identity(d, d)),
                    -0.5 * d * std::log(2 * std::numbers::pi), 1e-14);
    EXPECT_NEAR(gaussian_log_pdf(Vector::Constant(1, 1.0), Vector::Zero(1), Matrix::Identity(1, 1)),
                -0.5 - 0.5 * std::log(2 * std::numbers::pi), 1e-14);
    EXPECT_NEAR(normal_log_pdf(1.0, 0.0, 1.0), -0.5 - 0.5 * std::log(2 * std::numbers::pi), 1e-14);
}

TEST(Gaussian, LogPdfMatchesExplicitInverse)
{
    RngStream rng(10);
    for (int t = 0; t < 50; ++t)
    {
        Matrix a(3, 3);
        for (int i = 0; i < 9; ++i)
            a(i / 3, i % 3) = rng.normal();
        const Matrix cov = a * a.transpose() + 0.5 * Matrix::Identity(3, 3);
        const Vector mean{{rng.normal(), rng.normal(), rng.normal()}};
        const Vector x{{rng.normal(), rng.normal(), rng.normal()}};
        const Vector diff = x - mean;
        const double direct = -1.5 * std::log(2 * std::numbers::pi) - 0.5 * std::log(cov.determinant())
                              - 0.5 * diff.dot(cov.inverse() * diff);
        ASSERT_NEAR(gaussian_log_pdf(x, mean, cov), direct, 1e-10);
    }
}

TEST(Gaussian, RejectsBadCovariance)
{
    Matrix asym(2, 2);
    asym << 1, 0.5, 0, 1;
    EXPECT_THROW(Gaussian(Vector::Zero(2), asym), UsageError);
    Matrix neg(2, 2);
    neg << -1, 0, 0, -1;
    EXPECT_THROW(Gaussian(Vector::Zero(2), neg), NumericalError);
}

TEST(WeightedMeanCov, Examples)
{
    const Vector a{{1.0, 4.0}}, b{{3.0, -2.0}};
    std::vector<ParameterVector> xs{a, b};
    auto [mu, cov] = weighted_mean_cov(xs, std::vector<double>{0.5, 0.5});
    EXPECT_LT((mu - (a + b) / 2).norm(), 1e-15);

    auto [mu1, cov1] = weighted_mean_cov(xs, std::vector<double>{0.0, 1.0});
    EXPECT_EQ(mu1, b);
    EXPECT_EQ(cov1, Matrix::Zero(2, 2));

    std::vector<ParameterVector> bad{Vector::Zero(2), Vector::Zero(3)};
    EXPECT_THROW(weighted_mean_cov(bad, std::vector<double>{0.5, 0.5}), UsageError);
}

TEST(WeightedMeanCov, MatchesTwoPassOracle)
{
    RngStream rng(11);
    std::vector<ParameterVector> xs;
    for (int i = 0; i < 4; ++i)
        xs.push_back(Vector{{rng.normal() * 3, rng.normal()}});
    const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
    auto [mu, cov] = weighted_mean_cov(xs, w);
    auto [mu_o, cov_o] = two_pass_moments(xs, w);
    EXPECT_LT((mu - mu_o).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((cov - cov_o).cwiseAbs().maxCoeff(), 1e-12);
}
