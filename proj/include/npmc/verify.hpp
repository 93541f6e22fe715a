#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "npmc/bootstrap_filter.hpp"
#include "npmc/linear_gaussian.hpp"
#include "npmc/nis.hpp"
#include "npmc/pmh.hpp"
#include "npmc/prior.hpp"
#include "npmc/tracking.hpp"

namespace npmc::verify {

struct Check
{
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SuiteReport
{
    std::string suite;
    std::vector<Check> checks;

    bool passed() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
    }
};

inline std::vector<std::string> suite_names()
{
    return {"unbiasedness", "rate", "exact-approximation", "clipping", "reflection", "caching", "pmh-ks"};
}

//---------------------------------------------------------------------------//
// Unbiasedness of the bootstrap likelihood
//---------------------------------------------------------------------------//

struct UnbiasednessResult
{
    std::size_t particles = 0;
    double mean_ratio = 0.0;
    double standard_error = 0.0;
    bool passed = false;
};

/// Scalar linear-Gaussian model used for the likelihood checks:
/// x_n = 0.9 x_{n-1} + N(0, 0.5), y_n = x_n + N(0, 1), x_0 ~ N(0, 1).
inline LinearGaussianModel unbiasedness_model()
{
    return LinearGaussianModel::scalar(0.9, 0.5, 1.0, 1.0, 0.0, 1.0);
}

/*!
 * Mean of l^N / l over `replicates` independent filter runs for each N,
 * against the Kalman likelihood. Passes when |mean - 1| <= 4 standard errors.
 */
inline std::vector<UnbiasednessResult> check_unbiasedness(std::uint64_t seed, std::size_t replicates = 500,
                                                          std::vector<std::size_t> particle_counts = {10, 50, 400},
                                                          std::size_t horizon = 20)
{
    const auto model = unbiasedness_model();
    const ParameterVector theta(0);
    RngStream data_rng(seed, 1);
    const Observations y = model.simulate(theta, horizon, data_rng).first;
    const double exact = kalman_log_likelihood(model, theta, y);

    std::vector<UnbiasednessResult> out;
    for (std::size_t N : particle_counts)
    {
        const RngStream base(seed, mix_keys(2, N));
        std::vector<double> ratio(replicates);
        for (std::size_t r = 0; r < replicates; ++r)
        {
            RngStream rng = base.split(r);
            ratio[r] = std::exp(run_bootstrap_filter(model, theta, y, N, rng).log_value - exact);
        }
        const double mean = std::accumulate(ratio.begin(), ratio.end(), 0.0) / static_cast<double>(replicates);
        double ss = 0.0;
        for (double v : ratio)
            ss += (v - mean) * (v - mean);
        const double se = std::sqrt(ss / static_cast<double>(replicates - 1) / static_cast<double>(replicates));
        out.push_back({N, mean, se, std::abs(mean - 1.0) <= 4.0 * se});
    }
    return out;
}

//---------------------------------------------------------------------------//
// Convergence rate
//---------------------------------------------------------------------------//

struct RateResult
{
    std::vector<std::size_t> sample_sizes;
    std::vector<double> rmse;
    double slope = 0.0;
    double slope_se = 0.0;

    double ci_low() const { return slope - 1.96 * slope_se; }
    double ci_high() const { return slope + 1.96 * slope_se; }
};

/// Conjugate one-step model: theta ~ N(0, 1), x_1 = theta + N(0, 0.5),
/// y_1 = x_1 + N(0, 0.5), observed y_1 = 1.5. Posterior N(0.75, 0.5).
struct ConjugateToy
{
    LinearGaussianModel model = LinearGaussianModel::scalar(0.0, 0.5, 1.0, 0.5, 0.0, 1.0, true);
    Observations y = Observations::Constant(1, 1, 1.5);
    GaussianPrior prior{Vector::Zero(1), Matrix::Identity(1, 1)};
    double posterior_mean = 0.75;
    double posterior_variance = 0.5;

    double exact_log_likelihood(const ParameterVector& theta) const
    {
        return normal_log_pdf(y(0, 0), theta[0], 1.0);
    }
};

/*!
 * Ordinary least-squares slope of log RMSE against log M for a single
 * clipped importance-sampling step from the prior (M_c = floor(sqrt(M))).
 * particles == 0 uses the exact likelihood, otherwise a bootstrap filter of
 * that many particles. The slope's standard error propagates the sampling
 * error of each RMSE by the delta method.
 */
inline RateResult check_rate(std::uint64_t seed, std::size_t particles, std::size_t replicates = 200,
                             std::vector<std::size_t> sample_sizes = {100, 1000, 10000})
{
    const ConjugateToy toy;
    RateResult res;
    res.sample_sizes = sample_sizes;
    std::vector<double> x, yv, var_y;
    for (std::size_t M : sample_sizes)
    {
        SamplerConfig cfg;
        cfg.samples = M;
        cfg.iterations = 0;
        cfg.particles = std::max<std::size_t>(particles, 1);
        cfg.transform = WeightTransform::clip;
        std::vector<double> sq(replicates);
        for (std::size_t r = 0; r < replicates; ++r)
        {
            const RngStream rng(seed, mix_keys(mix_keys(3, M), r));
            WeightedParameterCloud cloud;
            if (particles == 0)
            {
                auto lik = [&toy](const ParameterVector& theta, RngStream&) { return toy.exact_log_likelihood(theta); };
                cloud = nis_iteration(std::nullopt, toy.prior, lik, cfg, 0, rng);
            }
            else
            {
                BootstrapLikelihood<LinearGaussianModel> lik(toy.model, toy.y, particles);
                cloud = nis_iteration(std::nullopt, toy.prior, lik, cfg, 0, rng);
            }
            const double e = posterior_mean(cloud)[0] - toy.posterior_mean;
            sq[r] = e * e;
        }
        const double mse = std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(replicates);
        double ss = 0.0;
        for (double v : sq)
            ss += (v - mse) * (v - mse);
        const double var_mse = ss / static_cast<double>(replicates - 1) / static_cast<double>(replicates);
        res.rmse.push_back(std::sqrt(mse));
        x.push_back(std::log(static_cast<double>(M)));
        yv.push_back(0.5 * std::log(mse));
        // d(0.5 log mse) = dmse / (2 mse)
        var_y.push_back(var_mse / (4.0 * mse * mse));
    }
    const double xbar = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    const double ybar = std::accumulate(yv.begin(), yv.end(), 0.0) / static_cast<double>(yv.size());
    double sxx = 0.0, sxy = 0.0, var_num = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        sxx += (x[i] - xbar) * (x[i] - xbar);
        sxy += (x[i] - xbar) * (yv[i] - ybar);
        var_num += (x[i] - xbar) * (x[i] - xbar) * var_y[i];
    }
    res.slope = sxy / sxx;
    res.slope_se = std::sqrt(var_num) / sxx;
    return res;
}

//---------------------------------------------------------------------------//
// Clipping transform
//---------------------------------------------------------------------------//

// Reference clip by full sort: rank the weights, flatten the top M_c.
inline std::vector<double> clip_by_sort(const std::vector<double>& w, std::size_t mc)
{
    std::vector<std::size_t> order(w.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
    const double t = w[order[mc - 1]];
    std::vector<double> out = w;
    for (std::size_t r = 0; r < mc; ++r)
        out[order[r]] = t;
    return out;
}

/// Randomized property checks of clip_weights.
inline SuiteReport check_clipping(std::uint64_t seed, std::size_t cases = 10000)
{
    SuiteReport rep{"clipping", {}};
    std::size_t bad_oracle = 0, bad_order = 0, bad_idem = 0, bad_ceiling = 0, bad_identity = 0;
    const RngStream base(seed, 4);
    for (std::size_t c = 0; c < cases; ++c)
    {
        RngStream rng = base.split(c);
        const std::size_t M = 2 + static_cast<std::size_t>(rng.uniform() * 300.0);
        const std::size_t mc = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(default_clip_count(M)));
        std::vector<double> w(M);
        const bool ties = rng.uniform() < 0.2;
        for (auto& v : w)
            v = ties ? std::floor(rng.uniform() * 5.0) : 10.0 * rng.normal();
        if (rng.uniform() < 0.1)
            w[static_cast<std::size_t>(rng.uniform() * static_cast<double>(M))] = neg_inf;

        const auto clipped = clip_weights(w, mc);
        if (clipped != clip_by_sort(w, mc))
            ++bad_oracle;
        for (std::size_t i = 0; i + 1 < M && bad_order == 0; ++i)
            for (std::size_t j = i + 1; j < M; ++j)
                if (w[i] <= w[j] && clipped[i] > clipped[j])
                {
                    ++bad_order;
                    break;
                }
        if (clip_weights(clipped, mc) != clipped)
            ++bad_idem;
        const auto norm = normalize_log_weights(clipped);
        if (*std::max_element(norm.begin(), norm.end()) > 1.0 / static_cast<double>(mc) + 1e-12)
            ++bad_ceiling;
        if (clip_weights(w, 1) != w)
            ++bad_identity;
    }
    auto add = [&](std::string name, std::size_t bad) {
        rep.checks.push_back({std::move(name), bad == 0, std::to_string(bad) + " of " + std::to_string(cases) + " cases failed"});
    };
    add("matches sort-based reference", bad_oracle);
    add("monotone", bad_order);
    add("idempotent", bad_idem);
    add("normalized weight at most 1/M_c", bad_ceiling);
    add("M_c = 1 is the identity", bad_identity);
    return rep;
}

//---------------------------------------------------------------------------//
// Reflection
//---------------------------------------------------------------------------//

// Folds coordinate v into [lo, hi] by repeated mirroring; returns the number
// of mirrorings through `flips`.
inline double fold_into(double v, double lo, double hi, int& flips)
{
    flips = 0;
    while (v < lo || v > hi)
    {
        v = v < lo ? 2.0 * lo - v : 2.0 * hi - v;
        ++flips;
    }
    return v;
}

inline SuiteReport check_reflection(std::uint64_t seed, std::size_t steps = 100000)
{
    SuiteReport rep{"reflection", {}};
    const tracking::Region region;

    // Containment along a simulated trajectory.
    std::size_t escaped = 0;
    {
        RngStream rng(seed, 5);
        auto s = tracking::tracking_prior_sample(rng, region);
        for (std::size_t n = 0; n < steps; ++n)
        {
            s = tracking::tracking_transition(s, rng, region);
            if (!region.contains(s.position))
                ++escaped;
        }
    }
    rep.checks.push_back({"positions stay in the region", escaped == 0,
                          std::to_string(escaped) + " escapes in " + std::to_string(steps) + " steps"});

    // Single reflections against the mirror image, and speed preservation.
    std::size_t mirror_bad = 0, speed_bad = 0, tested = 0;
    double worst = 0.0;
    RngStream rng(seed, 6);
    for (std::size_t n = 0; n < steps; ++n)
    {
        const tracking::Vec2 prev(rng.uniform(region.x_min, region.x_max), rng.uniform(region.y_min, region.y_max));
        const tracking::Vec2 step(rng.normal() * 6.0, rng.normal() * 3.0);
        const tracking::Vec2 proposed = prev + step;
        if (region.contains(proposed))
            continue;
        int fx = 0, fy = 0;
        const tracking::Vec2 expect(fold_into(proposed.x(), region.x_min, region.x_max, fx),
                                    fold_into(proposed.y(), region.y_min, region.y_max, fy));
        if (fx + fy > tracking::max_reflections)
            continue;
        ++tested;
        const tracking::Vec2 vel(rng.normal(), rng.normal());
        const auto [pos, v] = tracking::reflect(region, prev, proposed, vel);
        const double err = (pos - expect).cwiseAbs().maxCoeff();
        worst = std::max(worst, err);
        if (err > 1e-10)
            ++mirror_bad;
        if (std::abs(v.norm() - vel.norm()) > 1e-12 * std::max(1.0, vel.norm()))
            ++speed_bad;
    }
    std::ostringstream d;
    d << tested << " reflected steps, max deviation " << worst;
    rep.checks.push_back({"matches mirror image within 1e-10", mirror_bad == 0, d.str()});
    rep.checks.push_back({"speed preserved within 1e-12", speed_bad == 0,
                          std::to_string(speed_bad) + " of " + std::to_string(tested) + " violate"});
    return rep;
}

//---------------------------------------------------------------------------//
// pMH
//---------------------------------------------------------------------------//

/// Counts estimator calls and records the thetas passed in.
class RecordingLikelihood
{
  public:
    explicit RecordingLikelihood(const ConjugateToy& toy) : toy_(&toy) {}

    double operator()(const ParameterVector& theta, RngStream& rng) const
    {
        seen_.push_back(theta);
        // Multiplicative noise keeps the estimate random, as with a filter.
        return toy_->exact_log_likelihood(theta) + 0.3 * rng.normal() - 0.045;
    }

    const std::vector<ParameterVector>& seen() const { return seen_; }

  private:
    const ConjugateToy* toy_;
    mutable std::vector<ParameterVector> seen_;
};

inline SuiteReport check_caching(std::uint64_t seed, std::size_t chain_length = 2000)
{
    SuiteReport rep{"caching", {}};
    const ConjugateToy toy;
    RecordingLikelihood lik(toy);
    PmhConfig cfg;
    cfg.chain_length = chain_length;
    cfg.proposal_covariance = Matrix::Identity(1, 1);
    const auto res = run_pmh(toy.prior, lik, cfg, RngStream(seed, 7));
    const auto& seen = lik.seen();
    rep.checks.push_back({"one estimate per proposal", seen.size() == chain_length + 1,
                          std::to_string(seen.size()) + " estimates for " + std::to_string(chain_length) +
                              " proposals"});
    // Each accepted state carries the estimate made when it was proposed.
    std::size_t stale = 0, rejected_changed = 0;
    for (std::size_t r = 1; r < res.chain.size(); ++r)
    {
        const auto& s = res.chain[r];
        if (s.accepted && s.theta != seen[r])
            ++stale;
        if (!s.accepted && (s.theta != res.chain[r - 1].theta || s.cached_log_lik != res.chain[r - 1].cached_log_lik))
            ++rejected_changed;
    }
    rep.checks.push_back({"accepted states keep their estimate", stale == 0, std::to_string(stale) + " mismatches"});
    rep.checks.push_back({"rejections copy the previous state", rejected_changed == 0,
                          std::to_string(rejected_changed) + " changed"});
    return rep;
}

/// Integrated autocorrelation time, summed until the autocorrelation first
/// drops below 0.05.
inline double autocorrelation_time(const std::vector<double>& x)
{
    const std::size_t n = x.size();
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double c0 = 0.0;
    for (double v : x)
        c0 += (v - mean) * (v - mean);
    double tau = 1.0;
    for (std::size_t lag = 1; lag < n / 2; ++lag)
    {
        double c = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i)
            c += (x[i] - mean) * (x[i + lag] - mean);
        const double rho = c / c0;
        if (rho < 0.05)
            break;
        tau += 2.0 * rho;
    }
    return tau;
}

/// Kolmogorov-Smirnov distance to N(mean, variance).
inline double ks_statistic(std::vector<double> x, double mean, double variance)
{
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double d = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        const double f = 0.5 * std::erfc(-(x[i] - mean) / std::sqrt(2.0 * variance));
        d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
    }
    return d;
}

/// pMH with the exact likelihood on the conjugate toy; the post-burn-in
/// chain, thinned by its autocorrelation time, must pass a KS test against
/// the exact posterior at level 0.001.
inline SuiteReport check_pmh_ks(std::uint64_t seed, std::size_t chain_length = 40000)
{
    SuiteReport rep{"pmh-ks", {}};
    const ConjugateToy toy;
    auto lik = [&toy](const ParameterVector& theta, RngStream&) { return toy.exact_log_likelihood(theta); };
    PmhConfig cfg;
    cfg.chain_length = chain_length;
    cfg.proposal_covariance = Matrix::Constant(1, 1, 1.5);
    const auto res = run_pmh(toy.prior, lik, cfg, RngStream(seed, 8));
    std::vector<double> post;
    for (std::size_t r = chain_length / 2 + 1; r <= chain_length; ++r)
        post.push_back(res.chain[r].theta[0]);
    const double tau = autocorrelation_time(post);
    const auto thin = static_cast<std::size_t>(std::ceil(2.0 * tau));
    std::vector<double> kept;
    for (std::size_t i = 0; i < post.size(); i += thin)
        kept.push_back(post[i]);
    const double d = ks_statistic(kept, toy.posterior_mean, toy.posterior_variance);
    const double crit = 1.9495 / std::sqrt(static_cast<double>(kept.size()));
    std::ostringstream os;
    os << "D = " << d << ", critical " << crit << ", " << kept.size() << " draws (thinning " << thin
       << "), acceptance " << res.acceptance_rate;
    rep.checks.push_back({"chain matches the posterior", d < crit, os.str()});
    return rep;
}

//---------------------------------------------------------------------------//
// Dispatch
//---------------------------------------------------------------------------//

inline SuiteReport rate_report(const std::string& name, const RateResult& r)
{
    std::ostringstream os;
    os << "slope " << r.slope << " (95% CI " << r.ci_low() << " .. " << r.ci_high() << "), RMSE";
    for (std::size_t i = 0; i < r.rmse.size(); ++i)
        os << " M=" << r.sample_sizes[i] << ":" << r.rmse[i];
    return {name, {{"slope in [-0.65, -0.35]", r.slope >= -0.65 && r.slope <= -0.35, os.str()}}};
}

/// Runs a named suite; throws UsageError for unknown names.
inline SuiteReport run_suite(const std::string& name, std::uint64_t seed)
{
    if (name == "unbiasedness")
    {
        SuiteReport rep{name, {}};
        for (const auto& r : check_unbiasedness(seed))
        {
            std::ostringstream os;
            os << "mean ratio " << r.mean_ratio << " +- " << r.standard_error;
            rep.checks.push_back({"N=" + std::to_string(r.particles) + " mean within 4 SE of 1", r.passed, os.str()});
        }
        return rep;
    }
    if (name == "rate")
        return rate_report(name, check_rate(seed, 0));
    if (name == "exact-approximation")
        return rate_report(name, check_rate(seed, 50));
    if (name == "clipping")
        return check_clipping(seed);
    if (name == "reflection")
        return check_reflection(seed);
    if (name == "caching")
        return check_caching(seed);
    if (name == "pmh-ks")
        return check_pmh_ks(seed);
    throw UsageError("unknown verification suite '" + name + "'");
}

} // namespace npmc::verify
