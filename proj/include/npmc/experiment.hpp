#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "npmc/bootstrap_filter.hpp"
#include "npmc/config.hpp"
#include "npmc/nis.hpp"
#include "npmc/parallel.hpp"
#include "npmc/pmh.hpp"
#include "npmc/prior.hpp"
#include "npmc/tracking.hpp"

namespace npmc {

enum class ExperimentKind
{
    mse_vs_m,
    pmh_chain_sweep,
    n_sweep,
    single_run,
    verify,
};

inline ExperimentKind parse_kind(const std::string& s)
{
    if (s == "mse_vs_m")
        return ExperimentKind::mse_vs_m;
    if (s == "pmh_chain_sweep")
        return ExperimentKind::pmh_chain_sweep;
    if (s == "n_sweep")
        return ExperimentKind::n_sweep;
    if (s == "single_run")
        return ExperimentKind::single_run;
    if (s == "verify")
        return ExperimentKind::verify;
    throw UsageError("config key 'experiment.kind': unknown kind '" + s + "'");
}

inline std::string to_string(ExperimentKind k)
{
    switch (k)
    {
    case ExperimentKind::mse_vs_m: return "mse_vs_m";
    case ExperimentKind::pmh_chain_sweep: return "pmh_chain_sweep";
    case ExperimentKind::n_sweep: return "n_sweep";
    case ExperimentKind::single_run: return "single_run";
    case ExperimentKind::verify: return "verify";
    }
    return "?";
}

/// Validated, typed view of a ConfigMap.
struct ExperimentConfig
{
    ConfigMap source;
    ExperimentKind kind = ExperimentKind::mse_vs_m;
    std::string id;
    std::size_t replicates = 50;
    std::uint64_t seed = 1;
    std::vector<std::string> samplers;

    std::size_t horizon = 50;
    tracking::TrackingParams truth;
    tracking::SensorGrid sensors;

    std::vector<std::size_t> sample_grid; ///< M values
    std::size_t iterations = 10;          ///< K
    std::size_t clip_count = 0;           ///< 0 = floor(sqrt(M))
    std::vector<std::size_t> particle_grid;
    std::vector<std::size_t> chain_grid; ///< L values, pmh_chain_sweep only
    double pmh_scale = 0.2;
    Vector pmh_cov_diag;
    double burn_in = 0.5;

    std::string verify_suite;
    std::string output_path;
    std::string trace_prefix;
    bool timing = false;
    std::size_t workers = 0;

    static ExperimentConfig from(const ConfigMap& cfg)
    {
        ExperimentConfig c;
        c.source = cfg;
        c.kind = parse_kind(cfg.get("experiment.kind"));
        c.id = cfg.get("experiment.id").empty() ? to_string(c.kind) : cfg.get("experiment.id");
        if (c.id.find_first_of(",\n\"") != std::string::npos)
            throw UsageError("config key 'experiment.id': must not contain commas or quotes");
        c.replicates = parse_positive("experiment.replicates", cfg.get("experiment.replicates"));
        c.seed = parse_u64("experiment.seed", cfg.get("experiment.seed"));
        c.samplers = split_list(cfg.get("experiment.samplers"));
        for (const auto& s : c.samplers)
            if (s != "npmc" && s != "pmc" && s != "pmh")
                throw UsageError("config key 'experiment.samplers': unknown sampler '" + s + "'");

        c.horizon = parse_positive("model.m", cfg.get("model.m"));
        const double pt = parse_double("model.pt", cfg.get("model.pt"));
        const double rho = parse_double("model.rho", cfg.get("model.rho"));
        if (!(pt > 0.0))
            throw UsageError("config key 'model.pt': must be positive");
        if (!(rho > 0.0))
            throw UsageError("config key 'model.rho': must be positive");
        c.truth = {std::log(pt), parse_double("model.nu", cfg.get("model.nu")), std::log(rho)};
        c.sensors = parse_sensors(cfg.get("model.sensors"));

        c.sample_grid = parse_positive_list("npmc.M", cfg.get("npmc.M"));
        c.iterations = static_cast<std::size_t>(parse_u64("npmc.K", cfg.get("npmc.K")));
        const std::string& mc = cfg.get("npmc.Mc");
        c.clip_count = mc == "sqrt" ? 0 : parse_positive("npmc.Mc", mc);
        for (auto m : c.sample_grid)
            if (c.clip_count * c.clip_count > m)
                throw UsageError("config key 'npmc.Mc': must satisfy M_c <= sqrt(M) for every M");
        c.particle_grid = parse_positive_list("bf.N", cfg.get("bf.N"));
        c.chain_grid = parse_positive_list("pmh.L", cfg.get("pmh.L"));
        for (auto l : c.chain_grid)
            if (l < 2)
                throw UsageError("config key 'pmh.L': chain length must be at least 2");
        c.pmh_scale = parse_double("pmh.scale", cfg.get("pmh.scale"));
        if (!(c.pmh_scale > 0.0))
            throw UsageError("config key 'pmh.scale': must be positive");
        const auto cov = split_list(cfg.get("pmh.cov"));
        if (cov.size() != 3)
            throw UsageError("config key 'pmh.cov': expected 3 variances");
        c.pmh_cov_diag.resize(3);
        for (int i = 0; i < 3; ++i)
        {
            c.pmh_cov_diag[i] = parse_double("pmh.cov", cov[static_cast<std::size_t>(i)]);
            if (!(c.pmh_cov_diag[i] > 0.0))
                throw UsageError("config key 'pmh.cov': variances must be positive");
        }
        c.burn_in = parse_double("pmh.burn_in", cfg.get("pmh.burn_in"));
        if (!(c.burn_in >= 0.0 && c.burn_in < 1.0))
            throw UsageError("config key 'pmh.burn_in': must lie in [0, 1)");

        c.verify_suite = cfg.get("verify.suite");
        c.output_path = cfg.get("output.path");
        c.trace_prefix = cfg.get("output.trace");
        c.timing = parse_bool("output.timing", cfg.get("output.timing"));
        c.workers = static_cast<std::size_t>(parse_u64("run.workers", cfg.get("run.workers")));
        if ((c.kind == ExperimentKind::mse_vs_m || c.kind == ExperimentKind::n_sweep
             || c.kind == ExperimentKind::single_run)
            && c.samplers.empty())
            throw UsageError("config key 'experiment.samplers': no samplers selected");
        return c;
    }

    static tracking::SensorGrid parse_sensors(const std::string& text)
    {
        if (text == "grid")
            return tracking::SensorGrid::default_grid();
        tracking::SensorGrid grid;
        for (const auto& xy : split_list(text))
        {
            const auto colon = xy.find(':');
            if (colon == std::string::npos)
                throw UsageError("config key 'model.sensors': expected x:y pairs, got '" + xy + "'");
            grid.positions.emplace_back(parse_double("model.sensors", xy.substr(0, colon)),
                                        parse_double("model.sensors", xy.substr(colon + 1)));
        }
        if (grid.size() == 0)
            throw UsageError("config key 'model.sensors': no sensors");
        return grid;
    }
};

/// One (grid point, sampler, replicate) outcome.
struct ResultRow
{
    std::string experiment;
    std::string sampler;
    std::size_t M = 0, K = 0, N = 0, L = 0;
    std::size_t replicate = 0;
    std::uint64_t replicate_seed = 0;
    bool ok = true;
    std::string status = "ok";
    Vector squared_errors;
    double total_squared_error = std::nan("");
    double wall_seconds = 0.0;
    std::size_t bf_calls = 0;
};

/// Replicate seed: a pure function of (base seed, experiment id, replicate).
/// All grid points and samplers of a replicate share its dataset.
inline std::uint64_t replicate_seed(std::uint64_t base_seed, const std::string& experiment_id, std::size_t replicate)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : experiment_id)
    {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return mix_keys(mix_keys(base_seed, h), replicate);
}

/// Stream key for one sampler run inside a replicate.
inline std::uint64_t sampler_stream(const std::string& sampler, std::size_t M, std::size_t N, std::size_t L)
{
    std::uint64_t h = 0x84222325cbf29ce4ull;
    for (unsigned char ch : sampler)
        h = mix_keys(h, ch);
    return mix_keys(mix_keys(mix_keys(h, M), N), L);
}

/// Likelihood wrapper that counts bootstrap-filter invocations.
template <class Inner>
class CountingLikelihood
{
  public:
    explicit CountingLikelihood(Inner inner) : inner_(std::move(inner)) {}

    double operator()(const ParameterVector& theta, RngStream& rng) const
    {
        ++calls_;
        return inner_(theta, rng);
    }

    std::size_t calls() const { return calls_.load(); }

  private:
    Inner inner_;
    mutable std::atomic<std::size_t> calls_{0};
};

//---------------------------------------------------------------------------//
// CSV
//---------------------------------------------------------------------------//

inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string results_header(bool timing)
{
    std::string h = "experiment,sampler,M,K,N,L,replicate,replicate_seed,status,se_0,se_1,se_2,total_se,bf_calls";
    if (timing)
        h += ",wall_seconds";
    return h;
}

inline std::string format_row(const ResultRow& r, bool timing)
{
    std::ostringstream os;
    os << r.experiment << "," << r.sampler << "," << r.M << "," << r.K << "," << r.N << "," << r.L << ","
       << r.replicate << "," << r.replicate_seed << "," << r.status;
    for (Eigen::Index c = 0; c < 3; ++c)
        os << "," << format_double(c < r.squared_errors.size() ? r.squared_errors[c] : std::nan(""));
    os << "," << format_double(r.total_squared_error) << "," << r.bf_calls;
    if (timing)
        os << "," << format_double(r.wall_seconds);
    return os.str();
}

inline void write_preamble(std::ostream& os, const ExperimentConfig& cfg)
{
    os << "# npmc results\n"
       << "# build: npmc " << version << "\n"
       << "# config_hash: " << cfg.source.hash() << "\n"
       << "# base_seed: " << cfg.seed << "\n";
}

/// Parses a results file written by run_experiment (preamble lines skipped).
inline std::vector<ResultRow> read_results(std::istream& is)
{
    std::vector<ResultRow> rows;
    std::string line;
    std::vector<std::string> header;
    while (std::getline(is, line))
    {
        if (line.empty() || line[0] == '#')
            continue;
        std::vector<std::string> cells;
        {
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ','))
                cells.push_back(cell);
        }
        if (header.empty())
        {
            header = cells;
            if (header.size() < 14 || header[0] != "experiment")
                throw UsageError("read_results: not a results file");
            continue;
        }
        if (cells.size() < 14)
            throw UsageError("read_results: short row");
        auto num = [&](std::size_t i) { return cells[i] == "nan" ? std::nan("") : std::stod(cells[i]); };
        ResultRow r;
        r.experiment = cells[0];
        r.sampler = cells[1];
        r.M = std::stoul(cells[2]);
        r.K = std::stoul(cells[3]);
        r.N = std::stoul(cells[4]);
        r.L = std::stoul(cells[5]);
        r.replicate = std::stoul(cells[6]);
        r.replicate_seed = std::stoull(cells[7]);
        r.status = cells[8];
        r.ok = r.status == "ok";
        r.squared_errors = Vector{{num(9), num(10), num(11)}};
        r.total_squared_error = num(12);
        r.bf_calls = std::stoul(cells[13]);
        if (cells.size() > 14)
            r.wall_seconds = num(14);
        rows.push_back(std::move(r));
    }
    return rows;
}

//---------------------------------------------------------------------------//
// Running
//---------------------------------------------------------------------------//

struct ExperimentJob
{
    std::string sampler;
    std::size_t M = 0, K = 0, N = 0, L = 0;
    std::size_t replicate = 0;
};

/// Jobs in canonical order: grid point, then replicate, then sampler.
inline std::vector<ExperimentJob> enumerate_jobs(const ExperimentConfig& cfg)
{
    std::vector<ExperimentJob> jobs;
    const std::size_t K = cfg.iterations;
    auto add_point = [&](std::size_t M, std::size_t N, std::size_t L, const std::vector<std::string>& samplers) {
        for (std::size_t r = 0; r < cfg.replicates; ++r)
            for (const auto& s : samplers)
                jobs.push_back({s, s == "pmh" ? 0 : M, s == "pmh" ? 0 : K, N, s == "pmh" ? L : 0, r});
    };
    switch (cfg.kind)
    {
    case ExperimentKind::mse_vs_m:
        for (auto M : cfg.sample_grid)
            add_point(M, cfg.particle_grid.front(), M * std::max<std::size_t>(K, 1), cfg.samplers);
        break;
    case ExperimentKind::n_sweep:
        for (auto M : cfg.sample_grid)
            for (auto N : cfg.particle_grid)
                add_point(M, N, M * std::max<std::size_t>(K, 1), cfg.samplers);
        break;
    case ExperimentKind::pmh_chain_sweep:
        for (auto L : cfg.chain_grid)
            add_point(0, cfg.particle_grid.front(), L, {"pmh"});
        break;
    case ExperimentKind::single_run:
        add_point(cfg.sample_grid.front(), cfg.particle_grid.front(),
                  cfg.sample_grid.front() * std::max<std::size_t>(K, 1), cfg.samplers);
        break;
    case ExperimentKind::verify:
        throw UsageError("enumerate_jobs: verify experiments have no sampler jobs");
    }
    return jobs;
}

namespace detail {

inline std::string trace_path(const std::string& prefix, const ExperimentJob& job)
{
    std::ostringstream os;
    os << prefix << "_" << job.sampler << "_M" << job.M << "_N" << job.N << "_L" << job.L << "_r" << job.replicate
       << ".csv";
    return os.str();
}

inline ResultRow run_job(const ExperimentConfig& cfg, const tracking::TrackingModel& model, const ExperimentJob& job)
{
    ResultRow row;
    row.experiment = cfg.id;
    row.sampler = job.sampler;
    row.M = job.M;
    row.K = job.K;
    row.N = job.N;
    row.L = job.L;
    row.replicate = job.replicate;
    row.replicate_seed = replicate_seed(cfg.seed, cfg.id, job.replicate);

    const auto start = std::chrono::steady_clock::now();
    const ParameterVector truth = cfg.truth.theta();
    RngStream data_rng(row.replicate_seed, 0);
    const auto data = tracking::simulate_dataset(model, cfg.truth, cfg.horizon, data_rng);
    const auto prior = tracking_parameter_prior();
    CountingLikelihood lik(BootstrapLikelihood<tracking::TrackingModel>(model, data.observations, job.N));
    const RngStream sampler_rng(row.replicate_seed, sampler_stream(job.sampler, job.M, job.N, job.L));

    try
    {
        ParameterVector estimate;
        if (job.sampler == "pmh")
        {
            PmhConfig pc;
            pc.chain_length = job.L;
            pc.particles = job.N;
            pc.burn_in_fraction = cfg.burn_in;
            pc.proposal_covariance = cfg.pmh_scale * cfg.pmh_cov_diag.asDiagonal().toDenseMatrix();
            const auto result = run_pmh(prior, lik, pc, sampler_rng);
            estimate = pmh_posterior_mean(result.chain, cfg.burn_in);
            if (!cfg.trace_prefix.empty())
            {
                std::ofstream os(trace_path(cfg.trace_prefix, job));
                write_chain(os, result.chain);
            }
        }
        else
        {
            SamplerConfig sc;
            sc.samples = job.M;
            sc.iterations = job.K;
            sc.clip_count = cfg.clip_count;
            sc.particles = job.N;
            sc.transform = job.sampler == "npmc" ? WeightTransform::clip : WeightTransform::identity;
            const auto clouds = run_sampler(prior, lik, sc, sampler_rng);
            estimate = posterior_mean(clouds.back());
            if (!cfg.trace_prefix.empty())
            {
                std::ofstream os(trace_path(cfg.trace_prefix, job));
                write_cloud_header(os, 3);
                for (const auto& cloud : clouds)
                    write_cloud_rows(os, cloud);
            }
        }
        row.squared_errors = squared_errors(estimate, truth);
        row.total_squared_error = row.squared_errors.sum();
        if (!std::isfinite(row.total_squared_error))
            throw NumericalError("non-finite estimate");
    }
    catch (const DegenerateWeights&)
    {
        row.ok = false;
        row.status = "failed_degenerate";
    }
    catch (const NumericalError&)
    {
        row.ok = false;
        row.status = "failed_numerical";
    }
    if (!row.ok)
    {
        row.squared_errors = Vector::Constant(3, std::nan(""));
        row.total_squared_error = std::nan("");
    }
    row.bf_calls = lik.calls();
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

} // namespace detail

/*!
 * Runs every job of the experiment on a pool of cfg.workers threads and
 * writes the CSV (preamble, header, rows) to `out`.
 *
 * Rows are emitted as soon as every earlier job has finished, so the file
 * grows incrementally but its order (and content) never depends on the
 * number of workers. Failed sampler runs become failed rows.
 */
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, std::ostream& out)
{
    const auto jobs = enumerate_jobs(cfg);
    const tracking::TrackingModel model(cfg.sensors);

    write_preamble(out, cfg);
    out << results_header(cfg.timing) << "\n";
    out.flush();

    std::vector<std::optional<ResultRow>> done(jobs.size());
    std::size_t next_to_write = 0;
    std::mutex sink;
    parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
        ResultRow row = detail::run_job(cfg, model, jobs[i]);
        std::lock_guard lock(sink);
        done[i] = std::move(row);
        while (next_to_write < done.size() && done[next_to_write])
        {
            out << format_row(*done[next_to_write], cfg.timing) << "\n";
            ++next_to_write;
        }
        out.flush();
    });

    std::vector<ResultRow> rows;
    rows.reserve(done.size());
    for (auto& r : done)
        rows.push_back(std::move(*r));
    return rows;
}

//---------------------------------------------------------------------------//
// Aggregation
//---------------------------------------------------------------------------//

struct SummaryRow
{
    std::string experiment;
    std::string sampler;
    std::size_t M = 0, K = 0, N = 0, L = 0;
    std::size_t replicates = 0; ///< successful runs
    std::size_t failures = 0;
    std::optional<double> mean_mse;
    std::optional<double> standard_error;
};

/// Mean squared error and its standard error per (sampler, grid point),
/// in first-appearance order.
inline std::vector<SummaryRow> aggregate_results(const std::vector<ResultRow>& rows)
{
    if (rows.empty())
        throw UsageError("aggregate_results: empty table");
    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> values;
    std::map<std::string, std::size_t> index;
    for (const auto& r : rows)
    {
        std::ostringstream key;
        key << r.experiment << "|" << r.sampler << "|" << r.M << "|" << r.K << "|" << r.N << "|" << r.L;
        auto [it, fresh] = index.emplace(key.str(), out.size());
        if (fresh)
        {
            SummaryRow g;
            g.experiment = r.experiment;
            g.sampler = r.sampler;
            g.M = r.M;
            g.K = r.K;
            g.N = r.N;
            g.L = r.L;
            out.push_back(std::move(g));
            values.emplace_back();
        }
        if (r.ok && std::isfinite(r.total_squared_error))
            values[it->second].push_back(r.total_squared_error);
        else
            ++out[it->second].failures;
    }
    for (std::size_t g = 0; g < out.size(); ++g)
    {
        const auto& v = values[g];
        out[g].replicates = v.size();
        if (v.empty())
            continue;
        double mean = 0.0;
        for (double x : v)
            mean += x;
        mean /= static_cast<double>(v.size());
        out[g].mean_mse = mean;
        if (v.size() > 1)
        {
            double ss = 0.0;
            for (double x : v)
                ss += (x - mean) * (x - mean);
            out[g].standard_error = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
        }
    }
    return out;
}

inline void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows)
{
    os << "experiment,sampler,M,K,N,L,replicates,failures,mean_mse,se_mse\n";
    for (const auto& r : rows)
    {
        os << r.experiment << "," << r.sampler << "," << r.M << "," << r.K << "," << r.N << "," << r.L << ","
           << r.replicates << "," << r.failures << "," << (r.mean_mse ? format_double(*r.mean_mse) : "NA") << ","
           << (r.standard_error ? format_double(*r.standard_error) : "NA") << "\n";
    }
}

} // namespace npmc
