#include "npmc/cli.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "npmc/config.hpp"
#include "npmc/experiment.hpp"
#include "npmc/verify.hpp"

namespace npmc::cli {
namespace {

struct Options
{
    std::string config_file;
    std::string suite;
    std::string results_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string out;
    std::vector<std::string> assignments;
    std::map<std::string, std::string> key_flags;
};

ConfigMap load_config(const Options& opt)
{
    std::ifstream is(opt.config_file);
    if (!is)
        throw UsageError("cannot read config file '" + opt.config_file + "'");
    ConfigMap cfg = ConfigMap::parse(is);
    for (const auto& [key, value] : opt.key_flags)
        cfg.set(key, value);
    for (const auto& a : opt.assignments)
        cfg.set_assignment(a);
    if (opt.seed)
        cfg.set("experiment.seed", std::to_string(*opt.seed));
    if (opt.workers)
        cfg.set("run.workers", std::to_string(*opt.workers));
    if (!opt.out.empty())
        cfg.set("output.path", opt.out);
    return cfg;
}

// Writes to `path`, or to `fallback` when path is empty.
template <class Fn>
void with_output(const std::string& path, std::ostream& fallback, Fn&& fn)
{
    if (path.empty())
    {
        fn(fallback);
        return;
    }
    std::ofstream os(path);
    if (!os)
        throw UsageError("cannot write '" + path + "'");
    fn(os);
}

int report_suites(const std::vector<std::string>& suites, std::uint64_t seed, std::ostream& out)
{
    bool ok = true;
    for (const auto& name : suites)
    {
        const auto rep = verify::run_suite(name, seed);
        for (const auto& c : rep.checks)
            out << (c.passed ? "PASS " : "FAIL ") << rep.suite << ": " << c.name << " (" << c.detail << ")\n";
        ok = ok && rep.passed();
    }
    return ok ? exit_success : exit_verification;
}

int cmd_run(const Options& opt, std::ostream& out, std::ostream& err)
{
    const auto cfg = ExperimentConfig::from(load_config(opt));
    if (cfg.kind == ExperimentKind::verify)
        return report_suites({cfg.verify_suite}, cfg.seed, out);
    std::vector<ResultRow> rows;
    with_output(cfg.output_path, out, [&](std::ostream& os) { rows = run_experiment(cfg, os); });
    std::size_t failed = 0;
    for (const auto& r : rows)
        failed += r.ok ? 0 : 1;
    err << "npmc: " << rows.size() << " rows, " << failed << " failed\n";
    return exit_success;
}

int cmd_verify(const Options& opt, std::ostream& out)
{
    const std::uint64_t seed = opt.seed.value_or(20161016);
    if (opt.suite == "all")
        return report_suites(verify::suite_names(), seed, out);
    return report_suites({opt.suite}, seed, out);
}

int cmd_aggregate(const Options& opt, std::ostream& out)
{
    std::ifstream is(opt.results_file);
    if (!is)
        throw UsageError("cannot read results file '" + opt.results_file + "'");
    const auto summary = aggregate_results(read_results(is));
    with_output(opt.out, out, [&](std::ostream& os) { write_summary(os, summary); });
    return exit_success;
}

int cmd_simulate(const Options& opt, std::ostream& out)
{
    const auto cfg = ExperimentConfig::from(load_config(opt));
    const tracking::TrackingModel model(cfg.sensors);
    const auto seed = replicate_seed(cfg.seed, cfg.id, 0);
    RngStream rng(seed, 0);
    auto data = tracking::simulate_dataset(model, cfg.truth, cfg.horizon, rng);
    data.seed = seed;
    with_output(cfg.output_path, out, [&](std::ostream& os) { tracking::write_dataset(os, data); });
    return exit_success;
}

} // namespace

int main(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Nonlinear population Monte Carlo for state-space parameter estimation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(version));
    Options opt;

    app.add_option("--seed", opt.seed, "Base seed");
    app.add_option("--workers", opt.workers, "Worker threads (0 = all cores)");
    app.add_option("--out", opt.out, "Output file (default: stdout)");
    app.add_option("--set", opt.assignments, "Config override key=value (repeatable)");
    for (const auto& [key, def] : config_defaults())
    {
        app.add_option_function<std::string>(
               "--" + key, [&opt, key](const std::string& v) { opt.key_flags[key] = v; },
               "Config key " + key + " (default '" + def + "')")
            ->group("Config keys");
    }

    auto* run = app.add_subcommand("run", "Run an experiment described by a config file");
    run->add_option("config", opt.config_file, "Config file")->required();
    auto* ver = app.add_subcommand("verify", "Run a property suite");
    std::vector<std::string> names = verify::suite_names();
    names.push_back("all");
    ver->add_option("suite", opt.suite, "Suite name")->required()->check(CLI::IsMember(names));
    auto* agg = app.add_subcommand("aggregate", "Summarize a results file");
    agg->add_option("results", opt.results_file, "Results CSV")->required();
    auto* sim = app.add_subcommand("simulate", "Simulate one tracking data set");
    sim->add_option("config", opt.config_file, "Config file")->required();
    for (auto* sub : {run, ver, agg, sim})
        sub->fallthrough();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e, out, err);
        return code == 0 ? exit_success : exit_usage;
    }

    try
    {
        if (*run)
            return cmd_run(opt, out, err);
        if (*ver)
            return cmd_verify(opt, out);
        if (*agg)
            return cmd_aggregate(opt, out);
        return cmd_simulate(opt, out);
    }
    catch (const UsageError& e)
    {
        err << "npmc: " << e.what() << "\n";
        return exit_usage;
    }
    catch (const NumericalError& e)
    {
        err << "npmc: numerical failure: " << e.what() << "\n";
        return exit_numerical;
    }
}

} // namespace npmc::cli
