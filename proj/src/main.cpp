#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "crhmm/cli_io.hpp"
#include "crhmm/parallel.hpp"

namespace fs = std::filesystem;

namespace {

using namespace crhmm;

constexpr double kStabilityThreshold = 0.9;

struct Args {
    std::string config_path;
    std::string data_path;
    std::string out_dir;
    int workers = -1;       // -1: take the config's value
    std::int64_t seed = -1; // -1: take the config's value
    bool resume = false;
};

RunConfig load_config(const Args& args) {
    RunConfig config = load_run_config(args.config_path);
    if (args.workers >= 0) config.workers = args.workers;
    if (args.seed >= 0) {
        config.seed = static_cast<std::uint64_t>(args.seed);
        config.fit.seed = config.seed;
        config.blb.seed = config.seed;
    }
    return config;
}

Dataset load_data(const Args& args, const RunConfig& config) {
    if (!fs::exists(args.data_path))
        throw data_error("data file '" + args.data_path + "' does not exist");
    return read_dataset(args.data_path, config.model.design.K());
}

std::string out_path(const Args& args, const char* name) {
    fs::create_directories(args.out_dir);
    return (fs::path(args.out_dir) / name).string();
}

std::vector<long> register_counts_for(const RunConfig& config, const Dataset& data) {
    if (config.register_counts.empty()) return rtb_series(data);
    const auto years = static_cast<std::size_t>(data.year_end - data.year_start + 1);
    if (config.register_counts.size() != years)
        throw config_error("report.register_counts has " +
                           std::to_string(config.register_counts.size()) +
                           " entries but the data spans " + std::to_string(years) + " years");
    return config.register_counts;
}

std::vector<std::string> year_labels(const Dataset& data) {
    std::vector<std::string> labels;
    for (int y = data.year_start; y <= data.year_end; ++y)
        labels.push_back(std::to_string(y));
    return labels;
}

int cmd_simulate(const Args& args) {
    const RunConfig config = load_config(args);
    if (!config.simulate.present)
        throw config_error("'" + args.config_path + "': no simulate section");
    SimulationConfig sim;
    sim.model = config.model;
    sim.truth = parameters_from_names(config.model, config.simulate.truth);
    sim.year_start = config.simulate.year_start;
    sim.year_end = config.simulate.year_end;
    sim.entries_per_year = config.simulate.entries_per_year;
    sim.covariate_frequencies = config.simulate.covariate_frequencies;
    sim.seed = config.seed;
    sim.workers = config.workers;
    const SimulationResult result = simulate_population(sim);

    const std::string data_path = out_path(args, "data.jsonl");
    const std::string truth_path = out_path(args, "truth.jsonl");
    write_dataset(data_path, result.data);
    write_ground_truth(truth_path, result.data, result.truth);
    std::cout << "simulated " << result.data.records.size() << " individuals over "
              << result.data.year_start << "-" << result.data.year_end << "\n"
              << "wrote " << data_path << " and " << truth_path << "\n";
    return 0;
}

int cmd_fit(const Args& args) {
    const RunConfig config = load_config(args);
    const Dataset data = load_data(args, config);
    const PreparedData prep = prepare_data(data, config.model);
    FitOptions options = config.fit;
    options.workers = config.workers;
    const Parameters init = default_initialization(config.model, prep);
    const FitResult fit = fit_mle(prep, {}, config.model, init, options);

    const std::string fit_path = out_path(args, "fit.json");
    write_fit_result(fit_path, config.model, fit);
    std::cout << "fitted " << fit.estimate.size() << " parameters to "
              << data.records.size() << " records\n"
              << "log-likelihood " << fit.loglik << ", "
              << (fit.converged ? "converged" : "not converged") << " after "
              << fit.iterations << " iterations\n"
              << "wrote " << fit_path << "\n";
    return 0;
}

int cmd_blb(const Args& args) {
    const RunConfig config = load_config(args);
    const Dataset data = load_data(args, config);
    const PreparedData prep = prepare_data(data, config.model);
    const ModelSpec& model = config.model;

    std::vector<DerivedQuantity> derived;
    if (config.blb_population_series) {
        const std::vector<long> rtb = register_counts_for(config, data);
        DerivedQuantity population;
        population.name = "population";
        population.labels = year_labels(data);
        population.eval = [&model, &prep, &data, &config](const Parameters& params,
                                                          const FitResult&) {
            const ParamTables tables = build_tables(model, params, prep);
            const auto decoded = decode_all(model, prep, tables, 1);
            const PopulationSeries series =
                population_series(model, decoded, data.year_start, data.year_end, config.rule);
            return std::vector<double>(series.present.begin(), series.present.end());
        };
        derived.push_back(std::move(population));

        DerivedQuantity oc;
        oc.name = "overcoverage";
        oc.labels = year_labels(data);
        oc.eval = [&model, &prep, &data, &config, rtb](const Parameters& params,
                                                       const FitResult&) {
            const ParamTables tables = build_tables(model, params, prep);
            const auto decoded = decode_all(model, prep, tables, 1);
            PopulationSeries series =
                population_series(model, decoded, data.year_start, data.year_end, config.rule);
            attach_overcoverage(series, rtb);
            return series.overcoverage_pct;
        };
        derived.push_back(std::move(oc));
    }
    const bool track_assignments = config.blb_group_assignments && model.groups() > 1;
    if (track_assignments) {
        DerivedQuantity assignments;
        assignments.name = "group_assignments";
        for (const auto& rec : data.records) assignments.labels.push_back(rec.id);
        assignments.eval = [&model, &prep](const Parameters& params, const FitResult&) {
            const ParamTables tables = build_tables(model, params, prep);
            const auto decoded = decode_all(model, prep, tables, 1);
            std::vector<double> groups;
            groups.reserve(decoded.size());
            for (const auto& tr : decoded) groups.push_back(tr.group);
            return groups;
        };
        derived.push_back(std::move(assignments));
    }

    BlbOptions options;
    options.fit = config.fit;
    options.workers = config.workers;
    options.results_path = out_path(args, "blb_cells.jsonl");
    options.resume = args.resume;
    BlbResult result = run_blb(config.blb, data, model, options, derived);

    std::unique_ptr<AssignmentStability> stability;
    if (track_assignments) {
        const std::size_t qi = derived.size() - 1;
        std::vector<std::vector<int>> rows;
        for (const auto& cell : result.cells) {
            if (!cell.ok) continue;
            rows.emplace_back(cell.derived[qi].begin(), cell.derived[qi].end());
        }
        stability = std::make_unique<AssignmentStability>(
            assignment_stability(rows, kStabilityThreshold));
        std::erase_if(result.aggregated, [](const AggregatedQuantity& q) {
            return q.name == "group_assignments";
        });
    }

    const std::string agg_path = out_path(args, "blb_aggregate.json");
    write_blb_aggregate(agg_path, result, stability.get(), kStabilityThreshold);
    std::cout << "bootstrap finished: " << result.cells.size() << " cells, "
              << result.failed << " failed\n";
    if (stability)
        std::cout << "stable group assignments: " << stability->consistent_share * 100
                  << "% of individuals\n";
    std::cout << "wrote " << options.results_path << " and " << agg_path << "\n";
    return 0;
}

int cmd_decode(const Args& args) {
    const RunConfig config = load_config(args);
    const Dataset data = load_data(args, config);
    const PreparedData prep = prepare_data(data, config.model);

    const std::string fit_path = out_path(args, "fit.json");
    if (!fs::exists(fit_path))
        throw data_error("no fit result at '" + fit_path + "'; run the fit command first");
    const FitResult fit = read_fit_result(fit_path);
    const Parameters params = parameters_from_fit(config.model, fit);

    const ParamTables tables = build_tables(config.model, params, prep);
    const auto decoded = decode_all(config.model, prep, tables, config.workers);
    write_trajectories(out_path(args, "trajectories.jsonl"), data, decoded);

    PopulationSeries series =
        population_series(config.model, decoded, data.year_start, data.year_end, config.rule);
    attach_overcoverage(series, register_counts_for(config, data));
    const std::string pop_path = out_path(args, "population.json");
    write_population_series(pop_path, series);

    std::cout << "decoded " << decoded.size() << " records\n";
    for (int t = 0; t < series.years(); ++t)
        std::cout << series.year_start + t << ": present "
                  << series.present[static_cast<std::size_t>(t)] << ", overcoverage "
                  << series.overcoverage_pct[static_cast<std::size_t>(t)] << "%\n";
    if (config.model.fp.enabled) {
        const auto report = uncertain_sightings_report(config.model, prep, decoded, config.rule);
        write_uncertain_sightings(out_path(args, "uncertain_sightings.csv"), report);
    }
    std::cout << "wrote " << pop_path << "\n";
    return 0;
}

int cmd_report(const Args& args) {
    const std::string agg_path = out_path(args, "blb_aggregate.json");
    if (!fs::exists(agg_path))
        throw data_error("no bootstrap aggregate at '" + agg_path +
                         "'; run the blb command first");
    const BlbAggregate aggregate = read_blb_aggregate(agg_path);

    const AggregatedQuantity* params = find_quantity(aggregate, "parameters");
    if (!params) throw data_error("'" + agg_path + "' holds no parameter aggregate");
    write_interval_csv(out_path(args, "report_parameters.csv"), "Parameter", *params, true);
    std::cout << "wrote report_parameters.csv (" << params->labels.size() << " parameters)\n";

    if (const auto* mixing = find_quantity(aggregate, "mixing_proportions")) {
        write_interval_csv(out_path(args, "report_mixing.csv"), "Group", *mixing, true);
        std::cout << "wrote report_mixing.csv\n";
    }
    if (const auto* population = find_quantity(aggregate, "population")) {
        write_interval_csv(out_path(args, "report_population.csv"), "Year", *population, false);
        write_plot_data(out_path(args, "report_population_plot.json"), *population);
        std::cout << "wrote report_population.csv and report_population_plot.json\n";
    }
    if (const auto* oc = find_quantity(aggregate, "overcoverage")) {
        write_interval_csv(out_path(args, "report_overcoverage.csv"), "Year", *oc, false);
        std::cout << "wrote report_overcoverage.csv\n";
    }
    std::cout << "bootstrap cells failed: " << aggregate.failed << "\n";
    if (aggregate.has_stability)
        std::cout << "stable group assignments: " << aggregate.consistent_share * 100
                  << "% of individuals\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Population size and dynamics from administrative register data"};
    app.require_subcommand(1);
    Args args;

    const auto add_common = [&](CLI::App* cmd, bool with_data) {
        cmd->add_option("-c,--config", args.config_path, "run configuration (JSON)")
            ->required();
        if (with_data)
            cmd->add_option("-d,--data", args.data_path, "dataset (.jsonl or .csv)")
                ->required();
        cmd->add_option("-o,--out", args.out_dir, "output directory")->required();
        cmd->add_option("-w,--workers", args.workers, "worker threads (0 = all cores)");
        cmd->add_option("-s,--seed", args.seed, "override the config's seed");
    };

    auto* sim = app.add_subcommand("simulate", "Draw a synthetic register population");
    add_common(sim, false);
    auto* fit = app.add_subcommand("fit", "Maximum likelihood fit");
    add_common(fit, true);
    auto* blb = app.add_subcommand("blb", "Bag of little bootstraps uncertainty");
    add_common(blb, true);
    blb->add_flag("--resume", args.resume, "reuse completed cells from a previous run");
    auto* decode = app.add_subcommand("decode", "Most probable trajectories and population series");
    add_common(decode, true);
    auto* report = app.add_subcommand("report", "Tables and plot data from bootstrap results");
    report->add_option("-o,--out", args.out_dir, "output directory holding blb results")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(args);
        if (fit->parsed()) return cmd_fit(args);
        if (blb->parsed()) return cmd_blb(args);
        if (decode->parsed()) return cmd_decode(args);
        if (report->parsed()) return cmd_report(args);
    } catch (const crhmm::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const crhmm::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const crhmm::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
