#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crhmm/blb.hpp"
#include "crhmm/data.hpp"
#include "crhmm/decoder.hpp"
#include "crhmm/estimator.hpp"
#include "crhmm/model.hpp"
#include "crhmm/simulator.hpp"

namespace crhmm {

/// Simulation settings from the "simulate" config section; present only
/// when that section exists.
struct SimulateSection {
    bool present = false;
    int year_start = 0;
    int year_end = 0;
    std::vector<int> entries_per_year;
    std::vector<std::vector<double>> covariate_frequencies; // aligned to scheme dims
    std::map<std::string, double> truth; // flat parameter name -> value
};

/// Everything a pipeline run needs, parsed from one JSON config file. All
/// randomness flows from `seed`; `workers` = 0 defers to the environment.
struct RunConfig {
    std::uint64_t seed = 1;
    int workers = 0;
    ModelSpec model;
    FitOptions fit;
    BlbPlan blb;
    bool blb_population_series = false; // decode a population series per resample
    bool blb_group_assignments = false; // record hard group labels per resample
    SimulateSection simulate;
    CountingRule rule;                 // decode counting rule
    std::vector<long> register_counts; // optional per-year register sizes; when
                                       // empty they are derived from the data's
                                       // recorded events
};

/// Parses and validates a config file. Throws config_error with the file
/// name and the offending key on any structural problem.
RunConfig load_run_config(const std::string& path);

/// Builds structured parameters from a flat name -> value map over the
/// model's parameter names, all other entries zero. Unknown names throw
/// config_error.
Parameters parameters_from_names(const ModelSpec& model,
                                 const std::map<std::string, double>& named);

/// Individual records as one JSON document per line behind a header line
/// carrying the schema version, the study window and K. Reading validates
/// every record (consecutive observation years from the entry year to the
/// window end, valid category codes, entry year inside the window) and
/// throws data_error listing the first 20 offending record ids.
void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset_jsonl(const std::string& path);

/// Long-format CSV with an `id,year,category` header. The study window is
/// the observed year range; each individual's entry year is its first row.
/// Category codes are validated against `K` registers; the same record
/// validation applies as for the JSON form.
Dataset read_dataset_csv(const std::string& path, int K);

/// Dispatches on the file extension (".csv" or anything else = JSON lines).
/// A JSON file whose header disagrees with `K` throws config_error.
Dataset read_dataset(const std::string& path, int K);

/// True latent paths parallel to a dataset, as a header plus one JSON line
/// per individual. Reading checks the file aligns with the dataset.
void write_ground_truth(const std::string& path, const Dataset& data, const GroundTruth& truth);
GroundTruth read_ground_truth(const std::string& path, const Dataset& data);

void write_fit_result(const std::string& path, const ModelSpec& model, const FitResult& fit);
FitResult read_fit_result(const std::string& path);

/// Matches a stored fit to this model by parameter name, so column order in
/// the file does not matter. Missing names throw config_error.
Parameters parameters_from_fit(const ModelSpec& model, const FitResult& fit);

/// Cross-subset aggregate of a bootstrap run, with optional group
/// assignment stability.
struct BlbAggregate {
    BlbPlan plan;
    int failed = 0;
    std::vector<AggregatedQuantity> quantities;
    bool has_stability = false;
    double stability_threshold = 0.0;
    double consistent_share = 0.0;
};

void write_blb_aggregate(const std::string& path, const BlbResult& result,
                         const AssignmentStability* stability, double stability_threshold);
BlbAggregate read_blb_aggregate(const std::string& path);

const AggregatedQuantity* find_quantity(const BlbAggregate& aggregate, const std::string& name);

void write_trajectories(const std::string& path, const Dataset& data,
                        const std::vector<DecodedTrajectory>& trajectories);
void write_population_series(const std::string& path, const PopulationSeries& series);
void write_uncertain_sightings(const std::string& path, const UncertainSightingsReport& report);

/// One row per component: the label column, the point estimate, optionally
/// the standard error, and the 95% interval endpoints.
void write_interval_csv(const std::string& path, const std::string& label_header,
                        const AggregatedQuantity& quantity, bool include_se);

/// The same content as arrays, convenient for plotting tools.
void write_plot_data(const std::string& path, const AggregatedQuantity& quantity);

} // namespace crhmm
