#pragma once

#include <span>
#include <string>
#include <vector>

#include "crhmm/likelihood.hpp"
#include "crhmm/model.hpp"

namespace crhmm {

/// Which latent roles count toward the annual population size. The default
/// counts the year of an in-population recorded death and the year of a
/// recorded re-registration as present, since those individuals spend part
/// of that year in the population.
struct CountingRule {
    std::vector<StateRole> present_roles{StateRole::present,
                                         StateRole::present_death_recorded,
                                         StateRole::returned_reregistered};

    bool counts_as_present(StateRole role) const;
};

/// One decoded individual: the most probable latent path given its
/// observations, and the hard mixture group assignment (argmax of the
/// posterior membership weights, lowest group index on ties).
struct DecodedTrajectory {
    std::size_t record = 0;
    int entry_year = 0;
    int group = 0;
    double log_probability = 0.0;
    std::vector<int> state_ids; // one per year from entry to the window end
};

/// Most probable state sequence via the log-space max-product recursion,
/// with the entry year pinned to the present state. Under a mixture the
/// emission probabilities are weighted by the record's posterior group
/// membership. Ties are broken toward the lowest state id at every
/// maximization, so the result is deterministic.
/// Throws data_error naming the record and year if no state is reachable.
DecodedTrajectory viterbi_path(const ModelSpec& model, const PreparedData& prep,
                               const ParamTables& tables, std::size_t record);

/// Decodes every record; parallel over records, deterministic for any
/// worker count.
std::vector<DecodedTrajectory> decode_all(const ModelSpec& model, const PreparedData& prep,
                                          const ParamTables& tables, int workers = 0);

/// Number of decoded individuals counted as present in `year` under the
/// counting rule. Years outside a trajectory contribute nothing.
long population_size(const ModelSpec& model,
                     std::span<const DecodedTrajectory> trajectories, int year,
                     const CountingRule& rule = {});

/// Per-year partition of everyone entered by that year into four buckets by
/// decoded state role. Roles not counted as present fall into their
/// administrative family: recorded-emigration and known-abroad years count
/// as abroad-known, silent-abroad years as abroad-unknown, and death roles
/// as dead. The buckets always sum to the number entered by the year.
struct PopulationSeries {
    int year_start = 0;
    std::vector<long> present;
    std::vector<long> abroad_known;
    std::vector<long> abroad_unknown;
    std::vector<long> dead;
    std::vector<double> overcoverage_pct; // empty until a register series is attached

    int years() const { return static_cast<int>(present.size()); }
};

PopulationSeries population_series(const ModelSpec& model,
                                   std::span<const DecodedTrajectory> trajectories,
                                   int year_start, int year_end,
                                   const CountingRule& rule = {});

/// Overcoverage percentage: (1 - estimate / register_count) * 100.
/// Throws std::domain_error unless register_count is positive.
double overcoverage(double population_estimate, double register_count);

/// Administrative register head count per year implied by the recorded
/// events in the data: an individual is on the register from the entry year
/// onward, leaves it in the year of a recorded emigration or death, and
/// rejoins it in the year of a recorded re-immigration.
std::vector<long> rtb_series(const Dataset& data);

/// Fills series.overcoverage_pct by comparing the present count of each
/// year against the register series, which must cover the same years.
void attach_overcoverage(PopulationSeries& series, std::span<const long> register_counts);

/// Per-profile person-year shares observed in the data; a natural weighting
/// for population-level register probabilities.
std::vector<double> profile_weights(const PreparedData& prep);

/// Probability that register k fires for one group and covariate profile,
/// summed over all patterns containing k.
double marginal_register_probability(const EmissionDesign& design,
                                     const EmissionCoefficients& coeffs,
                                     const CovariateScheme& scheme, int group, int profile,
                                     int register_index);

/// Weighted average of the per-profile marginals over all profiles.
/// Throws std::domain_error if the weights sum to zero.
double marginal_register_probability(const EmissionDesign& design,
                                     const EmissionCoefficients& coeffs,
                                     const CovariateScheme& scheme, int group,
                                     int register_index, std::span<const double> weights);

/// Register probability conditional on one covariate category: the ratio of
/// the weighted sums restricted to profiles whose category in `dim` is
/// `category`. Throws std::domain_error if no weight falls in the subset.
double conditional_register_probability(const EmissionDesign& design,
                                        const EmissionCoefficients& coeffs,
                                        const CovariateScheme& scheme, int group,
                                        int register_index, int dim, int category,
                                        std::span<const double> weights);

/// For person-years whose observation is exactly the false positive pattern,
/// the share decoded to a present-counting state, tabulated by covariate
/// category and by the length of the consecutive run of such years the
/// person-year sits in. Empty when the model has no false positive channel.
struct UncertainSightingsReport {
    struct Row {
        std::string key; // "dim=category" or a run length
        long person_years = 0;
        long decoded_present = 0;
        double present_share = 0.0;
    };
    std::vector<Row> by_category;
    std::vector<Row> by_run_length;
};

UncertainSightingsReport uncertain_sightings_report(
    const ModelSpec& model, const PreparedData& prep,
    std::span<const DecodedTrajectory> trajectories, const CountingRule& rule = {});

/// Stability of hard group assignments across repeated fits (e.g. bootstrap
/// resamples): per-individual modal agreement and the share of individuals
/// whose agreement reaches the threshold. `assignments` holds one vector of
/// group labels per fit, all of equal length.
struct AssignmentStability {
    std::vector<double> agreement;
    double consistent_share = 0.0;
};

AssignmentStability assignment_stability(const std::vector<std::vector<int>>& assignments,
                                         double threshold = 0.9);

} // namespace crhmm
