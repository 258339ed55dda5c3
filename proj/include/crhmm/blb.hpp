#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "crhmm/data.hpp"
#include "crhmm/estimator.hpp"
#include "crhmm/model.hpp"

namespace crhmm {

/// How the subsets of a bag-of-little-bootstraps run are formed.
enum class SubsetMode { disjoint_partition, without_replacement };

std::string to_string(SubsetMode mode);
SubsetMode subset_mode_from_string(const std::string& text);

/// Shape of a bag-of-little-bootstraps run: s subsets of roughly b of the n
/// individuals, each refit on r weighted resamples of full size n.
struct BlbPlan {
    std::size_t n = 0;   // population size; 0 means "take it from the data"
    int s = 1;           // subset count
    std::size_t b = 0;   // subset size; 0 derives it (see resolved_b)
    int r = 1;           // resamples per subset
    double gamma = 0.0;  // when positive, b = ceil(n^gamma), gamma in [0.5, 1]
    SubsetMode mode = SubsetMode::disjoint_partition;
    std::uint64_t seed = 1;

    /// The subset size implied by the plan for a population of size n: the
    /// explicit b if set, else ceil(n^gamma) if gamma is set, else the
    /// partition block size ceil(n/s). Requires a resolvable plan.
    std::size_t resolved_b(std::size_t population) const;

    /// Throws config_error when the plan cannot be run on a population of
    /// this size (zero counts, gamma outside [0.5, 1], both b and gamma
    /// given, s*b > n in partition mode, b > n, or a population mismatch
    /// with an explicit n).
    void validate(std::size_t population) const;
};

/// The s subset index lists. In disjoint-partition mode a seeded uniform
/// shuffle of all n indices is split into s blocks of size floor(n/s) or
/// ceil(n/s), covering every index exactly once; an explicit b only bounds
/// the block size. In without-replacement mode each subset is an
/// independent seeded draw of b distinct indices. Subsets are sorted
/// ascending and are identical across runs with the same seed.
std::vector<std::vector<std::size_t>> make_subsets(const BlbPlan& plan, std::size_t n);

/// One resample: a draw from Multinomial(n; uniform over b cells), so the
/// weights are non-negative and sum to n exactly. Deterministic in the seed.
std::vector<long> resample_weights(std::size_t b, std::size_t n, std::uint64_t seed);

/// A derived quantity evaluated on every successful resample fit, e.g. a
/// decoded annual population series. `eval` must return one value per label.
struct DerivedQuantity {
    std::string name;
    std::vector<std::string> labels;
    std::function<std::vector<double>(const Parameters&, const FitResult&)> eval;
};

/// One (subset, resample) fit. Failed cells keep the error text and carry
/// no estimates.
struct BlbCell {
    int subset = 0;
    int resample = 0;
    bool ok = false;
    std::string error;
    std::vector<double> estimate; // flat parameter vector
    double loglik = 0.0;
    bool converged = false;
    std::vector<double> mixing;   // mixing proportions (empty when G = 1)
    std::vector<std::vector<double>> derived; // one vector per derived quantity
};

/// Cross-subset summary of one quantity: for each component, the mean of
/// the per-subset means, the mean of the per-subset resample standard
/// deviations, and the mean of the per-subset 2.5 / 97.5 percentile
/// endpoints.
struct AggregatedQuantity {
    std::string name;
    std::vector<std::string> labels;
    std::vector<double> point;
    std::vector<double> se;
    std::vector<double> lower;
    std::vector<double> upper;
};

struct BlbResult {
    BlbPlan plan;
    std::vector<BlbCell> cells; // ordered by (subset, resample)
    std::vector<AggregatedQuantity> aggregated;
    int failed = 0;
};

struct BlbOptions {
    FitOptions fit;          // per-resample fits run with one worker each
    bool warm_start = true;  // initialize resample fits from the subset fit
    bool unit_weights = false; // debug mode: weight 1 per record, so r = 1
                               // reproduces the plain subset MLE
    int workers = 0;
    std::string results_path;  // stream cells to this file, one JSON per line
    bool resume = false;       // reuse cells already present in results_path
    double max_failure_share = 0.2; // per-subset abort threshold
};

/// Linear-interpolation percentile (pct in [0, 100]) of an ascending
/// sequence: the value at fractional rank pct/100 * (m-1).
double percentile(std::span<const double> sorted_values, double pct);

/// Aggregates finished cells: the parameter vector, the mixing proportions
/// when mixing labels are given, and each derived quantity. Per-subset
/// statistics use only ok cells; subsets without any are skipped. The
/// cross-subset averages sum contributions in sorted order, so the result
/// is exactly invariant under relabeling subsets.
std::vector<AggregatedQuantity> aggregate_cells(const std::vector<BlbCell>& cells,
                                                const std::vector<std::string>& parameter_names,
                                                const std::vector<std::string>& mixing_labels,
                                                const std::vector<DerivedQuantity>& derived);

/// Runs the full procedure: forms subsets, fits each subset once without
/// weights, refits r weighted resamples per subset (warm-started from the
/// subset fit unless disabled), evaluates the derived quantities on every
/// successful refit, and aggregates across subsets. Subset and resample
/// seeds derive from plan.seed by counters, so any cell is reproducible in
/// isolation. Cells stream to options.results_path as they finish; with
/// options.resume, cells already in that file are not recomputed. Throws
/// numeric_error when more than max_failure_share of a subset's resample
/// fits fail.
BlbResult run_blb(const BlbPlan& plan, const Dataset& data, const ModelSpec& model,
                  const BlbOptions& options,
                  const std::vector<DerivedQuantity>& derived = {});

} // namespace crhmm
