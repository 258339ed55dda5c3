#pragma once

#include <cstdint>
#include <vector>

#include "crhmm/data.hpp"
#include "crhmm/decoder.hpp"
#include "crhmm/model.hpp"

namespace crhmm {

/// Generative configuration: the model structure, the true parameter
/// values, per-year entry counts, and sampling frequencies for the
/// covariates that are drawn at entry.
struct SimulationConfig {
    ModelSpec model;
    Parameters truth;
    int year_start = 0;
    int year_end = 0;
    std::vector<int> entries_per_year; // one count per study year

    /// One vector per covariate dimension. Record dimensions take category
    /// frequencies. Age-band dimensions take frequencies of the band
    /// occupied at entry; the exact entry age is uniform within the band,
    /// with open-ended bands spanning a 15-year window. Time-in-system
    /// dimensions evolve deterministically from the entry year and take an
    /// empty vector.
    std::vector<std::vector<double>> covariate_frequencies;

    std::uint64_t seed = 1;
    int workers = 0;

    int years() const { return year_end - year_start + 1; }
    void validate() const;
};

/// True latent history per simulated individual, parallel to the dataset's
/// record order.
struct GroundTruth {
    struct Individual {
        int group = 0;
        std::vector<int> state_ids; // one per year from entry to the window end
    };
    std::vector<Individual> individuals;
};

struct SimulationResult {
    Dataset data;
    GroundTruth truth;
};

/// Draws a synthetic register population: covariates and mixture group at
/// entry, the present state in the entry year, then alternating category
/// draws and state transitions. Each individual runs on its own derived
/// random stream, so the result is identical for any worker count.
SimulationResult simulate_population(const SimulationConfig& config);

/// Per-year tallies of the true latent states, using the same counting rule
/// as the decoder so true and decoded series are directly comparable.
PopulationSeries truth_population_series(const ModelSpec& model, const Dataset& data,
                                         const GroundTruth& truth,
                                         const CountingRule& rule = {});

} // namespace crhmm
