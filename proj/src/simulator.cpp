#include "crhmm/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>

#include "crhmm/parallel.hpp"
#include "crhmm/rng.hpp"

namespace crhmm {

namespace {

// Random stream tag for per-individual draws; other modules use distinct
// tags so their streams never collide with the simulator's.
constexpr std::uint64_t kIndividualStream = 0xA1;

// Age range [lo, hi) covered by one band of an age dimension; open-ended
// bands get a 15-year window so a concrete entry age can be drawn.
std::pair<int, int> band_window(const CovariateDimension& dim, int band) {
    const auto& breaks = dim.breaks;
    int lo, hi;
    if (band == 0) {
        hi = breaks.front();
        lo = std::max(0, hi - 15);
    } else if (band == static_cast<int>(breaks.size())) {
        lo = breaks.back();
        hi = lo + 15;
    } else {
        lo = breaks[band - 1];
        hi = breaks[band];
    }
    if (hi <= lo) hi = lo + 1;
    return {lo, hi};
}

bool block_shape_ok(const CoefficientBlock& block, const CovariateScheme& scheme) {
    if (block.effects.size() > static_cast<std::size_t>(scheme.dim_count())) return false;
    for (std::size_t d = 0; d < block.effects.size(); ++d)
        if (block.effects[d].size() != scheme.dims()[d].categories.size()) return false;
    return true;
}

std::string padded_id(std::size_t index, int width) {
    std::string digits = std::to_string(index);
    return "i" + std::string(width > static_cast<int>(digits.size())
                                 ? width - static_cast<int>(digits.size())
                                 : 0,
                             '0') +
           digits;
}

} // namespace

void SimulationConfig::validate() const {
    model.validate();
    if (year_end < year_start) throw config_error("simulation window is empty");
    if (static_cast<int>(entries_per_year.size()) != years())
        throw config_error("expected " + std::to_string(years()) +
                           " entry counts, got " + std::to_string(entries_per_year.size()));
    long total = 0;
    for (int n : entries_per_year) {
        if (n < 0) throw config_error("entry counts must be nonnegative");
        total += n;
    }
    if (total == 0) throw config_error("the simulation needs at least one entrant");

    const auto& scheme = model.scheme;
    if (static_cast<int>(covariate_frequencies.size()) != scheme.dim_count())
        throw config_error("expected one frequency vector per covariate dimension");
    for (int d = 0; d < scheme.dim_count(); ++d) {
        const auto& dim = scheme.dims()[d];
        const auto& freq = covariate_frequencies[d];
        if (dim.source == CovariateDimension::Source::tis_band) {
            if (!freq.empty())
                throw config_error("dimension '" + dim.name +
                                   "' is derived from the entry year; leave its "
                                   "frequencies empty");
            continue;
        }
        if (freq.size() != dim.categories.size())
            throw config_error("dimension '" + dim.name + "' needs " +
                               std::to_string(dim.categories.size()) + " frequencies");
        double sum = 0.0;
        for (double f : freq) {
            if (!(f >= 0.0) || !std::isfinite(f))
                throw config_error("dimension '" + dim.name +
                                   "' has a negative or non-finite frequency");
            sum += f;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw config_error("frequencies for dimension '" + dim.name +
                               "' must sum to 1");
    }

    const int G = model.groups();
    const int K = model.design.K();
    bool shapes = static_cast<int>(truth.emission.main.size()) == G &&
                  static_cast<int>(truth.emission.reg_cov.size()) == K &&
                  static_cast<int>(truth.mixing_logits.size()) == G - 1 &&
                  block_shape_ok(truth.life.survival, scheme) &&
                  block_shape_ok(truth.life.emigration, scheme) &&
                  block_shape_ok(truth.life.return_home, scheme) &&
                  block_shape_ok(truth.life.recorded_share, scheme) &&
                  block_shape_ok(truth.fp_q, scheme);
    for (const auto& mains : truth.emission.main)
        shapes = shapes && static_cast<int>(mains.size()) == K;
    for (const auto& per_reg : truth.emission.reg_cov) {
        shapes = shapes && static_cast<int>(per_reg.size()) == scheme.dim_count();
        for (int d = 0; d < static_cast<int>(per_reg.size()); ++d)
            shapes = shapes && per_reg[d].size() == scheme.dims()[d].categories.size();
    }
    if (!shapes)
        throw config_error("true parameter shapes do not match the model structure");
}

SimulationResult simulate_population(const SimulationConfig& config) {
    config.validate();
    const ModelSpec& model = config.model;
    const auto& scheme = model.scheme;
    const int S = model.states.size();
    const int K = model.design.K();
    const int P = scheme.profile_count();
    const int G = model.groups();
    const int years = config.years();
    const int present = model.states.index_of_role(StateRole::present);

    std::vector<int> entry_index;
    for (int t = 0; t < years; ++t)
        entry_index.insert(entry_index.end(), config.entries_per_year[t], t);
    const std::size_t n = entry_index.size();
    const int id_width = static_cast<int>(std::to_string(n > 0 ? n - 1 : 0).size());

    // Everything derivable from the true parameters is tabulated once: the
    // per-profile transition matrices and, per group, profile and state, the
    // distribution over observation categories.
    const FalsePositiveSpec fp{model.fp.enabled, model.fp.pattern, config.truth.fp_q};
    const auto categories = enumerate_categories(K);
    const int C = static_cast<int>(categories.size());
    std::vector<std::uint32_t> codes(C);
    for (int c = 0; c < C; ++c) codes[c] = encode_category(categories[c], K);

    std::vector<TransitionMatrix> gamma(P);
    std::vector<std::vector<double>> cat_dist(static_cast<std::size_t>(G) * P * S);
    {
        std::vector<double> patterns;
        std::vector<double> evec(S);
        for (int p = 0; p < P; ++p)
            gamma[p] = build_transition_matrix(model.states, config.truth.life, scheme, p);
        for (int g = 0; g < G; ++g)
            for (int p = 0; p < P; ++p) {
                pattern_probabilities(model.design, config.truth.emission, scheme, g, p,
                                      patterns);
                const double q = false_positive_probability(fp, scheme, p);
                const std::size_t base = (static_cast<std::size_t>(g) * P + p) * S;
                for (int s = 0; s < S; ++s) cat_dist[base + s].assign(C, 0.0);
                for (int c = 0; c < C; ++c) {
                    emission_vector(model.states, model.events, fp, patterns, q,
                                    categories[c], evec.data());
                    for (int s = 0; s < S; ++s) cat_dist[base + s][c] = evec[s];
                }
            }
    }
    const std::vector<double> pi = config.truth.mixing_proportions();

    SimulationResult result;
    result.data.year_start = config.year_start;
    result.data.year_end = config.year_end;
    result.data.K = K;
    result.data.records.resize(n);
    result.truth.individuals.resize(n);

    std::mutex error_lock;
    std::size_t error_index = std::numeric_limits<std::size_t>::max();
    std::exception_ptr error;

    parallel_for(n, config.workers, [&](std::size_t i) {
        try {
            std::mt19937_64 eng(derive_seed(config.seed, kIndividualStream, i));
            const int t0 = entry_index[i];
            const int entry_year = config.year_start + t0;
            const int nyears = years - t0;

            IndividualRecord rec;
            rec.id = padded_id(i, id_width);
            rec.entry_year = entry_year;

            std::vector<int> fixed_cat(scheme.dim_count(), -1);
            int birth_year = 0;
            for (int d = 0; d < scheme.dim_count(); ++d) {
                const auto& dim = scheme.dims()[d];
                switch (dim.source) {
                    case CovariateDimension::Source::record: {
                        const int c = categorical(eng, config.covariate_frequencies[d]);
                        fixed_cat[d] = c;
                        rec.covariates[dim.name] = dim.categories[c];
                        break;
                    }
                    case CovariateDimension::Source::age_band: {
                        const int band = categorical(eng, config.covariate_frequencies[d]);
                        const auto [lo, hi] = band_window(dim, band);
                        const int age =
                            lo + static_cast<int>(uniform_below(
                                     eng, static_cast<std::uint64_t>(hi - lo)));
                        birth_year = entry_year - age;
                        rec.attributes["birth_year"] = birth_year;
                        break;
                    }
                    case CovariateDimension::Source::tis_band:
                        break;
                }
            }

            const int group = G > 1 ? categorical(eng, pi) : 0;

            auto& truth = result.truth.individuals[i];
            truth.group = group;
            truth.state_ids.resize(nyears);
            rec.observations.resize(nyears);

            std::vector<int> cats(scheme.dim_count());
            int state = present;
            for (int y = 0; y < nyears; ++y) {
                const int year = entry_year + y;
                for (int d = 0; d < scheme.dim_count(); ++d) {
                    const auto& dim = scheme.dims()[d];
                    switch (dim.source) {
                        case CovariateDimension::Source::record:
                            cats[d] = fixed_cat[d];
                            break;
                        case CovariateDimension::Source::tis_band:
                            cats[d] = scheme.band_for_value(d, year - entry_year);
                            break;
                        case CovariateDimension::Source::age_band:
                            cats[d] = scheme.band_for_value(d, year - birth_year);
                            break;
                    }
                }
                const int profile = scheme.dim_count() ? scheme.profile_id(cats) : 0;

                truth.state_ids[y] = model.states.states[state].id;
                const auto& dist =
                    cat_dist[(static_cast<std::size_t>(group) * P + profile) * S + state];
                rec.observations[y] =
                    codes[static_cast<std::size_t>(categorical(eng, dist))];

                if (y + 1 < nyears) {
                    const double* row =
                        gamma[profile].a.data() + static_cast<std::size_t>(state) * S;
                    state = categorical(eng, row, S);
                }
            }
            result.data.records[i] = std::move(rec);
        } catch (...) {
            std::lock_guard<std::mutex> hold(error_lock);
            if (i < error_index) {
                error_index = i;
                error = std::current_exception();
            }
        }
    });
    if (error) std::rethrow_exception(error);
    return result;
}

PopulationSeries truth_population_series(const ModelSpec& model, const Dataset& data,
                                         const GroundTruth& truth, const CountingRule& rule) {
    if (truth.individuals.size() != data.records.size())
        throw config_error("ground truth does not match the dataset record count");
    std::vector<DecodedTrajectory> trajectories(truth.individuals.size());
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        trajectories[i].record = i;
        trajectories[i].entry_year = data.records[i].entry_year;
        trajectories[i].group = truth.individuals[i].group;
        trajectories[i].state_ids = truth.individuals[i].state_ids;
    }
    return population_series(model, trajectories, data.year_start, data.year_end, rule);
}

} // namespace crhmm
