#include "crhmm/decoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>

#include "crhmm/parallel.hpp"

namespace crhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// State indices in ascending id order, so every tie-break resolves toward
// the lowest state id regardless of the order states were declared in.
std::vector<int> id_order(const StateSpaceConfig& config) {
    std::vector<int> order(config.states.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return config.states[a].id < config.states[b].id;
    });
    return order;
}

std::map<int, StateRole> role_by_id(const StateSpaceConfig& config) {
    std::map<int, StateRole> roles;
    for (const auto& st : config.states) roles[st.id] = st.role;
    return roles;
}

enum class Bucket { present, abroad_known, abroad_unknown, dead };

Bucket bucket_for(StateRole role, const CountingRule& rule) {
    if (rule.counts_as_present(role)) return Bucket::present;
    switch (role) {
        case StateRole::abroad_unknown:
            return Bucket::abroad_unknown;
        case StateRole::present_death_recorded:
        case StateRole::abroad_death_recorded:
        case StateRole::dead:
            return Bucket::dead;
        default:
            return Bucket::abroad_known;
    }
}

} // namespace

bool CountingRule::counts_as_present(StateRole role) const {
    return std::find(present_roles.begin(), present_roles.end(), role) != present_roles.end();
}

DecodedTrajectory viterbi_path(const ModelSpec& model, const PreparedData& prep,
                               const ParamTables& tables, std::size_t record) {
    const int S = tables.S;
    const std::size_t off = prep.offset[record];
    const std::size_t nyears = prep.offset[record + 1] - off;
    const int entry_year = prep.year_start + prep.t0[record];
    const int G = prep.G;

    std::vector<double> omega =
        G > 1 ? posterior_group_weights(prep, tables, record) : std::vector<double>{1.0};

    const std::vector<int> order = id_order(model.states);

    auto mixed_emission = [&](std::size_t y, double* out) {
        const std::uint32_t cell = prep.cell[off + y];
        for (int s = 0; s < S; ++s) out[s] = 0.0;
        for (int g = 0; g < G; ++g) {
            const double* row = tables.emission_row(g, cell);
            for (int s = 0; s < S; ++s) out[s] += omega[g] * row[s];
        }
    };

    auto dead_end = [&](int year) {
        return data_error("record " + std::to_string(record) + ": decoding failed in year " +
                          std::to_string(year) +
                          ": no state is consistent with the observations");
    };

    std::vector<std::int8_t> back(nyears * S, -1);
    double v[8], vnext[8], e[8];

    // Entry conditioning: the path starts in the present state.
    mixed_emission(0, e);
    const int pr = tables.present_index;
    for (int s = 0; s < S; ++s) v[s] = kNegInf;
    if (!(e[pr] > 0.0)) throw dead_end(entry_year);
    v[pr] = std::log(e[pr]);

    for (std::size_t y = 1; y < nyears; ++y) {
        const TransitionMatrix& gt = tables.gamma_t[prep.profile[off + y - 1]];
        mixed_emission(y, e);
        bool any = false;
        for (int j = 0; j < S; ++j) {
            double best = kNegInf;
            int arg = -1;
            for (int s : order) {
                if (v[s] == kNegInf) continue;
                const double g = gt(j, s); // transition s -> j, stored transposed
                if (!(g > 0.0)) continue;
                const double cand = v[s] + std::log(g);
                if (cand > best) {
                    best = cand;
                    arg = s;
                }
            }
            if (arg >= 0 && e[j] > 0.0) {
                vnext[j] = best + std::log(e[j]);
                back[y * S + j] = static_cast<std::int8_t>(arg);
                any = true;
            } else {
                vnext[j] = kNegInf;
            }
        }
        if (!any) throw dead_end(entry_year + static_cast<int>(y));
        for (int s = 0; s < S; ++s) v[s] = vnext[s];
    }

    double best = kNegInf;
    int arg = -1;
    for (int s : order) {
        if (v[s] > best) {
            best = v[s];
            arg = s;
        }
    }

    DecodedTrajectory out;
    out.record = record;
    out.entry_year = entry_year;
    out.log_probability = best;
    out.state_ids.resize(nyears);
    for (std::size_t y = nyears; y-- > 0;) {
        out.state_ids[y] = model.states.states[arg].id;
        if (y > 0) arg = back[y * S + arg];
    }

    int assigned = 0;
    for (int g = 1; g < G; ++g)
        if (omega[g] > omega[assigned]) assigned = g;
    out.group = assigned;
    return out;
}

std::vector<DecodedTrajectory> decode_all(const ModelSpec& model, const PreparedData& prep,
                                          const ParamTables& tables, int workers) {
    std::vector<DecodedTrajectory> out(prep.size());
    // Keep the lowest-index failure so the reported error does not depend on
    // thread scheduling.
    std::mutex error_lock;
    std::size_t error_index = std::numeric_limits<std::size_t>::max();
    std::exception_ptr error;
    parallel_for(prep.size(), workers, [&](std::size_t i) {
        try {
            out[i] = viterbi_path(model, prep, tables, i);
        } catch (...) {
            std::lock_guard<std::mutex> hold(error_lock);
            if (i < error_index) {
                error_index = i;
                error = std::current_exception();
            }
        }
    });
    if (error) std::rethrow_exception(error);
    return out;
}

long population_size(const ModelSpec& model, std::span<const DecodedTrajectory> trajectories,
                     int year, const CountingRule& rule) {
    const auto roles = role_by_id(model.states);
    long count = 0;
    for (const auto& tr : trajectories) {
        const int y = year - tr.entry_year;
        if (y < 0 || y >= static_cast<int>(tr.state_ids.size())) continue;
        if (rule.counts_as_present(roles.at(tr.state_ids[y]))) ++count;
    }
    return count;
}

PopulationSeries population_series(const ModelSpec& model,
                                   std::span<const DecodedTrajectory> trajectories,
                                   int year_start, int year_end, const CountingRule& rule) {
    if (year_end < year_start) throw config_error("empty year range for the population series");
    const auto roles = role_by_id(model.states);
    const int years = year_end - year_start + 1;

    PopulationSeries series;
    series.year_start = year_start;
    series.present.assign(years, 0);
    series.abroad_known.assign(years, 0);
    series.abroad_unknown.assign(years, 0);
    series.dead.assign(years, 0);

    for (const auto& tr : trajectories) {
        for (std::size_t y = 0; y < tr.state_ids.size(); ++y) {
            const int i = tr.entry_year + static_cast<int>(y) - year_start;
            if (i < 0 || i >= years) continue;
            switch (bucket_for(roles.at(tr.state_ids[y]), rule)) {
                case Bucket::present: ++series.present[i]; break;
                case Bucket::abroad_known: ++series.abroad_known[i]; break;
                case Bucket::abroad_unknown: ++series.abroad_unknown[i]; break;
                case Bucket::dead: ++series.dead[i]; break;
            }
        }
    }
    return series;
}

double overcoverage(double population_estimate, double register_count) {
    if (!(register_count > 0.0))
        throw std::domain_error("register count must be positive to compute overcoverage");
    return (1.0 - population_estimate / register_count) * 100.0;
}

std::vector<long> rtb_series(const Dataset& data) {
    std::vector<long> counts(data.years(), 0);
    for (const auto& rec : data.records) {
        bool registered = true;
        for (std::size_t y = 0; y < rec.observations.size(); ++y) {
            switch (decode_category(rec.observations[y], data.K).flag) {
                case EventFlag::emigration:
                case EventFlag::death: registered = false; break;
                case EventFlag::reimmigration: registered = true; break;
                case EventFlag::none: break;
            }
            if (registered)
                ++counts[rec.entry_year - data.year_start + static_cast<int>(y)];
        }
    }
    return counts;
}

void attach_overcoverage(PopulationSeries& series, std::span<const long> register_counts) {
    if (static_cast<int>(register_counts.size()) != series.years())
        throw config_error("register series covers " +
                           std::to_string(register_counts.size()) +
                           " years but the population series has " +
                           std::to_string(series.years()));
    series.overcoverage_pct.resize(series.years());
    for (int i = 0; i < series.years(); ++i)
        series.overcoverage_pct[i] = overcoverage(static_cast<double>(series.present[i]),
                                                  static_cast<double>(register_counts[i]));
}

std::vector<double> profile_weights(const PreparedData& prep) {
    std::vector<double> weights(prep.P, 0.0);
    for (std::uint16_t p : prep.profile) weights[p] += 1.0;
    const double total = static_cast<double>(prep.person_years());
    if (total > 0.0)
        for (double& w : weights) w /= total;
    return weights;
}

double marginal_register_probability(const EmissionDesign& design,
                                     const EmissionCoefficients& coeffs,
                                     const CovariateScheme& scheme, int group, int profile,
                                     int register_index) {
    std::vector<double> probs;
    pattern_probabilities(design, coeffs, scheme, group, profile, probs);
    return marginal_register_probability(probs, register_index);
}

namespace {

// Weighted average of per-profile register marginals over the profiles
// selected by `keep`; the shared core of the overall and the conditional
// probability.
template <typename Keep>
double weighted_marginal(const EmissionDesign& design, const EmissionCoefficients& coeffs,
                         const CovariateScheme& scheme, int group, int register_index,
                         std::span<const double> weights, Keep&& keep) {
    if (static_cast<int>(weights.size()) != scheme.profile_count())
        throw config_error("profile weight vector does not match the covariate scheme");
    double num = 0.0, den = 0.0;
    std::vector<double> probs;
    for (int p = 0; p < scheme.profile_count(); ++p) {
        if (!keep(p)) continue;
        const double w = weights[p];
        if (w < 0.0) throw config_error("profile weights must be nonnegative");
        if (w == 0.0) continue;
        pattern_probabilities(design, coeffs, scheme, group, p, probs);
        num += w * marginal_register_probability(probs, register_index);
        den += w;
    }
    if (!(den > 0.0))
        throw std::domain_error("no profile weight falls in the conditioning subset");
    return num / den;
}

} // namespace

double marginal_register_probability(const EmissionDesign& design,
                                     const EmissionCoefficients& coeffs,
                                     const CovariateScheme& scheme, int group,
                                     int register_index, std::span<const double> weights) {
    return weighted_marginal(design, coeffs, scheme, group, register_index, weights,
                             [](int) { return true; });
}

double conditional_register_probability(const EmissionDesign& design,
                                        const EmissionCoefficients& coeffs,
                                        const CovariateScheme& scheme, int group,
                                        int register_index, int dim, int category,
                                        std::span<const double> weights) {
    if (dim < 0 || dim >= scheme.dim_count())
        throw config_error("conditioning dimension index out of range");
    const int ncat = static_cast<int>(scheme.dims()[dim].categories.size());
    if (category < 0 || category >= ncat)
        throw config_error("conditioning category index out of range");
    return weighted_marginal(design, coeffs, scheme, group, register_index, weights,
                             [&](int p) { return scheme.category_of(p, dim) == category; });
}

UncertainSightingsReport uncertain_sightings_report(
    const ModelSpec& model, const PreparedData& prep,
    std::span<const DecodedTrajectory> trajectories, const CountingRule& rule) {
    UncertainSightingsReport report;
    if (!model.fp.enabled) return report;

    const std::uint32_t fp_code =
        encode_category({model.fp.pattern, EventFlag::none}, prep.K);
    const auto roles = role_by_id(model.states);
    const auto& scheme = model.scheme;

    // tally[0] = decoded present, tally[1] = decoded absent
    std::vector<std::vector<std::array<long, 2>>> by_category(scheme.dim_count());
    for (int d = 0; d < scheme.dim_count(); ++d)
        by_category[d].assign(scheme.dims()[d].categories.size(), {0, 0});
    std::map<int, std::array<long, 2>> by_run;

    for (const auto& tr : trajectories) {
        const std::size_t off = prep.offset[tr.record];
        const std::size_t ny = prep.offset[tr.record + 1] - off;
        for (std::size_t y = 0; y < ny; ++y) {
            if (prep.code[off + y] != fp_code) continue;
            const bool present = rule.counts_as_present(roles.at(tr.state_ids[y]));
            const int slot = present ? 0 : 1;

            std::size_t lo = y, hi = y;
            while (lo > 0 && prep.code[off + lo - 1] == fp_code) --lo;
            while (hi + 1 < ny && prep.code[off + hi + 1] == fp_code) ++hi;
            ++by_run[static_cast<int>(hi - lo + 1)][slot];

            const int profile = prep.profile[off + y];
            for (int d = 0; d < scheme.dim_count(); ++d)
                ++by_category[d][scheme.category_of(profile, d)][slot];
        }
    }

    auto emit = [](std::vector<UncertainSightingsReport::Row>& rows, std::string key,
                   const std::array<long, 2>& tally) {
        const long total = tally[0] + tally[1];
        if (total == 0) return;
        rows.push_back({std::move(key), total, tally[0],
                        static_cast<double>(tally[0]) / static_cast<double>(total)});
    };

    for (int d = 0; d < scheme.dim_count(); ++d)
        for (std::size_t c = 0; c < scheme.dims()[d].categories.size(); ++c)
            emit(report.by_category, scheme.dims()[d].name + "=" + scheme.dims()[d].categories[c],
                 by_category[d][c]);
    for (const auto& [run, tally] : by_run)
        emit(report.by_run_length, std::to_string(run), tally);
    return report;
}

AssignmentStability assignment_stability(const std::vector<std::vector<int>>& assignments,
                                         double threshold) {
    if (assignments.empty())
        throw config_error("assignment stability needs at least one set of assignments");
    const std::size_t n = assignments[0].size();
    for (const auto& a : assignments)
        if (a.size() != n)
            throw config_error("assignment vectors must all have the same length");

    AssignmentStability out;
    out.agreement.resize(n, 0.0);
    if (n == 0) return out;

    const double fits = static_cast<double>(assignments.size());
    long consistent = 0;
    std::map<int, long> counts;
    for (std::size_t i = 0; i < n; ++i) {
        counts.clear();
        for (const auto& a : assignments) ++counts[a[i]];
        long best = 0;
        for (const auto& [group, c] : counts) best = std::max(best, c);
        out.agreement[i] = static_cast<double>(best) / fits;
        if (out.agreement[i] >= threshold) ++consistent;
    }
    out.consistent_share = static_cast<double>(consistent) / static_cast<double>(n);
    return out;
}

} // namespace crhmm
