#pragma once

// Shared fixtures and independent oracles for the test suites: random model
// instances, a generative record sampler, and brute-force path enumeration
// used to cross-check the forward recursion.

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crhmm/likelihood.hpp"
#include "crhmm/model.hpp"
#include "crhmm/rng.hpp"

namespace crhmm::testing {

inline StateRole role_of_id(const StateSpaceConfig& config, int id) {
    for (const auto& st : config.states)
        if (st.id == id) return st.role;
    throw std::out_of_range("no state with id " + std::to_string(id));
}

struct InstanceOptions {
    StateSpaceKind kind = StateSpaceKind::sweden8;
    int K = 2;
    int groups = 1;
    bool fp = true;
    bool covariates = true;
    bool random_events = false; // otherwise the register defaults 1/1/1/0
    double coef_scale = 1.5;
};

struct Instance {
    ModelSpec model;
    Parameters params;
};

/// Builds a model with randomized coefficients. Life event probabilities are
/// kept in a moderate range so generative draws rarely produce histories the
/// model assigns tiny mass to, which keeps scaled-vs-enumerated comparisons
/// well conditioned.
inline Instance random_instance(std::mt19937_64& eng, const InstanceOptions& opt) {
    Instance inst;
    inst.model.states = opt.kind == StateSpaceKind::sweden8 ? StateSpaceConfig::sweden8()
                                                            : StateSpaceConfig::general3();
    if (opt.covariates)
        inst.model.scheme = CovariateScheme({CovariateDimension{"sex", {"m", "f"}, 0}});

    auto& design = inst.model.design;
    for (int k = 0; k < opt.K; ++k) design.registers.push_back("reg" + std::to_string(k));
    design.groups = opt.groups;
    if (opt.groups > 1) {
        design.group_specific.assign(static_cast<std::size_t>(opt.K), 0);
        design.group_specific[0] = 1;
    }

    if (opt.fp) {
        inst.model.fp.enabled = true;
        inst.model.fp.pattern = 1u << (opt.K - 1);
    }
    if (opt.covariates) {
        inst.model.effects.survival_dims = {0};
        inst.model.effects.emigration_dims = {0};
        inst.model.effects.return_dims = {0};
        if (opt.fp) inst.model.effects.false_positive_dims = {0};
    }
    if (opt.random_events) {
        inst.model.events.psi_emigration = 0.2 + 0.8 * uniform01(eng);
        inst.model.events.psi_reimmigration = 0.2 + 0.8 * uniform01(eng);
        inst.model.events.phi_present_death = 0.2 + 0.8 * uniform01(eng);
        inst.model.events.phi_abroad_death = 0.8 * uniform01(eng);
    }
    inst.model.validate();

    auto draw = [&](double scale) { return scale * 2.0 * (uniform01(eng) - 0.5); };
    Parameters p = Parameters::zeros(inst.model);
    p.life.survival.intercept = logit(0.75 + 0.24 * uniform01(eng));
    p.life.emigration.intercept = logit(0.05 + 0.4 * uniform01(eng));
    p.life.return_home.intercept = logit(0.05 + 0.5 * uniform01(eng));
    p.life.recorded_share.intercept = draw(1.0);
    for (int d = 0; d < inst.model.scheme.dim_count(); ++d) {
        p.life.survival.effects[d][1] = draw(0.5);
        p.life.emigration.effects[d][1] = draw(0.5);
        p.life.return_home.effects[d][1] = draw(0.5);
    }
    for (int g = 0; g < design.groups; ++g)
        for (int k = 0; k < opt.K; ++k) p.emission.main[g][k] = draw(opt.coef_scale);
    // Registers without a group-specific main must agree across groups.
    for (int k = 0; k < opt.K; ++k) {
        const bool specific = design.groups > 1 && design.group_specific[k];
        if (!specific)
            for (int g = 1; g < design.groups; ++g) p.emission.main[g][k] = p.emission.main[0][k];
    }
    for (int k = 0; k < opt.K; ++k) {
        for (int d = 0; d < inst.model.scheme.dim_count(); ++d)
            p.emission.reg_cov[k][d][1] = draw(0.8);
        for (int l = k + 1; l < opt.K; ++l) p.emission.reg_reg[k][l] = draw(0.8);
    }
    if (opt.fp) {
        p.fp_q.intercept = logit(0.05 + 0.4 * uniform01(eng));
        for (int d = 0; d < inst.model.scheme.dim_count(); ++d)
            p.fp_q.effects[d][1] = draw(0.4);
    }
    for (auto& l : p.mixing_logits) l = draw(1.0);
    inst.params = p;
    return inst;
}

/// Resolves the covariate profile of one record in one calendar year,
/// mirroring the rules prepare_data applies.
inline int profile_in_year(const ModelSpec& model, const IndividualRecord& rec, int year) {
    const int D = model.scheme.dim_count();
    if (D == 0) return 0;
    std::vector<int> cats(static_cast<std::size_t>(D));
    for (int d = 0; d < D; ++d) {
        const auto& dim = model.scheme.dims()[static_cast<std::size_t>(d)];
        switch (dim.source) {
            case CovariateDimension::Source::record:
                cats[static_cast<std::size_t>(d)] =
                    model.scheme.category_index(d, rec.covariates.at(dim.name));
                break;
            case CovariateDimension::Source::tis_band:
                cats[static_cast<std::size_t>(d)] =
                    model.scheme.band_for_value(d, year - rec.entry_year);
                break;
            case CovariateDimension::Source::age_band:
                cats[static_cast<std::size_t>(d)] =
                    model.scheme.band_for_value(d, year - rec.attributes.at("birth_year"));
                break;
        }
    }
    return model.scheme.profile_id(cats);
}

/// Samples one record from the model's own generative process, so nearly
/// every draw has positive likelihood under the model.
inline IndividualRecord sample_record(const Instance& inst, int year_start, int year_end,
                                      std::mt19937_64& eng, const std::string& id) {
    const auto& model = inst.model;
    const int S = model.states.size();
    const int K = model.design.K();
    const int pr = model.states.index_of_role(StateRole::present);
    const auto cats = enumerate_categories(K);

    IndividualRecord rec;
    rec.id = id;
    rec.entry_year =
        year_start + static_cast<int>(uniform_below(
                         eng, static_cast<std::uint64_t>(year_end - year_start + 1)));
    bool needs_birth_year = false;
    for (const auto& dim : model.scheme.dims()) {
        if (dim.source == CovariateDimension::Source::record)
            rec.covariates[dim.name] =
                dim.categories[uniform_below(eng, dim.categories.size())];
        if (dim.source == CovariateDimension::Source::age_band) needs_birth_year = true;
    }
    if (needs_birth_year)
        rec.attributes["birth_year"] =
            rec.entry_year - 18 - static_cast<int>(uniform_below(eng, 60));

    const int g = model.groups() == 1
                      ? 0
                      : categorical(eng, inst.params.mixing_proportions());
    int state = pr;
    std::vector<double> pattern_probs;
    std::vector<double> cat_probs(cats.size());
    double evec[8];
    for (int year = rec.entry_year; year <= year_end; ++year) {
        const int profile = profile_in_year(model, rec, year);
        pattern_probabilities(model.design, inst.params.emission, model.scheme, g, profile,
                              pattern_probs);
        const double q = model.fp.enabled
                             ? false_positive_probability(
                                   FalsePositiveSpec{true, model.fp.pattern, inst.params.fp_q},
                                   model.scheme, profile)
                             : 0.0;
        for (std::size_t c = 0; c < cats.size(); ++c) {
            emission_vector(model.states, model.events,
                            FalsePositiveSpec{model.fp.enabled, model.fp.pattern, inst.params.fp_q},
                            pattern_probs, q, cats[c], evec);
            cat_probs[c] = evec[state];
        }
        rec.observations.push_back(encode_category(cats[categorical(eng, cat_probs)], K));
        if (year < year_end) {
            const TransitionMatrix gamma = build_transition_matrix(
                model.states, inst.params.life, model.scheme, profile);
            std::vector<double> row(static_cast<std::size_t>(S));
            for (int j = 0; j < S; ++j) row[static_cast<std::size_t>(j)] = gamma(state, j);
            state = categorical(eng, row);
        }
    }
    return rec;
}

inline Dataset make_dataset(const Instance& inst, int n, int year_start, int year_end,
                            std::uint64_t seed) {
    Dataset data;
    data.year_start = year_start;
    data.year_end = year_end;
    data.K = inst.model.design.K();
    std::mt19937_64 eng(seed);
    for (int i = 0; i < n; ++i)
        data.records.push_back(
            sample_record(inst, year_start, year_end, eng, "id" + std::to_string(i)));
    return data;
}

/// Per-year emission vectors and between-year transition matrices for one
/// record and group, built directly from the structured parameters without
/// going through ParamTables.
struct RecordYearTables {
    std::vector<std::vector<double>> emis; // [year][state]
    std::vector<TransitionMatrix> gammas;  // [year], between year y and y+1
};

inline RecordYearTables record_year_tables(const ModelSpec& model, const Parameters& params,
                                           const PreparedData& prep, std::size_t rec,
                                           int group) {
    const int S = model.states.size();
    const int K = model.design.K();
    const std::size_t off = prep.offset[rec];
    const int Y = static_cast<int>(prep.offset[rec + 1] - off);

    RecordYearTables t;
    t.emis.resize(static_cast<std::size_t>(Y));
    std::vector<double> pattern_probs;
    const FalsePositiveSpec fp{model.fp.enabled, model.fp.pattern, params.fp_q};
    for (int y = 0; y < Y; ++y) {
        const int profile = prep.profile[off + static_cast<std::size_t>(y)];
        pattern_probabilities(model.design, params.emission, model.scheme, group, profile,
                              pattern_probs);
        const double q =
            model.fp.enabled ? false_positive_probability(fp, model.scheme, profile) : 0.0;
        double evec[8];
        emission_vector(model.states, model.events, fp, pattern_probs, q,
                        decode_category(prep.code[off + static_cast<std::size_t>(y)], K), evec);
        t.emis[static_cast<std::size_t>(y)].assign(evec, evec + S);
        if (y + 1 < Y)
            t.gammas.push_back(
                build_transition_matrix(model.states, params.life, model.scheme, profile));
    }
    return t;
}

/// Log likelihood of one record for one group by explicit summation over all
/// latent state paths, with the initial distribution a point mass on the
/// present state at entry. Independent of ParamTables and of the forward
/// recursion.
inline double brute_force_group_loglik(const ModelSpec& model, const Parameters& params,
                                       const PreparedData& prep, std::size_t rec, int group) {
    const int S = model.states.size();
    const int pr = model.states.index_of_role(StateRole::present);
    const int Y = static_cast<int>(prep.offset[rec + 1] - prep.offset[rec]);
    const RecordYearTables t = record_year_tables(model, params, prep, rec, group);
    const auto& emis = t.emis;
    const auto& gammas = t.gammas;

    if (Y == 1) {
        const double p = emis[0][static_cast<std::size_t>(pr)];
        return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
    }

    // Odometer over the S^(Y-1) paths for years 1..Y-1; year 0 is pinned to
    // the present state by the entry condition.
    std::vector<int> path(static_cast<std::size_t>(Y - 1), 0);
    double total = 0.0;
    while (true) {
        double p = emis[0][static_cast<std::size_t>(pr)];
        int prev = pr;
        for (int y = 1; y < Y; ++y) {
            const int z = path[static_cast<std::size_t>(y - 1)];
            p *= gammas[static_cast<std::size_t>(y - 1)](prev, z);
            p *= emis[static_cast<std::size_t>(y)][static_cast<std::size_t>(z)];
            prev = z;
        }
        total += p;
        int d = 0;
        while (d < Y - 1 && ++path[static_cast<std::size_t>(d)] == S) {
            path[static_cast<std::size_t>(d)] = 0;
            ++d;
        }
        if (d == Y - 1) break;
    }
    return total > 0.0 ? std::log(total) : -std::numeric_limits<double>::infinity();
}

/// Linear-space forward recursion without per-step renormalization; only
/// usable for short histories, where no underflow can occur.
inline double unscaled_group_loglik(const ModelSpec& model, const Parameters& params,
                                    const PreparedData& prep, std::size_t rec, int group) {
    const int S = model.states.size();
    const int pr = model.states.index_of_role(StateRole::present);
    const int Y = static_cast<int>(prep.offset[rec + 1] - prep.offset[rec]);
    const RecordYearTables t = record_year_tables(model, params, prep, rec, group);

    std::vector<double> alpha(static_cast<std::size_t>(S), 0.0);
    alpha[static_cast<std::size_t>(pr)] = t.emis[0][static_cast<std::size_t>(pr)];
    std::vector<double> next(static_cast<std::size_t>(S));
    for (int y = 1; y < Y; ++y) {
        for (int j = 0; j < S; ++j) {
            double acc = 0.0;
            for (int s = 0; s < S; ++s)
                acc += alpha[static_cast<std::size_t>(s)] *
                       t.gammas[static_cast<std::size_t>(y - 1)](s, j);
            next[static_cast<std::size_t>(j)] =
                acc * t.emis[static_cast<std::size_t>(y)][static_cast<std::size_t>(j)];
        }
        alpha = next;
    }
    double total = 0.0;
    for (double a : alpha) total += a;
    return total > 0.0 ? std::log(total) : -std::numeric_limits<double>::infinity();
}

/// Mixture log likelihood of one record by path enumeration per group.
inline double brute_force_loglik(const ModelSpec& model, const Parameters& params,
                                 const PreparedData& prep, std::size_t rec) {
    const std::vector<double> pi = params.mixing_proportions();
    const int G = model.groups();
    if (G == 1) return brute_force_group_loglik(model, params, prep, rec, 0);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(static_cast<std::size_t>(G));
    for (int g = 0; g < G; ++g) {
        terms[static_cast<std::size_t>(g)] =
            std::log(pi[static_cast<std::size_t>(g)]) +
            brute_force_group_loglik(model, params, prep, rec, g);
        best = std::max(best, terms[static_cast<std::size_t>(g)]);
    }
    if (!std::isfinite(best)) return best;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

} // namespace crhmm::testing
