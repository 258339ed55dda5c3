#include "crhmm/likelihood.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>

#include "crhmm/parallel.hpp"

namespace crhmm {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

PreparedData prepare_data(const Dataset& data, const ModelSpec& model) {
    model.validate();
    const auto& scheme = model.scheme;
    const int K = model.design.K();
    if (data.K != K)
        throw data_error("dataset encodes " + std::to_string(data.K) +
                         " registers but the model has " + std::to_string(K));
    if (data.year_end < data.year_start) throw data_error("empty study window");

    PreparedData prep;
    prep.T = data.years();
    prep.S = model.states.size();
    prep.K = K;
    prep.P = scheme.profile_count();
    prep.G = model.groups();
    prep.year_start = data.year_start;

    // Which dimensions come from the record map vs. derived bands, resolved
    // once up front.
    struct DimSource {
        CovariateDimension::Source source;
        int index;
    };
    std::vector<DimSource> sources;
    for (int d = 0; d < scheme.dim_count(); ++d)
        sources.push_back({scheme.dims()[d].source, d});

    std::unordered_map<std::uint64_t, std::uint32_t> cell_index;
    prep.offset.push_back(0);
    std::vector<int> cats(scheme.dim_count());

    for (const auto& rec : data.records) {
        auto fail = [&](const std::string& msg) -> void {
            throw data_error("record '" + rec.id + "': " + msg);
        };
        if (rec.entry_year < data.year_start || rec.entry_year > data.year_end)
            fail("entry year " + std::to_string(rec.entry_year) + " outside the study window");
        const int t0 = rec.entry_year - data.year_start;
        const int nyears = prep.T - t0;
        if (static_cast<int>(rec.observations.size()) != nyears)
            fail("expected " + std::to_string(nyears) + " observations, got " +
                 std::to_string(rec.observations.size()));

        int birth_year = 0;
        bool need_birth = false;
        for (const auto& ds : sources)
            if (ds.source == CovariateDimension::Source::age_band) need_birth = true;
        if (need_birth) {
            auto it = rec.attributes.find("birth_year");
            if (it == rec.attributes.end()) fail("missing birth_year attribute");
            birth_year = it->second;
        }

        prep.t0.push_back(t0);
        for (int y = 0; y < nyears; ++y) {
            const int year = rec.entry_year + y;
            for (const auto& ds : sources) {
                switch (ds.source) {
                    case CovariateDimension::Source::record: {
                        auto it = rec.covariates.find(scheme.dims()[ds.index].name);
                        if (it == rec.covariates.end())
                            fail("missing covariate '" + scheme.dims()[ds.index].name + "'");
                        try {
                            cats[ds.index] = scheme.category_index(ds.index, it->second);
                        } catch (const config_error& e) {
                            fail(e.what());
                        }
                        break;
                    }
                    case CovariateDimension::Source::tis_band:
                        cats[ds.index] = scheme.band_for_value(ds.index, year - rec.entry_year);
                        break;
                    case CovariateDimension::Source::age_band:
                        cats[ds.index] = scheme.band_for_value(ds.index, year - birth_year);
                        break;
                }
            }
            const int profile = scheme.dim_count() ? scheme.profile_id(cats) : 0;

            const std::uint32_t code = rec.observations[y];
            const ObservationCategory cat = decode_category(code, K);
            if (!category_valid(cat, K) || encode_category(cat, K) != code)
                fail("invalid observation code " + std::to_string(code) + " in year " +
                     std::to_string(year));
            if (model.states.kind == StateSpaceKind::general3 && cat.flag != EventFlag::none)
                fail("event records are not representable in the three-state template");

            prep.profile.push_back(static_cast<std::uint16_t>(profile));
            prep.code.push_back(code);
            const std::uint64_t key = (static_cast<std::uint64_t>(profile) << 32) | code;
            auto [it, inserted] = cell_index.try_emplace(
                key, static_cast<std::uint32_t>(prep.cells.size()));
            if (inserted)
                prep.cells.push_back({static_cast<std::uint16_t>(profile), code});
            prep.cell.push_back(it->second);
        }
        prep.offset.push_back(prep.profile.size());
    }
    return prep;
}

ParamTables build_tables(const ModelSpec& model, const Parameters& params,
                         const PreparedData& prep) {
    ParamTables t;
    t.S = prep.S;
    t.cell_count = static_cast<int>(prep.cells.size());
    t.present_index = model.states.index_of_role(StateRole::present);

    // The false positive structure comes from the model, the coefficients
    // from the current parameter values.
    const FalsePositiveSpec fp{model.fp.enabled, model.fp.pattern, params.fp_q};

    const int P = prep.P;
    const int G = prep.G;
    t.gamma_t.resize(P);
    t.q.resize(P);
    t.life.resize(P);
    for (int p = 0; p < P; ++p) {
        t.life[p] = life_event_probabilities(params.life, model.scheme, p);
        TransitionMatrix g = build_transition_matrix(model.states, t.life[p]);
        TransitionMatrix gt;
        gt.n = g.n;
        for (int i = 0; i < g.n; ++i)
            for (int j = 0; j < g.n; ++j) gt(j, i) = g(i, j);
        t.gamma_t[p] = gt;
        t.q[p] = false_positive_probability(fp, model.scheme, p);
    }

    t.patterns.resize(static_cast<std::size_t>(G) * P);
    for (int g = 0; g < G; ++g)
        for (int p = 0; p < P; ++p)
            pattern_probabilities(model.design, params.emission, model.scheme, g, p,
                                  t.patterns[static_cast<std::size_t>(g) * P + p]);

    t.emission.resize(static_cast<std::size_t>(G) * t.cell_count * t.S);
    for (int g = 0; g < G; ++g)
        for (int c = 0; c < t.cell_count; ++c) {
            const auto& cell = prep.cells[c];
            const ObservationCategory cat = decode_category(cell.code, prep.K);
            double* out =
                t.emission.data() + (static_cast<std::size_t>(g) * t.cell_count + c) * t.S;
            emission_vector(model.states, model.events, fp,
                            t.patterns[static_cast<std::size_t>(g) * P + cell.profile],
                            t.q[cell.profile], cat, out);
        }

    t.pi = params.mixing_proportions();
    t.log_pi.resize(t.pi.size());
    for (std::size_t g = 0; g < t.pi.size(); ++g) t.log_pi[g] = std::log(t.pi[g]);
    return t;
}

double record_group_loglik(const PreparedData& prep, const ParamTables& tables,
                           std::size_t record, int group) {
    const int S = tables.S;
    const std::size_t o = prep.offset[record];
    const std::size_t nyears = prep.offset[record + 1] - o;

    // Entry conditioning: the initial distribution is a point mass on the
    // present state in the entry year.
    const int pr = tables.present_index;
    double alpha[8], anext[8];
    const double* e0 = tables.emission_row(group, prep.cell[o]);
    for (int s = 0; s < S; ++s) alpha[s] = 0.0;
    const double c = e0[pr];
    if (!(c > 0.0)) return kNegInf;
    double ll = std::log(c);
    alpha[pr] = 1.0;

    for (std::size_t y = 1; y < nyears; ++y) {
        const TransitionMatrix& gt = tables.gamma_t[prep.profile[o + y - 1]];
        const double* e = tables.emission_row(group, prep.cell[o + y]);
        double total = 0.0;
        for (int j = 0; j < S; ++j) {
            const double* row = gt.a.data() + static_cast<std::size_t>(j) * S;
            double acc = 0.0;
            for (int s = 0; s < S; ++s) acc += alpha[s] * row[s];
            acc *= e[j];
            anext[j] = acc;
            total += acc;
        }
        if (!(total > 0.0)) return kNegInf;
        ll += std::log(total);
        const double inv = 1.0 / total;
        for (int j = 0; j < S; ++j) alpha[j] = anext[j] * inv;
    }
    return ll;
}

double record_loglik(const PreparedData& prep, const ParamTables& tables, std::size_t record) {
    const int G = static_cast<int>(tables.pi.size());
    if (G == 1) return record_group_loglik(prep, tables, record, 0);
    double terms[8];
    double best = kNegInf;
    for (int g = 0; g < G; ++g) {
        terms[g] = tables.log_pi[g] + record_group_loglik(prep, tables, record, g);
        if (terms[g] > best) best = terms[g];
    }
    if (best == kNegInf) return kNegInf;
    double acc = 0.0;
    for (int g = 0; g < G; ++g) acc += std::exp(terms[g] - best);
    return best + std::log(acc);
}

std::vector<double> posterior_group_weights(const PreparedData& prep,
                                            const ParamTables& tables, std::size_t record) {
    const int G = static_cast<int>(tables.pi.size());
    std::vector<double> w(G, 0.0);
    if (G == 1) {
        w[0] = 1.0;
        return w;
    }
    double best = kNegInf;
    for (int g = 0; g < G; ++g) {
        w[g] = tables.log_pi[g] + record_group_loglik(prep, tables, record, g);
        if (w[g] > best) best = w[g];
    }
    if (best == kNegInf) {
        for (int g = 0; g < G; ++g) w[g] = 1.0 / G;
        return w;
    }
    double denom = 0.0;
    for (int g = 0; g < G; ++g) {
        w[g] = std::exp(w[g] - best);
        denom += w[g];
    }
    for (int g = 0; g < G; ++g) w[g] /= denom;
    return w;
}

double total_loglik(const PreparedData& prep, const ParamTables& tables,
                    std::span<const double> weights, int workers) {
    if (!weights.empty() && weights.size() != prep.size())
        throw data_error("weight vector length does not match the record count");
    return parallel_chunked_sum(prep.size(), workers, [&](std::size_t i) {
        if (!weights.empty()) {
            const double w = weights[i];
            if (w == 0.0) return 0.0;
            return w * record_loglik(prep, tables, i);
        }
        return record_loglik(prep, tables, i);
    });
}

} // namespace crhmm
