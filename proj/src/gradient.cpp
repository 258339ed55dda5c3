#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "crhmm/likelihood.hpp"
#include "crhmm/parallel.hpp"

namespace crhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Transition entries are affine in each of s, e, r, lambda with the others
// fixed, so the partial derivative with respect to v is exactly
// Gamma(v=1) - Gamma(v=0), no finite-difference error.
std::array<TransitionMatrix, 4> transition_derivatives(const StateSpaceConfig& states,
                                                       const LifeEventProbabilities& p) {
    std::array<TransitionMatrix, 4> d;
    for (int v = 0; v < 4; ++v) {
        LifeEventProbabilities hi = p, lo = p;
        switch (v) {
            case 0: hi.s = 1.0; lo.s = 0.0; break;
            case 1: hi.e = 1.0; lo.e = 0.0; break;
            case 2: hi.r = 1.0; lo.r = 0.0; break;
            case 3: hi.lambda = 1.0; lo.lambda = 0.0; break;
        }
        TransitionMatrix a = build_transition_matrix(states, hi);
        TransitionMatrix b = build_transition_matrix(states, lo);
        d[v].n = a.n;
        for (int i = 0; i < a.n * a.n; ++i) d[v].a[i] = a.a[i] - b.a[i];
    }
    return d;
}

// How one cell's emission vector depends on the free quantities:
// e(state) = pat_coef(state) * patterns[pattern] + q_coef(state) * q + const.
struct CellRecipe {
    std::array<double, 8> pat_coef{};
    std::array<double, 8> q_coef{};
    std::uint32_t pattern = 0;
};

CellRecipe cell_recipe(const ModelSpec& model, ObservationCategory cat) {
    using R = StateRole;
    CellRecipe rec;
    rec.pattern = cat.pattern;
    const auto& fp = model.fp;
    const bool dead_emits_fp = model.states.kind == StateSpaceKind::sweden8 && fp.enabled;
    // q enters flag-none categories only: +q on the false positive pattern,
    // 1-q on the empty pattern, nothing elsewhere.
    double qsign = 0.0;
    if (cat.flag == EventFlag::none && fp.enabled) {
        if (cat.pattern == fp.pattern) qsign = 1.0;
        else if (cat.pattern == 0) qsign = -1.0;
    }
    for (int i = 0; i < model.states.size(); ++i) {
        switch (model.states.states[i].role) {
            case R::present:
                if (cat.flag == EventFlag::none) rec.pat_coef[i] = 1.0;
                break;
            case R::returned_reregistered:
                if (cat.flag == EventFlag::reimmigration)
                    rec.pat_coef[i] = model.events.psi_reimmigration;
                else if (cat.flag == EventFlag::none)
                    rec.pat_coef[i] = 1.0 - model.events.psi_reimmigration;
                break;
            case R::abroad_unknown:
                rec.q_coef[i] = qsign;
                break;
            case R::abroad_death_recorded:
                if (cat.flag == EventFlag::none)
                    rec.q_coef[i] = (1.0 - model.events.phi_abroad_death) * qsign;
                break;
            case R::dead:
                if (dead_emits_fp) rec.q_coef[i] = qsign;
                break;
            default:
                break;
        }
    }
    return rec;
}

// Adds the chained value to the intercept and to every dimension's slot for
// this profile's category; packing selects the free subset afterwards.
void add_logit_chain(CoefficientBlock& block, const std::vector<int>& cats, double v) {
    block.intercept += v;
    for (std::size_t d = 0; d < block.effects.size(); ++d) block.effects[d][cats[d]] += v;
}

} // namespace

double total_loglik_gradient(const ModelSpec& model, const Parameters& params,
                             const ParameterSchema& schema, const PreparedData& prep,
                             const ParamTables& tables, std::span<const double> weights,
                             int workers, std::vector<double>& grad) {
    if (!weights.empty() && weights.size() != prep.size())
        throw data_error("weight vector length does not match the record count");

    const int S = tables.S;
    const int G = prep.G;
    const int P = prep.P;
    const std::uint32_t npat = 1u << prep.K;
    const int pr = tables.present_index;
    const int nparam = schema.size();
    const int D = model.scheme.dim_count();

    std::vector<std::array<TransitionMatrix, 4>> dgamma(P);
    for (int p = 0; p < P; ++p)
        dgamma[p] = transition_derivatives(model.states, tables.life[p]);
    std::vector<CellRecipe> recipes(prep.cells.size());
    for (std::size_t c = 0; c < prep.cells.size(); ++c)
        recipes[c] = cell_recipe(model, decode_category(prep.cells[c].code, prep.K));
    std::vector<std::vector<int>> profile_cats(P);
    for (int p = 0; p < P; ++p) profile_cats[p] = model.scheme.profile_cats(p);

    const std::size_t n = prep.size();
    const std::size_t chunks = n == 0 ? 0 : (n + kReductionChunk - 1) / kReductionChunk;
    std::vector<double> chunk_value(chunks, 0.0);
    std::vector<std::vector<double>> chunk_grad(chunks);

    parallel_for(chunks, workers, [&](std::size_t cidx) {
        const std::size_t lo = cidx * kReductionChunk;
        const std::size_t hi = std::min(n, lo + kReductionChunk);

        // Chunk-local mass accumulators in the intermediate spaces.
        std::vector<std::array<double, 64>> gm(P); // transition mass (from, to)
        for (auto& m : gm) m.fill(0.0);
        std::vector<std::vector<double>> ppmass(static_cast<std::size_t>(G) * P,
                                                std::vector<double>(npat, 0.0));
        std::vector<double> qmass(P, 0.0);
        std::vector<double> mixmass(G, 0.0);

        std::vector<double> ahat, pred, cs; // per record, all groups
        double bhat[8], u[8], ll_g[8], omega[8], terms[8];
        double value = 0.0;

        for (std::size_t i = lo; i < hi; ++i) {
            const double w = weights.empty() ? 1.0 : weights[i];
            if (w == 0.0) continue;
            const std::size_t o = prep.offset[i];
            const int Y = static_cast<int>(prep.offset[i + 1] - o);
            const std::size_t plane = static_cast<std::size_t>(Y) * S;
            ahat.resize(plane * G);
            pred.resize(plane * G);
            cs.resize(static_cast<std::size_t>(Y) * G);

            // Forward pass per group, storing the normalized alpha, the
            // pre-emission predictive mass, and the per-step scales. The
            // arithmetic mirrors record_group_loglik exactly.
            for (int g = 0; g < G; ++g) {
                double* ag = ahat.data() + plane * g;
                double* pg = pred.data() + plane * g;
                double* cg = cs.data() + static_cast<std::size_t>(Y) * g;
                const double* e0 = tables.emission_row(g, prep.cell[o]);
                for (int s = 0; s < S; ++s) {
                    ag[s] = 0.0;
                    pg[s] = 0.0;
                }
                pg[pr] = 1.0;
                const double c0 = e0[pr];
                if (!(c0 > 0.0)) {
                    ll_g[g] = kNegInf;
                    continue;
                }
                cg[0] = c0;
                ag[pr] = 1.0;
                double ll = std::log(c0);
                for (int y = 1; y < Y; ++y) {
                    const TransitionMatrix& gt = tables.gamma_t[prep.profile[o + y - 1]];
                    const double* e = tables.emission_row(g, prep.cell[o + y]);
                    const double* aprev = ag + static_cast<std::size_t>(y - 1) * S;
                    double* py = pg + static_cast<std::size_t>(y) * S;
                    double* ay = ag + static_cast<std::size_t>(y) * S;
                    double total = 0.0;
                    for (int j = 0; j < S; ++j) {
                        const double* row = gt.a.data() + static_cast<std::size_t>(j) * S;
                        double acc = 0.0;
                        for (int s = 0; s < S; ++s) acc += aprev[s] * row[s];
                        py[j] = acc;
                        acc *= e[j];
                        ay[j] = acc;
                        total += acc;
                    }
                    if (!(total > 0.0)) {
                        ll = kNegInf;
                        break;
                    }
                    cg[y] = total;
                    ll += std::log(total);
                    const double inv = 1.0 / total;
                    for (int j = 0; j < S; ++j) ay[j] *= inv;
                }
                ll_g[g] = ll;
            }

            // Mixture value and posterior weights.
            double ll_i;
            if (G == 1) {
                ll_i = ll_g[0];
                omega[0] = 1.0;
            } else {
                double best = kNegInf;
                for (int g = 0; g < G; ++g) {
                    terms[g] = tables.log_pi[g] + ll_g[g];
                    if (terms[g] > best) best = terms[g];
                }
                if (best == kNegInf) {
                    ll_i = kNegInf;
                } else {
                    double acc = 0.0;
                    for (int g = 0; g < G; ++g) {
                        omega[g] = std::exp(terms[g] - best);
                        acc += omega[g];
                    }
                    ll_i = best + std::log(acc);
                    for (int g = 0; g < G; ++g) omega[g] /= acc;
                }
            }
            value += w * ll_i;
            if (ll_i == kNegInf) continue; // no gradient from an impossible record

            if (G > 1)
                for (int g = 0; g < G; ++g) mixmass[g] += w * (omega[g] - tables.pi[g]);

            // Backward sweep per group with mixture factor f = w * omega_g.
            for (int g = 0; g < G; ++g) {
                if (ll_g[g] == kNegInf) continue;
                const double f = w * omega[g];
                if (f == 0.0) continue;
                const double* ag = ahat.data() + plane * g;
                const double* pg = pred.data() + plane * g;
                const double* cg = cs.data() + static_cast<std::size_t>(Y) * g;
                for (int s = 0; s < S; ++s) bhat[s] = 1.0;
                for (int y = Y - 1; y >= 0; --y) {
                    const std::uint32_t cell = prep.cell[o + y];
                    const int prof = prep.profile[o + y];
                    const double invc = 1.0 / cg[y];
                    const double* py = pg + static_cast<std::size_t>(y) * S;
                    const CellRecipe& rec = recipes[cell];
                    double pacc = 0.0, qacc = 0.0;
                    for (int s = 0; s < S; ++s) {
                        const double m = f * py[s] * bhat[s] * invc;
                        pacc += m * rec.pat_coef[s];
                        qacc += m * rec.q_coef[s];
                    }
                    ppmass[static_cast<std::size_t>(g) * P + prof][rec.pattern] += pacc;
                    qmass[prof] += qacc;
                    if (y == 0) break;

                    const double* e = tables.emission_row(g, cell);
                    for (int j = 0; j < S; ++j) u[j] = e[j] * bhat[j] * invc;
                    const int prevprof = prep.profile[o + y - 1];
                    const TransitionMatrix& gt = tables.gamma_t[prevprof];
                    const double* aprev = ag + static_cast<std::size_t>(y - 1) * S;
                    double* gmp = gm[prevprof].data();
                    for (int j = 0; j < S; ++j) {
                        const double uj = u[j];
                        if (uj == 0.0) continue;
                        const double fu = f * uj;
                        for (int s = 0; s < S; ++s)
                            gmp[static_cast<std::size_t>(s) * S + j] += aprev[s] * fu;
                    }
                    // bhat_{y-1}(s) = sum_j Gamma(s,j) u(j); gt is transposed.
                    for (int s = 0; s < S; ++s) {
                        double acc = 0.0;
                        for (int j = 0; j < S; ++j)
                            acc += gt.a[static_cast<std::size_t>(j) * S + s] * u[j];
                        bhat[s] = acc;
                    }
                }
            }
        }

        // Contract the chunk's masses through the parameter maps.
        Parameters gacc = Parameters::zeros(model);
        const bool sweden = model.states.kind == StateSpaceKind::sweden8;
        for (int p = 0; p < P; ++p) {
            double mass[4] = {0, 0, 0, 0};
            const double* gmp = gm[p].data();
            bool any = false;
            for (int idx = 0; idx < S * S; ++idx)
                if (gmp[idx] != 0.0) { any = true; break; }
            if (!any) continue;
            for (int v = 0; v < (sweden ? 4 : 3); ++v) {
                const double* dg = dgamma[p][v].a.data();
                double acc = 0.0;
                for (int idx = 0; idx < S * S; ++idx) acc += gmp[idx] * dg[idx];
                mass[v] = acc;
            }
            const LifeEventProbabilities& lp = tables.life[p];
            add_logit_chain(gacc.life.survival, profile_cats[p], mass[0] * lp.s * (1.0 - lp.s));
            add_logit_chain(gacc.life.emigration, profile_cats[p], mass[1] * lp.e * (1.0 - lp.e));
            add_logit_chain(gacc.life.return_home, profile_cats[p], mass[2] * lp.r * (1.0 - lp.r));
            if (sweden)
                add_logit_chain(gacc.life.recorded_share, profile_cats[p],
                                mass[3] * lp.lambda * (1.0 - lp.lambda));
        }

        for (int g = 0; g < G; ++g)
            for (int p = 0; p < P; ++p) {
                const auto& m = ppmass[static_cast<std::size_t>(g) * P + p];
                const auto& pp = tables.patterns[static_cast<std::size_t>(g) * P + p];
                double dot = 0.0;
                bool any = false;
                for (std::uint32_t j = 0; j < npat; ++j) {
                    if (m[j] != 0.0) any = true;
                    dot += pp[j] * m[j];
                }
                if (!any) continue;
                for (std::uint32_t j = 0; j < npat; ++j) {
                    const double deta = pp[j] * (m[j] - dot);
                    if (deta == 0.0 || j == 0) continue;
                    for (int k = 0; k < prep.K; ++k) {
                        if (!(j & (1u << k))) continue;
                        gacc.emission.main[g][k] += deta;
                        if (model.design.register_covariate_interactions)
                            for (int d = 0; d < D; ++d)
                                gacc.emission.reg_cov[k][d][profile_cats[p][d]] += deta;
                        if (model.design.register_register_interactions)
                            for (int l = k + 1; l < prep.K; ++l)
                                if (j & (1u << l)) gacc.emission.reg_reg[k][l] += deta;
                    }
                }
            }

        if (model.fp.enabled)
            for (int p = 0; p < P; ++p) {
                if (qmass[p] == 0.0) continue;
                const double qv = tables.q[p];
                add_logit_chain(gacc.fp_q, profile_cats[p], qmass[p] * qv * (1.0 - qv));
            }

        for (int h = 0; h + 1 < G; ++h) gacc.mixing_logits[h] = mixmass[h];

        // Shared register mains: the flat slot carries the total over groups.
        for (int k = 0; k < prep.K; ++k) {
            bool specific = !model.design.group_specific.empty() &&
                            model.design.group_specific[k] && G > 1;
            if (specific) continue;
            double tot = 0.0;
            for (int g = 0; g < G; ++g) tot += gacc.emission.main[g][k];
            gacc.emission.main[0][k] = tot;
        }

        chunk_value[cidx] = value;
        chunk_grad[cidx] = schema.pack(gacc);
    });

    grad.assign(nparam, 0.0);
    std::vector<double> tmp(chunks);
    for (int j = 0; j < nparam; ++j) {
        for (std::size_t c = 0; c < chunks; ++c) tmp[c] = chunk_grad[c][j];
        std::vector<double> t = tmp;
        grad[j] = detail::pairwise_sum(t);
    }
    (void)params;
    return detail::pairwise_sum(chunk_value);
}

} // namespace crhmm
