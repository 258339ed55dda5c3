#include "crhmm/emission.hpp"

#include <algorithm>
#include <cmath>

namespace crhmm {

int category_count(int K) { return 2 * (1 << K) + 2; }

std::uint32_t encode_category(ObservationCategory cat, int K) {
    return cat.pattern | (static_cast<std::uint32_t>(cat.flag) << K);
}

ObservationCategory decode_category(std::uint32_t code, int K) {
    ObservationCategory cat;
    cat.pattern = code & ((1u << K) - 1u);
    cat.flag = static_cast<EventFlag>((code >> K) & 3u);
    return cat;
}

bool category_valid(ObservationCategory cat, int K) {
    if (K < 1 || K > kMaxRegisters) return false;
    if (cat.pattern >= (1u << K)) return false;
    // An emigration or death record means the person produced no register
    // traces that year; only re-immigration can coincide with a pattern.
    if ((cat.flag == EventFlag::emigration || cat.flag == EventFlag::death) && cat.pattern != 0)
        return false;
    return true;
}

std::vector<ObservationCategory> enumerate_categories(int K) {
    std::vector<ObservationCategory> cats;
    cats.reserve(category_count(K));
    for (std::uint32_t p = 0; p < (1u << K); ++p)
        cats.push_back({p, EventFlag::none});
    cats.push_back({0, EventFlag::emigration});
    cats.push_back({0, EventFlag::death});
    for (std::uint32_t p = 0; p < (1u << K); ++p)
        cats.push_back({p, EventFlag::reimmigration});
    return cats;
}

void EmissionDesign::validate(const CovariateScheme& scheme) const {
    (void)scheme;
    if (registers.empty()) throw config_error("emission design has no registers");
    if (K() > kMaxRegisters)
        throw config_error("at most " + std::to_string(kMaxRegisters) +
                           " registers are supported");
    if (!group_specific.empty() && group_specific.size() != registers.size())
        throw config_error("group_specific flags must match the register count");
    if (groups < 1) throw config_error("mixture needs at least one group");
    for (std::size_t i = 0; i < registers.size(); ++i)
        for (std::size_t j = i + 1; j < registers.size(); ++j)
            if (registers[i] == registers[j])
                throw config_error("duplicate register name '" + registers[i] + "'");
}

int EmissionDesign::register_index(const std::string& name) const {
    for (std::size_t k = 0; k < registers.size(); ++k)
        if (registers[k] == name) return static_cast<int>(k);
    throw config_error("unknown register '" + name + "'");
}

EmissionCoefficients EmissionCoefficients::zeros(const EmissionDesign& design,
                                                 const CovariateScheme& scheme) {
    EmissionCoefficients c;
    const int K = design.K();
    c.main.assign(design.groups, std::vector<double>(K, 0.0));
    c.reg_cov.resize(K);
    for (int k = 0; k < K; ++k) {
        c.reg_cov[k].resize(scheme.dim_count());
        for (int d = 0; d < scheme.dim_count(); ++d)
            c.reg_cov[k][d].assign(scheme.dims()[d].categories.size(), 0.0);
    }
    c.reg_reg.assign(K, std::vector<double>(K, 0.0));
    return c;
}

void FalsePositiveSpec::validate(int K) const {
    if (!enabled) return;
    if (pattern == 0 || pattern >= (1u << K))
        throw config_error("false positive pattern must be a nonempty register subset");
}

void EventRecordingProbabilities::validate() const {
    for (double v : {psi_emigration, psi_reimmigration, phi_present_death, phi_abroad_death})
        if (!(v >= 0.0 && v <= 1.0))
            throw config_error("event recording probabilities must lie in [0, 1]");
}

void pattern_probabilities(const EmissionDesign& design, const EmissionCoefficients& coeffs,
                           const CovariateScheme& scheme, int group, int profile,
                           std::vector<double>& out) {
    const int K = design.K();
    const std::uint32_t npat = 1u << K;
    out.resize(npat);

    // Collapse main and register-by-covariate effects into one weight per
    // register for this profile; only pairwise terms depend on the pattern
    // beyond that.
    double w[kMaxRegisters];
    for (int k = 0; k < K; ++k) {
        double v = coeffs.main[group][k];
        if (design.register_covariate_interactions)
            for (int d = 0; d < scheme.dim_count(); ++d)
                v += coeffs.reg_cov[k][d][scheme.category_of(profile, d)];
        w[k] = v;
    }

    double maxeta = 0.0; // the empty pattern has predictor 0
    for (std::uint32_t p = 0; p < npat; ++p) {
        double eta = 0.0;
        for (int k = 0; k < K; ++k) {
            if (!(p & (1u << k))) continue;
            eta += w[k];
            if (design.register_register_interactions)
                for (int l = k + 1; l < K; ++l)
                    if (p & (1u << l)) eta += coeffs.reg_reg[k][l];
        }
        out[p] = eta;
        maxeta = std::max(maxeta, eta);
    }
    double denom = 0.0;
    for (std::uint32_t p = 0; p < npat; ++p) {
        out[p] = std::exp(out[p] - maxeta);
        denom += out[p];
    }
    for (std::uint32_t p = 0; p < npat; ++p) out[p] /= denom;
}

double false_positive_probability(const FalsePositiveSpec& fp, const CovariateScheme& scheme,
                                  int profile) {
    if (!fp.enabled) return 0.0;
    return fp.q.probability(scheme, profile);
}

double marginal_register_probability(const std::vector<double>& pattern_probs,
                                     int register_index) {
    double m = 0.0;
    for (std::size_t p = 0; p < pattern_probs.size(); ++p)
        if (p & (1u << register_index)) m += pattern_probs[p];
    return m;
}

double mixture_marginal(double pi, double m1, double m2) {
    return pi * m1 + (1.0 - pi) * m2;
}

double mixture_marginal(std::span<const double> pi, std::span<const double> marginals) {
    double m = 0.0;
    for (std::size_t g = 0; g < pi.size(); ++g) m += pi[g] * marginals[g];
    return m;
}

namespace {

// Channel shared by the silently-abroad, died-abroad and (eight-state) dead
// states: the false positive pattern fires with probability q, otherwise
// nothing is observed.
double false_positive_channel(const FalsePositiveSpec& fp, double q, ObservationCategory cat) {
    if (cat.flag != EventFlag::none) return 0.0;
    if (fp.enabled && cat.pattern == fp.pattern) return q;
    if (cat.pattern == 0) return 1.0 - (fp.enabled ? q : 0.0);
    return 0.0;
}

} // namespace

void emission_vector(const StateSpaceConfig& config, const EventRecordingProbabilities& events,
                     const FalsePositiveSpec& fp, const std::vector<double>& pattern_probs,
                     double q, ObservationCategory cat, double* out) {
    using R = StateRole;
    const bool dead_emits_fp = config.kind == StateSpaceKind::sweden8 && fp.enabled;
    for (int i = 0; i < config.size(); ++i) {
        double v = 0.0;
        switch (config.states[i].role) {
            case R::present:
                if (cat.flag == EventFlag::none) v = pattern_probs[cat.pattern];
                break;
            case R::returned_reregistered:
                if (cat.flag == EventFlag::reimmigration)
                    v = events.psi_reimmigration * pattern_probs[cat.pattern];
                else if (cat.flag == EventFlag::none)
                    v = (1.0 - events.psi_reimmigration) * pattern_probs[cat.pattern];
                break;
            case R::present_death_recorded:
                if (cat.flag == EventFlag::death)
                    v = events.phi_present_death;
                else if (cat.flag == EventFlag::none && cat.pattern == 0)
                    v = 1.0 - events.phi_present_death;
                break;
            case R::abroad_emigration_recorded:
                if (cat.flag == EventFlag::emigration)
                    v = events.psi_emigration;
                else if (cat.flag == EventFlag::none && cat.pattern == 0)
                    v = 1.0 - events.psi_emigration;
                break;
            case R::abroad_known:
                if (cat.flag == EventFlag::none && cat.pattern == 0) v = 1.0;
                break;
            case R::abroad_unknown:
                v = false_positive_channel(fp, q, cat);
                break;
            case R::abroad_death_recorded:
                if (cat.flag == EventFlag::death)
                    v = events.phi_abroad_death;
                else
                    v = (1.0 - events.phi_abroad_death) * false_positive_channel(fp, q, cat);
                break;
            case R::dead:
                if (dead_emits_fp)
                    v = false_positive_channel(fp, q, cat);
                else if (cat.flag == EventFlag::none && cat.pattern == 0)
                    v = 1.0;
                break;
        }
        out[i] = v;
    }
}

} // namespace crhmm
