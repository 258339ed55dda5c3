#include "crhmm/model.hpp"

#include <cmath>

namespace crhmm {

void ModelSpec::validate() const {
    states.validate();
    design.validate(scheme);
    events.validate();
    fp.validate(design.K());
    if (!design.group_specific.empty() && design.groups < 2) {
        for (auto f : design.group_specific)
            if (f) throw config_error("group-specific registers need at least two groups");
    }
    auto check_dims = [&](const std::vector<int>& dims, const char* what) {
        for (int d : dims)
            if (d < 0 || d >= scheme.dim_count())
                throw config_error(std::string("effect dimension index out of range in ") + what);
    };
    check_dims(effects.survival_dims, "survival");
    check_dims(effects.emigration_dims, "emigration");
    check_dims(effects.return_dims, "return");
    check_dims(effects.lambda_dims, "lambda");
    check_dims(effects.false_positive_dims, "false positive");
    if (!effects.lambda_dims.empty() && states.kind != StateSpaceKind::sweden8)
        throw config_error("lambda effects require the eight-state template");
}

Parameters Parameters::zeros(const ModelSpec& model) {
    Parameters p;
    p.life.survival = CoefficientBlock::zeros(model.scheme);
    p.life.emigration = CoefficientBlock::zeros(model.scheme);
    p.life.return_home = CoefficientBlock::zeros(model.scheme);
    p.life.recorded_share = CoefficientBlock::zeros(model.scheme);
    p.emission = EmissionCoefficients::zeros(model.design, model.scheme);
    p.fp_q = CoefficientBlock::zeros(model.scheme);
    p.mixing_logits.assign(model.groups() > 1 ? model.groups() - 1 : 0, 0.0);
    return p;
}

std::vector<double> Parameters::mixing_proportions() const {
    const int G = static_cast<int>(mixing_logits.size()) + 1;
    std::vector<double> pi(G);
    double denom = 1.0;
    for (double l : mixing_logits) denom += std::exp(l);
    for (int g = 0; g + 1 < G; ++g) pi[g] = std::exp(mixing_logits[g]) / denom;
    pi[G - 1] = 1.0 / denom;
    return pi;
}

ParameterSchema::ParameterSchema(const ModelSpec& model) : model_(&model) {
    const auto& scheme = model.scheme;
    const auto& design = model.design;

    auto add = [&](std::string name, Block block, int a = 0, int b = 0, int c = 0) {
        names_.push_back(std::move(name));
        entries_.push_back({block, a, b, c});
    };
    auto add_logit_block = [&](const std::string& prefix, Block intercept, Block effect,
                               const std::vector<int>& dims) {
        add(prefix + ".intercept", intercept);
        for (int d : dims) {
            const auto& dim = scheme.dims()[d];
            for (int cdx = 0; cdx < static_cast<int>(dim.categories.size()); ++cdx) {
                if (cdx == dim.baseline) continue;
                add(prefix + "." + dim.name + "." + dim.categories[cdx], effect, d, cdx);
            }
        }
    };

    add_logit_block("s", Block::survival_intercept, Block::survival_effect,
                    model.effects.survival_dims);
    add_logit_block("e", Block::emigration_intercept, Block::emigration_effect,
                    model.effects.emigration_dims);
    add_logit_block("r", Block::return_intercept, Block::return_effect,
                    model.effects.return_dims);
    if (model.states.kind == StateSpaceKind::sweden8)
        add_logit_block("lambda", Block::lambda_intercept, Block::lambda_effect,
                        model.effects.lambda_dims);

    const int K = design.K();
    for (int k = 0; k < K; ++k) {
        bool specific = !design.group_specific.empty() && design.group_specific[k] &&
                        design.groups > 1;
        if (specific) {
            for (int g = 0; g < design.groups; ++g)
                add("emission." + design.registers[k] + ".main.g" + std::to_string(g + 1),
                    Block::emission_main_group, g, k);
        } else {
            add("emission." + design.registers[k] + ".main", Block::emission_main_shared, k);
        }
    }
    if (design.register_covariate_interactions) {
        for (int k = 0; k < K; ++k)
            for (int d = 0; d < scheme.dim_count(); ++d) {
                const auto& dim = scheme.dims()[d];
                for (int cdx = 0; cdx < static_cast<int>(dim.categories.size()); ++cdx) {
                    if (cdx == dim.baseline) continue;
                    add("emission." + design.registers[k] + ".x." + dim.name + "." +
                            dim.categories[cdx],
                        Block::emission_reg_cov, k, d, cdx);
                }
            }
    }
    if (design.register_register_interactions)
        for (int k = 0; k < K; ++k)
            for (int l = k + 1; l < K; ++l)
                add("emission." + design.registers[k] + ".x." + design.registers[l],
                    Block::emission_reg_reg, k, l);

    if (model.fp.enabled)
        add_logit_block("fp", Block::fp_intercept, Block::fp_effect,
                        model.effects.false_positive_dims);

    for (int g = 0; g + 1 < design.groups; ++g)
        add("mixture.logit.g" + std::to_string(g + 1), Block::mixing_logit, g);
}

int ParameterSchema::index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (names_[i] == name) return i;
    return -1;
}

double ParameterSchema::get(const Parameters& p, const Entry& e) const {
    switch (e.block) {
        case Block::survival_intercept: return p.life.survival.intercept;
        case Block::survival_effect: return p.life.survival.effects[e.a][e.b];
        case Block::emigration_intercept: return p.life.emigration.intercept;
        case Block::emigration_effect: return p.life.emigration.effects[e.a][e.b];
        case Block::return_intercept: return p.life.return_home.intercept;
        case Block::return_effect: return p.life.return_home.effects[e.a][e.b];
        case Block::lambda_intercept: return p.life.recorded_share.intercept;
        case Block::lambda_effect: return p.life.recorded_share.effects[e.a][e.b];
        case Block::emission_main_shared: return p.emission.main[0][e.a];
        case Block::emission_main_group: return p.emission.main[e.a][e.b];
        case Block::emission_reg_cov: return p.emission.reg_cov[e.a][e.b][e.c];
        case Block::emission_reg_reg: return p.emission.reg_reg[e.a][e.b];
        case Block::fp_intercept: return p.fp_q.intercept;
        case Block::fp_effect: return p.fp_q.effects[e.a][e.b];
        case Block::mixing_logit: return p.mixing_logits[e.a];
    }
    return 0.0;
}

void ParameterSchema::set(Parameters& p, const Entry& e, double v) const {
    switch (e.block) {
        case Block::survival_intercept: p.life.survival.intercept = v; break;
        case Block::survival_effect: p.life.survival.effects[e.a][e.b] = v; break;
        case Block::emigration_intercept: p.life.emigration.intercept = v; break;
        case Block::emigration_effect: p.life.emigration.effects[e.a][e.b] = v; break;
        case Block::return_intercept: p.life.return_home.intercept = v; break;
        case Block::return_effect: p.life.return_home.effects[e.a][e.b] = v; break;
        case Block::lambda_intercept: p.life.recorded_share.intercept = v; break;
        case Block::lambda_effect: p.life.recorded_share.effects[e.a][e.b] = v; break;
        case Block::emission_main_shared:
            // Shared mains are mirrored into every group's slot so group
            // lookups stay uniform in the hot path.
            for (auto& row : p.emission.main) row[e.a] = v;
            break;
        case Block::emission_main_group: p.emission.main[e.a][e.b] = v; break;
        case Block::emission_reg_cov: p.emission.reg_cov[e.a][e.b][e.c] = v; break;
        case Block::emission_reg_reg: p.emission.reg_reg[e.a][e.b] = v; break;
        case Block::fp_intercept: p.fp_q.intercept = v; break;
        case Block::fp_effect: p.fp_q.effects[e.a][e.b] = v; break;
        case Block::mixing_logit: p.mixing_logits[e.a] = v; break;
    }
}

std::vector<double> ParameterSchema::pack(const Parameters& p) const {
    std::vector<double> x(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) x[i] = get(p, entries_[i]);
    return x;
}

void ParameterSchema::unpack(const std::vector<double>& x, Parameters& p) const {
    if (x.size() != entries_.size())
        throw config_error("parameter vector length " + std::to_string(x.size()) +
                           " does not match schema size " + std::to_string(entries_.size()));
    for (std::size_t i = 0; i < entries_.size(); ++i) set(p, entries_[i], x[i]);
}

Parameters ParameterSchema::unpack(const std::vector<double>& x) const {
    Parameters p = Parameters::zeros(*model_);
    unpack(x, p);
    return p;
}

} // namespace crhmm
