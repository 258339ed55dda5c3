#pragma once

#include <string>
#include <vector>

#include "crhmm/covariates.hpp"
#include "crhmm/emission.hpp"
#include "crhmm/state_space.hpp"

namespace crhmm {

/// Which covariate dimensions carry free effects in each logit block.
/// Dimensions not listed keep their effects fixed at zero.
struct EffectStructure {
    std::vector<int> survival_dims;
    std::vector<int> emigration_dims;
    std::vector<int> return_dims;
    std::vector<int> lambda_dims;
    std::vector<int> false_positive_dims;
};

/// Full model structure: everything except the numeric parameter values.
struct ModelSpec {
    StateSpaceConfig states;
    CovariateScheme scheme;
    EmissionDesign design;
    EffectStructure effects;
    EventRecordingProbabilities events;
    FalsePositiveSpec fp; // q coefficients inside are treated as parameters

    int groups() const { return design.groups; }
    void validate() const;
};

/// Structured parameter values matching a ModelSpec.
struct Parameters {
    LifeEventCoefficients life;
    EmissionCoefficients emission;
    CoefficientBlock fp_q;
    std::vector<double> mixing_logits; // size groups - 1, baseline is the last group

    static Parameters zeros(const ModelSpec& model);

    /// Mixing proportions via softmax against the baseline group; for two
    /// groups this is the inverse logit of the single free parameter.
    std::vector<double> mixing_proportions() const;
};

/// Ordered flat view of the free parameters with stable names. Structural
/// zeros (baseline categories, unused interaction cells) never appear.
class ParameterSchema {
public:
    explicit ParameterSchema(const ModelSpec& model);

    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }
    int index_of(const std::string& name) const; // -1 if absent

    std::vector<double> pack(const Parameters& p) const;
    void unpack(const std::vector<double>& x, Parameters& p) const;
    Parameters unpack(const std::vector<double>& x) const;

private:
    enum class Block {
        survival_intercept, survival_effect,
        emigration_intercept, emigration_effect,
        return_intercept, return_effect,
        lambda_intercept, lambda_effect,
        emission_main_shared, emission_main_group,
        emission_reg_cov, emission_reg_reg,
        fp_intercept, fp_effect,
        mixing_logit,
    };
    struct Entry {
        Block block;
        int a = 0, b = 0, c = 0;
    };

    const ModelSpec* model_;
    std::vector<std::string> names_;
    std::vector<Entry> entries_;

    double get(const Parameters& p, const Entry& e) const;
    void set(Parameters& p, const Entry& e, double v) const;
};

} // namespace crhmm
