#pragma once

#include <cmath>
#include <vector>

#include "crhmm/covariates.hpp"

namespace crhmm {

inline double inv_logit(double x) {
    // Split to avoid overflow in exp for large |x|.
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Additive effects on a linear (logit) scale: an intercept plus one effect
/// per non-baseline category of each covariate dimension. Baseline entries
/// are structurally zero and are never free parameters.
struct CoefficientBlock {
    double intercept = 0.0;
    std::vector<std::vector<double>> effects; // [dim][category], baseline fixed at 0

    static CoefficientBlock zeros(const CovariateScheme& scheme) {
        CoefficientBlock b;
        b.effects.resize(scheme.dim_count());
        for (int d = 0; d < scheme.dim_count(); ++d)
            b.effects[d].assign(scheme.dims()[d].categories.size(), 0.0);
        return b;
    }

    double linear_predictor(const CovariateScheme& scheme, int profile) const {
        double lp = intercept;
        for (int d = 0; d < static_cast<int>(effects.size()); ++d)
            lp += effects[d][scheme.category_of(profile, d)];
        return lp;
    }

    double probability(const CovariateScheme& scheme, int profile) const {
        return inv_logit(linear_predictor(scheme, profile));
    }
};

} // namespace crhmm
