#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crhmm/coefficients.hpp"
#include "crhmm/covariates.hpp"
#include "crhmm/state_space.hpp"

namespace crhmm {

/// Life event annotation carried by an observation in addition to the
/// register pattern. Emigration and death records imply an all-zero pattern;
/// a re-immigration record can co-occur with any pattern.
enum class EventFlag : std::uint8_t { none = 0, emigration = 1, death = 2, reimmigration = 3 };

/// One observation category: which of the K registers fired (bitmask, bit k
/// is register k) plus the event flag. With K registers there are
/// 2 * 2^K + 2 valid categories.
struct ObservationCategory {
    std::uint32_t pattern = 0;
    EventFlag flag = EventFlag::none;

    bool operator==(const ObservationCategory&) const = default;
};

inline constexpr int kMaxRegisters = 20; // keeps 2^K enumerable

int category_count(int K);
std::uint32_t encode_category(ObservationCategory cat, int K);
ObservationCategory decode_category(std::uint32_t code, int K);
bool category_valid(ObservationCategory cat, int K);
std::vector<ObservationCategory> enumerate_categories(int K);

/// Structure of the register observation model: which registers exist,
/// which interaction blocks are active, and which registers get a
/// group-specific main effect under a mixture.
struct EmissionDesign {
    std::vector<std::string> registers;
    bool register_covariate_interactions = true;
    bool register_register_interactions = true;
    std::vector<std::uint8_t> group_specific; // per register
    int groups = 1;

    int K() const { return static_cast<int>(registers.size()); }
    void validate(const CovariateScheme& scheme) const;
    int register_index(const std::string& name) const;
};

/// Coefficients of the multicategory logit over register patterns. The
/// linear predictor of a pattern sums, over its active registers, the
/// register main effect (per group where group-specific), the
/// register-by-covariate effects for the profile, and the pairwise
/// register-by-register effects among active registers. Covariate main
/// effects are omitted: within a profile they shift every pattern equally
/// and cancel in the softmax.
struct EmissionCoefficients {
    std::vector<std::vector<double>> main;                 // [group][register]
    std::vector<std::vector<std::vector<double>>> reg_cov; // [register][dim][category]
    std::vector<std::vector<double>> reg_reg;              // [K][K], k<l entries used

    static EmissionCoefficients zeros(const EmissionDesign& design,
                                      const CovariateScheme& scheme);
};

/// False positive channel: a register pattern that can fire while the
/// individual is abroad or dead, with probability q on a logit scale.
struct FalsePositiveSpec {
    bool enabled = false;
    std::uint32_t pattern = 0;
    CoefficientBlock q;

    void validate(int K) const;
};

/// Recording probabilities for life event registrations. These are fixed
/// model constants, not estimated parameters: the register application pins
/// emigration and re-immigration records as certain, in-population deaths
/// as always recorded and abroad deaths as never recorded.
struct EventRecordingProbabilities {
    double psi_emigration = 1.0;
    double psi_reimmigration = 1.0;
    double phi_present_death = 1.0;
    double phi_abroad_death = 0.0;

    void validate() const;
};

/// Softmax probabilities over all 2^K register patterns for one mixture
/// group and covariate profile; out is resized to 2^K.
void pattern_probabilities(const EmissionDesign& design, const EmissionCoefficients& coeffs,
                           const CovariateScheme& scheme, int group, int profile,
                           std::vector<double>& out);

double false_positive_probability(const FalsePositiveSpec& fp, const CovariateScheme& scheme,
                                  int profile);

/// Probability that register k is active, summed over patterns.
double marginal_register_probability(const std::vector<double>& pattern_probs, int register_index);

/// Two-group mixture marginal: pi * m1 + (1 - pi) * m2.
double mixture_marginal(double pi, double m1, double m2);

/// General mixture marginal: sum of pi[g] * marginals[g] over groups.
double mixture_marginal(std::span<const double> pi, std::span<const double> marginals);

/// Emission probabilities for one observation category across all states of
/// the config, writing into out[0..S). pattern_probs is the softmax table
/// for the relevant group and profile, q the false positive probability for
/// the profile. The dead state uses the false positive channel only under
/// the eight-state template.
void emission_vector(const StateSpaceConfig& config, const EventRecordingProbabilities& events,
                     const FalsePositiveSpec& fp, const std::vector<double>& pattern_probs,
                     double q, ObservationCategory cat, double* out);

} // namespace crhmm
