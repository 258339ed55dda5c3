#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "crhmm/coefficients.hpp"
#include "crhmm/covariates.hpp"

namespace crhmm {

/// Structural role of a latent state. Roles drive both the transition
/// template and the emission channel attached to the state, so renaming a
/// state in a config file never changes model behaviour.
enum class StateRole {
    present,                   // alive, in the population, register-active
    present_death_recorded,    // died in the population, death certificate filed
    abroad_emigration_recorded,// left, emigration record filed this year
    abroad_known,              // abroad and correctly de-registered
    abroad_unknown,            // abroad but still on the register (overcoverage)
    abroad_death_recorded,     // died abroad, recording governed by phi_a
    returned_reregistered,     // re-entered, re-immigration record filed this year
    dead,                      // absorbing
};

const char* to_string(StateRole role);
StateRole role_from_string(const std::string& s);

/// Which transition template applies. The two templates cover a plain
/// three-state system (present / abroad / dead) and the eight-state system
/// with registration side-channels used for register data.
enum class StateSpaceKind { general3, sweden8 };

struct StateSpaceConfig {
    struct State {
        int id = 0; // 1-based, stable across serialization
        std::string label;
        StateRole role;
    };

    StateSpaceKind kind = StateSpaceKind::general3;
    std::vector<State> states;
    std::vector<int> absorbing_states;    // ids
    std::vector<int> intermediate_states; // ids; occupied for one year at most

    int size() const { return static_cast<int>(states.size()); }
    int index_of_role(StateRole role) const; // unique-role lookup, 0-based
    bool is_absorbing(int index) const;
    bool is_intermediate(int index) const;

    /// Transitions that can carry probability mass. Everything outside this
    /// mask is structurally zero for any parameter values.
    bool transition_permitted(int from, int to) const;

    void validate() const;

    static StateSpaceConfig general3();
    static StateSpaceConfig sweden8();
    static StateSpaceConfig preset(const std::string& name);
};

/// Logit-scale regression coefficients for the four life event
/// probabilities. Retention is survival in place; lambda splits emigration
/// between the correctly recorded route and the silent route.
struct LifeEventCoefficients {
    CoefficientBlock survival;        // s
    CoefficientBlock emigration;      // e
    CoefficientBlock return_home;     // r
    CoefficientBlock recorded_share;  // lambda, eight-state template only
};

struct LifeEventProbabilities {
    double s = 0.0;
    double e = 0.0;
    double r = 0.0;
    double lambda = 0.0;
};

LifeEventProbabilities life_event_probabilities(const LifeEventCoefficients& coeffs,
                                                const CovariateScheme& scheme,
                                                int profile);

/// Square row-stochastic matrix sized for at most eight states.
struct TransitionMatrix {
    int n = 0;
    std::array<double, 64> a{};

    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
};

/// Builds the one-year transition matrix for the given profile's life event
/// probabilities. Rows follow the config's state order.
TransitionMatrix build_transition_matrix(const StateSpaceConfig& config,
                                         const LifeEventProbabilities& p);

TransitionMatrix build_transition_matrix(const StateSpaceConfig& config,
                                         const LifeEventCoefficients& coeffs,
                                         const CovariateScheme& scheme, int profile);

} // namespace crhmm
