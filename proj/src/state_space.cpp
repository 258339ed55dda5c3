#include "crhmm/state_space.hpp"

#include <algorithm>

namespace crhmm {

const char* to_string(StateRole role) {
    switch (role) {
        case StateRole::present: return "present";
        case StateRole::present_death_recorded: return "present_death_recorded";
        case StateRole::abroad_emigration_recorded: return "abroad_emigration_recorded";
        case StateRole::abroad_known: return "abroad_known";
        case StateRole::abroad_unknown: return "abroad_unknown";
        case StateRole::abroad_death_recorded: return "abroad_death_recorded";
        case StateRole::returned_reregistered: return "returned_reregistered";
        case StateRole::dead: return "dead";
    }
    return "?";
}

StateRole role_from_string(const std::string& s) {
    for (StateRole r : {StateRole::present, StateRole::present_death_recorded,
                        StateRole::abroad_emigration_recorded, StateRole::abroad_known,
                        StateRole::abroad_unknown, StateRole::abroad_death_recorded,
                        StateRole::returned_reregistered, StateRole::dead}) {
        if (s == to_string(r)) return r;
    }
    throw config_error("unknown state role '" + s + "'");
}

int StateSpaceConfig::index_of_role(StateRole role) const {
    for (int i = 0; i < size(); ++i)
        if (states[i].role == role) return i;
    throw config_error(std::string("state space has no state with role '") +
                       to_string(role) + "'");
}

bool StateSpaceConfig::is_absorbing(int index) const {
    int id = states[index].id;
    return std::find(absorbing_states.begin(), absorbing_states.end(), id) !=
           absorbing_states.end();
}

bool StateSpaceConfig::is_intermediate(int index) const {
    int id = states[index].id;
    return std::find(intermediate_states.begin(), intermediate_states.end(), id) !=
           intermediate_states.end();
}

namespace {

// Structurally reachable target roles, independent of parameter values.
bool role_transition_permitted(StateSpaceKind kind, StateRole from, StateRole to) {
    using R = StateRole;
    if (kind == StateSpaceKind::general3) {
        if (from == R::dead) return to == R::dead;
        return true; // present and abroad reach everything in the 3-state system
    }
    switch (from) {
        case R::present:
        case R::returned_reregistered:
            return to == R::present || to == R::present_death_recorded ||
                   to == R::abroad_emigration_recorded || to == R::abroad_unknown;
        case R::abroad_emigration_recorded:
        case R::abroad_known:
            return to == R::abroad_known || to == R::abroad_death_recorded ||
                   to == R::returned_reregistered;
        case R::abroad_unknown:
            return to == R::present || to == R::abroad_unknown ||
                   to == R::abroad_death_recorded;
        case R::present_death_recorded:
        case R::abroad_death_recorded:
        case R::dead:
            return to == R::dead;
    }
    return false;
}

} // namespace

bool StateSpaceConfig::transition_permitted(int from, int to) const {
    return role_transition_permitted(kind, states[from].role, states[to].role);
}

void StateSpaceConfig::validate() const {
    if (states.empty()) throw config_error("state space has no states");
    std::vector<int> ids;
    for (const auto& s : states) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = 1; i < ids.size(); ++i)
        if (ids[i] == ids[i - 1])
            throw config_error("duplicate state id " + std::to_string(ids[i]));

    auto count_role = [&](StateRole r) {
        int c = 0;
        for (const auto& s : states)
            if (s.role == r) ++c;
        return c;
    };
    auto require_one = [&](StateRole r) {
        if (count_role(r) != 1)
            throw config_error(std::string("state space needs exactly one '") +
                               to_string(r) + "' state");
    };

    if (kind == StateSpaceKind::general3) {
        if (size() != 3) throw config_error("three-state template needs 3 states");
        require_one(StateRole::present);
        require_one(StateRole::abroad_unknown);
        require_one(StateRole::dead);
    } else {
        if (size() != 8) throw config_error("eight-state template needs 8 states");
        for (StateRole r : {StateRole::present, StateRole::present_death_recorded,
                            StateRole::abroad_emigration_recorded, StateRole::abroad_known,
                            StateRole::abroad_unknown, StateRole::abroad_death_recorded,
                            StateRole::returned_reregistered, StateRole::dead})
            require_one(r);
    }

    for (int id : absorbing_states) {
        auto it = std::find_if(states.begin(), states.end(),
                               [&](const State& s) { return s.id == id; });
        if (it == states.end())
            throw config_error("absorbing state id " + std::to_string(id) +
                               " is not a declared state");
        if (it->role != StateRole::dead)
            throw config_error("state " + std::to_string(id) +
                               " is declared absorbing but its role is not absorbing");
    }
    if (std::find(absorbing_states.begin(), absorbing_states.end(),
                  states[index_of_role(StateRole::dead)].id) == absorbing_states.end())
        throw config_error("the dead state must be declared absorbing");

    for (int id : intermediate_states) {
        auto it = std::find_if(states.begin(), states.end(),
                               [&](const State& s) { return s.id == id; });
        if (it == states.end())
            throw config_error("intermediate state id " + std::to_string(id) +
                               " is not a declared state");
        switch (it->role) {
            case StateRole::present_death_recorded:
            case StateRole::abroad_emigration_recorded:
            case StateRole::abroad_death_recorded:
            case StateRole::returned_reregistered:
                break;
            default:
                throw config_error("state " + std::to_string(id) +
                                   " cannot be intermediate given its role");
        }
    }
}

StateSpaceConfig StateSpaceConfig::general3() {
    StateSpaceConfig c;
    c.kind = StateSpaceKind::general3;
    c.states = {{1, "present", StateRole::present},
                {2, "abroad", StateRole::abroad_unknown},
                {3, "dead", StateRole::dead}};
    c.absorbing_states = {3};
    c.validate();
    return c;
}

StateSpaceConfig StateSpaceConfig::sweden8() {
    StateSpaceConfig c;
    c.kind = StateSpaceKind::sweden8;
    c.states = {{1, "present", StateRole::present},
                {2, "present_death_recorded", StateRole::present_death_recorded},
                {3, "abroad_emigration_recorded", StateRole::abroad_emigration_recorded},
                {4, "abroad_known", StateRole::abroad_known},
                {5, "abroad_unknown", StateRole::abroad_unknown},
                {6, "abroad_death_recorded", StateRole::abroad_death_recorded},
                {7, "returned_reregistered", StateRole::returned_reregistered},
                {8, "dead", StateRole::dead}};
    c.absorbing_states = {8};
    c.intermediate_states = {2, 3, 6, 7};
    c.validate();
    return c;
}

StateSpaceConfig StateSpaceConfig::preset(const std::string& name) {
    if (name == "general3") return general3();
    if (name == "sweden8") return sweden8();
    throw config_error("unknown state space preset '" + name + "'");
}

LifeEventProbabilities life_event_probabilities(const LifeEventCoefficients& coeffs,
                                                const CovariateScheme& scheme,
                                                int profile) {
    LifeEventProbabilities p;
    p.s = coeffs.survival.probability(scheme, profile);
    p.e = coeffs.emigration.probability(scheme, profile);
    p.r = coeffs.return_home.probability(scheme, profile);
    p.lambda = coeffs.recorded_share.probability(scheme, profile);
    return p;
}

TransitionMatrix build_transition_matrix(const StateSpaceConfig& config,
                                         const LifeEventProbabilities& p) {
    using R = StateRole;
    auto check = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0))
            throw std::domain_error(std::string("life event probability ") + name +
                                    " outside [0, 1]");
    };
    check(p.s, "s");
    check(p.e, "e");
    check(p.r, "r");
    if (config.kind == StateSpaceKind::sweden8) check(p.lambda, "lambda");
    TransitionMatrix m;
    m.n = config.size();
    m.a.fill(0.0);

    if (config.kind == StateSpaceKind::general3) {
        int pr = config.index_of_role(R::present);
        int ab = config.index_of_role(R::abroad_unknown);
        int de = config.index_of_role(R::dead);
        m(pr, pr) = p.s * (1.0 - p.e);
        m(pr, ab) = p.s * p.e;
        m(pr, de) = 1.0 - p.s;
        m(ab, pr) = p.s * p.r;
        m(ab, ab) = p.s * (1.0 - p.r);
        m(ab, de) = 1.0 - p.s;
        m(de, de) = 1.0;
        return m;
    }

    int pr = config.index_of_role(R::present);
    int pdr = config.index_of_role(R::present_death_recorded);
    int aer = config.index_of_role(R::abroad_emigration_recorded);
    int akn = config.index_of_role(R::abroad_known);
    int aun = config.index_of_role(R::abroad_unknown);
    int adr = config.index_of_role(R::abroad_death_recorded);
    int ret = config.index_of_role(R::returned_reregistered);
    int de = config.index_of_role(R::dead);

    // Emigration splits by lambda between the recorded route and the silent
    // route that leaves the register entry behind.
    for (int from : {pr, ret}) {
        m(from, pr) = p.s * (1.0 - p.e);
        m(from, pdr) = 1.0 - p.s;
        m(from, aer) = p.lambda * p.s * p.e;
        m(from, aun) = (1.0 - p.lambda) * p.s * p.e;
    }
    for (int from : {aer, akn}) {
        m(from, akn) = p.s * (1.0 - p.r);
        m(from, adr) = 1.0 - p.s;
        m(from, ret) = p.s * p.r;
    }
    m(aun, pr) = p.s * p.r;
    m(aun, aun) = p.s * (1.0 - p.r);
    m(aun, adr) = 1.0 - p.s;
    for (int from : {pdr, adr, de}) m(from, de) = 1.0;
    return m;
}

TransitionMatrix build_transition_matrix(const StateSpaceConfig& config,
                                         const LifeEventCoefficients& coeffs,
                                         const CovariateScheme& scheme, int profile) {
    return build_transition_matrix(config, life_event_probabilities(coeffs, scheme, profile));
}

} // namespace crhmm
