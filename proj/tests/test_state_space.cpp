#include "doctest.h"

#include <cmath>
#include <random>

#include "crhmm/rng.hpp"
#include "crhmm/state_space.hpp"

using namespace crhmm;

namespace {

LifeEventProbabilities draw_probs(std::mt19937_64& eng) {
    return {uniform01(eng), uniform01(eng), uniform01(eng), uniform01(eng)};
}

} // namespace

TEST_SUITE("state_space") {

TEST_CASE("logit probability block evaluates intercept plus matching effects") {
    CovariateScheme scheme({CovariateDimension{"sex", {"male", "female"}, 0}});
    CoefficientBlock block = CoefficientBlock::zeros(scheme);
    CHECK(block.probability(scheme, 0) == doctest::Approx(0.5).epsilon(1e-12));

    block.intercept = logit(0.996);
    CHECK(block.intercept == doctest::Approx(5.517453).epsilon(1e-6));
    block.effects[0][1] = 0.394;
    const int female = scheme.profile_id({1});
    CHECK(block.probability(scheme, female) == doctest::Approx(0.9972991).epsilon(1e-6));

    block.intercept = -50.0;
    block.effects[0][1] = 0.0;
    const double tiny = block.probability(scheme, 0);
    CHECK(tiny > 0.0);
    CHECK(tiny < 1e-20);
}

TEST_CASE("three-state matrix matches hand substitution") {
    auto cfg = StateSpaceConfig::general3();

    auto id = build_transition_matrix(cfg, {1.0, 0.0, 0.0, 0.0});
    CHECK(id(0, 0) == 1.0);
    CHECK(id(1, 1) == 1.0);
    CHECK(id(2, 2) == 1.0);
    CHECK(id(0, 1) == 0.0);

    auto m = build_transition_matrix(cfg, {0.9, 0.2, 0.5, 0.0});
    CHECK(m(0, 0) == doctest::Approx(0.72).epsilon(1e-12));
    CHECK(m(0, 1) == doctest::Approx(0.18).epsilon(1e-12));
    CHECK(m(0, 2) == doctest::Approx(0.10).epsilon(1e-12));
    CHECK(m(1, 0) == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(m(1, 1) == doctest::Approx(0.45).epsilon(1e-12));
    CHECK(m(1, 2) == doctest::Approx(0.10).epsilon(1e-12));

    auto dead = build_transition_matrix(cfg, {0.0, 0.3, 0.7, 0.0});
    for (int i = 0; i < 3; ++i) {
        CHECK(dead(i, 2) == 1.0);
        CHECK(dead(i, 0) == 0.0);
        CHECK(dead(i, 1) == 0.0);
    }

    CHECK_THROWS_AS(build_transition_matrix(cfg, {1.2, 0.0, 0.0, 0.0}), std::domain_error);
    CHECK_THROWS_AS(build_transition_matrix(cfg, {0.5, -0.1, 0.0, 0.0}), std::domain_error);
}

TEST_CASE("eight-state matrix matches hand substitution at the baseline") {
    auto cfg = StateSpaceConfig::sweden8();
    auto m = build_transition_matrix(cfg, {0.996, 0.481, 0.084, 0.529});
    // Row 1: survive-and-stay, recorded death, recorded emigration, silent
    // emigration; all other entries structurally zero.
    CHECK(m(0, 0) == doctest::Approx(0.516924).epsilon(1e-9));
    CHECK(m(0, 1) == doctest::Approx(0.004).epsilon(1e-12));
    CHECK(m(0, 2) == doctest::Approx(0.253431204).epsilon(1e-9));
    CHECK(m(0, 3) == 0.0);
    CHECK(m(0, 4) == doctest::Approx(0.225644796).epsilon(1e-9));
    for (int j = 5; j < 8; ++j) CHECK(m(0, j) == 0.0);

    // Rows 1 and 7 identical; rows 3 and 4 identical.
    for (int j = 0; j < 8; ++j) {
        CHECK(m(6, j) == m(0, j));
        CHECK(m(3, j) == m(2, j));
    }
    // Rows 2, 6, 8 are unit vectors onto the dead state.
    for (int i : {1, 5, 7}) {
        CHECK(m(i, 7) == 1.0);
        for (int j = 0; j < 7; ++j) CHECK(m(i, j) == 0.0);
    }
    // Abroad-unknown row returns directly to present, no re-registration.
    CHECK(m(4, 0) == doctest::Approx(0.996 * 0.084).epsilon(1e-12));
    CHECK(m(4, 4) == doctest::Approx(0.996 * 0.916).epsilon(1e-12));
    CHECK(m(4, 5) == doctest::Approx(0.004).epsilon(1e-12));
}

TEST_CASE("no emigration zeroes both emigration routes") {
    auto cfg = StateSpaceConfig::sweden8();
    auto m = build_transition_matrix(cfg, {0.9, 0.0, 0.3, 0.6});
    for (int i : {0, 6}) {
        CHECK(m(i, 2) == 0.0);
        CHECK(m(i, 4) == 0.0);
    }
}

TEST_CASE("row stochasticity, zero pattern and absorbing rows on random draws") {
    std::mt19937_64 eng(20240811);
    for (const auto& cfg : {StateSpaceConfig::general3(), StateSpaceConfig::sweden8()}) {
        for (int rep = 0; rep < 1000; ++rep) {
            auto m = build_transition_matrix(cfg, draw_probs(eng));
            for (int i = 0; i < cfg.size(); ++i) {
                double sum = 0.0;
                for (int j = 0; j < cfg.size(); ++j) {
                    const double v = m(i, j);
                    CHECK(v >= 0.0);
                    CHECK(v <= 1.0);
                    sum += v;
                    if (!cfg.transition_permitted(i, j)) CHECK(v == 0.0);
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
                if (cfg.is_absorbing(i))
                    for (int j = 0; j < cfg.size(); ++j)
                        CHECK(m(i, j) == (i == j ? 1.0 : 0.0));
                if (cfg.is_intermediate(i)) CHECK(m(i, i) == 0.0);
            }
        }
    }
}

TEST_CASE("emigration probability moves mass monotonically") {
    auto cfg = StateSpaceConfig::sweden8();
    double prev_out = -1.0, prev_stay = 2.0;
    for (double e : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        auto m = build_transition_matrix(cfg, {0.95, e, 0.2, 0.4});
        const double out = m(0, 2) + m(0, 4);
        CHECK(out > prev_out);
        CHECK(m(0, 0) < prev_stay);
        prev_out = out;
        prev_stay = m(0, 0);
    }
}

TEST_CASE("eight-state rows aggregate to the three-state rows by outcome") {
    // Outcome grouping: the present-type states {present, returned}, the
    // abroad states {emig-recorded, known, unknown}, and the dead states
    // {both death-recorded states, dead}. The one-year recording states
    // carry next year's register consequences, not a different demographic
    // fate, so aggregation must follow the outcome, not the register label.
    auto cfg8 = StateSpaceConfig::sweden8();
    auto cfg3 = StateSpaceConfig::general3();
    std::mt19937_64 eng(7);
    const int grp[8] = {0, 2, 1, 1, 1, 2, 0, 2};
    for (int rep = 0; rep < 200; ++rep) {
        LifeEventProbabilities p = draw_probs(eng);
        p.lambda = 1.0;
        auto m8 = build_transition_matrix(cfg8, p);
        auto m3 = build_transition_matrix(cfg3, p);
        for (int from8 : {0, 4}) { // present and silent-abroad rows
            double agg[3] = {0, 0, 0};
            for (int j = 0; j < 8; ++j) agg[grp[j]] += m8(from8, j);
            const int from3 = from8 == 0 ? 0 : 1;
            for (int j = 0; j < 3; ++j)
                CHECK(agg[j] == doctest::Approx(m3(from3, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("preset lookup and config validation") {
    CHECK(StateSpaceConfig::preset("general3").size() == 3);
    CHECK(StateSpaceConfig::preset("sweden8").size() == 8);
    CHECK_THROWS_AS(StateSpaceConfig::preset("sweden9"), config_error);

    auto bad = StateSpaceConfig::sweden8();
    bad.states[1].id = 1; // duplicate
    CHECK_THROWS_AS(bad.validate(), config_error);

    auto wrong_role = StateSpaceConfig::sweden8();
    wrong_role.absorbing_states.push_back(3);
    CHECK_THROWS_AS(wrong_role.validate(), config_error);

    auto missing = StateSpaceConfig::general3();
    missing.states[1].role = StateRole::present;
    CHECK_THROWS_AS(missing.validate(), config_error);

    CHECK(role_from_string("abroad_unknown") == StateRole::abroad_unknown);
    CHECK_THROWS_AS(role_from_string("limbo"), config_error);
}

} // TEST_SUITE
