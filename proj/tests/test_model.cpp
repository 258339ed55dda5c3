#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "support.hpp"

#include "crhmm/model.hpp"

using namespace crhmm;
using crhmm::testing::Instance;
using crhmm::testing::InstanceOptions;
using crhmm::testing::random_instance;

TEST_SUITE("model") {

TEST_CASE("flat parameter vector round-trips through the schema") {
    std::mt19937_64 eng(41);
    InstanceOptions opt;
    opt.kind = StateSpaceKind::sweden8;
    opt.K = 3;
    opt.groups = 2;
    opt.fp = true;
    Instance inst = random_instance(eng, opt);
    const ParameterSchema schema(inst.model);

    const std::vector<double> x = schema.pack(inst.params);
    REQUIRE(static_cast<int>(x.size()) == schema.size());

    const Parameters back = schema.unpack(x);
    const std::vector<double> x2 = schema.pack(back);
    REQUIRE(x2.size() == x.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == x2[i]);

    CHECK(back.life.survival.intercept == inst.params.life.survival.intercept);
    CHECK(back.life.emigration.effects[0][1] == inst.params.life.emigration.effects[0][1]);
    CHECK(back.emission.main[0][0] == inst.params.emission.main[0][0]);
    CHECK(back.emission.main[1][0] == inst.params.emission.main[1][0]);
    CHECK(back.emission.reg_reg[0][2] == inst.params.emission.reg_reg[0][2]);
    CHECK(back.fp_q.intercept == inst.params.fp_q.intercept);
    CHECK(back.mixing_logits[0] == inst.params.mixing_logits[0]);
}

TEST_CASE("schema names are stable and indexable") {
    std::mt19937_64 eng(42);
    InstanceOptions opt;
    opt.kind = StateSpaceKind::sweden8;
    opt.K = 2;
    opt.groups = 2;
    opt.fp = true;
    Instance inst = random_instance(eng, opt);
    const ParameterSchema schema(inst.model);

    const auto& names = schema.names();
    std::set<std::string> unique(names.begin(), names.end());
    CHECK(unique.size() == names.size());

    // Life event blocks: intercepts plus the non-baseline sex effect.
    for (const char* expected :
         {"s.intercept", "s.sex.f", "e.intercept", "e.sex.f", "r.intercept", "r.sex.f",
          "lambda.intercept", "emission.reg0.main.g1", "emission.reg0.main.g2",
          "emission.reg1.main", "emission.reg0.x.sex.f", "emission.reg1.x.sex.f",
          "emission.reg0.x.reg1", "fp.intercept", "fp.sex.f", "mixture.logit.g1"}) {
        INFO("expected name: " << expected);
        const int idx = schema.index_of(expected);
        REQUIRE(idx >= 0);
        CHECK(names[static_cast<std::size_t>(idx)] == expected);
    }
    CHECK(schema.index_of("no.such.parameter") == -1);
    // Everything accounted for: 6 life effects + lambda + 3 mains + 2
    // register-by-sex + 1 register pair + 2 false positive + 1 mixing.
    CHECK(schema.size() == 16);

    SUBCASE("single coordinate edits land on the right structured field") {
        std::vector<double> x = schema.pack(inst.params);
        x[static_cast<std::size_t>(schema.index_of("s.intercept"))] = 3.25;
        const Parameters p = schema.unpack(x);
        CHECK(p.life.survival.intercept == 3.25);
        CHECK(p.life.emigration.intercept == inst.params.life.emigration.intercept);
    }
}

TEST_CASE("general three-state schema omits the recording split") {
    std::mt19937_64 eng(43);
    InstanceOptions opt;
    opt.kind = StateSpaceKind::general3;
    opt.K = 1;
    opt.fp = false;
    opt.covariates = false;
    Instance inst = random_instance(eng, opt);
    const ParameterSchema schema(inst.model);
    CHECK(schema.index_of("lambda.intercept") == -1);
    CHECK(schema.index_of("fp.intercept") == -1);
    CHECK(schema.index_of("mixture.logit.g1") == -1);
    // Three intercepts plus one emission main.
    CHECK(schema.size() == 4);
}

TEST_CASE("shared emission mains are mirrored into every group on unpack") {
    std::mt19937_64 eng(44);
    InstanceOptions opt;
    opt.kind = StateSpaceKind::sweden8;
    opt.K = 2;
    opt.groups = 3;
    Instance inst = random_instance(eng, opt);
    const ParameterSchema schema(inst.model);

    std::vector<double> x = schema.pack(inst.params);
    x[static_cast<std::size_t>(schema.index_of("emission.reg1.main"))] = -0.875;
    const Parameters p = schema.unpack(x);
    for (int g = 0; g < 3; ++g) CHECK(p.emission.main[g][1] == -0.875);
}

TEST_CASE("mixing proportions reduce to the inverse logit for two groups") {
    std::mt19937_64 eng(45);
    InstanceOptions opt;
    opt.groups = 2;
    Instance inst = random_instance(eng, opt);
    inst.params.mixing_logits[0] = 0.75;
    const auto pi = inst.params.mixing_proportions();
    REQUIRE(pi.size() == 2);
    CHECK(pi[0] == doctest::Approx(inv_logit(0.75)).epsilon(1e-14));
    CHECK(pi[0] + pi[1] == doctest::Approx(1.0).epsilon(1e-14));

    SUBCASE("three groups follow the softmax with the last group as baseline") {
        opt.groups = 3;
        Instance inst3 = random_instance(eng, opt);
        inst3.params.mixing_logits = {0.4, -1.1};
        const auto pi3 = inst3.params.mixing_proportions();
        const double denom = std::exp(0.4) + std::exp(-1.1) + 1.0;
        CHECK(pi3[0] == doctest::Approx(std::exp(0.4) / denom).epsilon(1e-14));
        CHECK(pi3[1] == doctest::Approx(std::exp(-1.1) / denom).epsilon(1e-14));
        CHECK(pi3[2] == doctest::Approx(1.0 / denom).epsilon(1e-14));
    }
}

TEST_CASE("model validation rejects inconsistent structures") {
    std::mt19937_64 eng(46);
    Instance inst = random_instance(eng, InstanceOptions{});

    SUBCASE("lambda effects on the three-state template") {
        ModelSpec bad = inst.model;
        bad.states = StateSpaceConfig::general3();
        bad.fp.enabled = false;
        bad.effects.lambda_dims = {0};
        CHECK_THROWS_AS(bad.validate(), config_error);
    }
    SUBCASE("group-specific registers without a mixture") {
        ModelSpec bad = inst.model;
        bad.design.groups = 1;
        bad.design.group_specific.assign(bad.design.registers.size(), 1);
        CHECK_THROWS_AS(bad.validate(), config_error);
    }
    SUBCASE("effect dimension out of range") {
        ModelSpec bad = inst.model;
        bad.effects.survival_dims = {7};
        CHECK_THROWS_AS(bad.validate(), config_error);
    }
}

} // TEST_SUITE
