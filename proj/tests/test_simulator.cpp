#include <Eigen/Core>

#include <stdexcept>
#include <string>

#include "doctest.h"
#include "icsad/simulator.hpp"

using namespace icsad;

namespace {

// One tank filled from outside at a fixed rate, valve always open.
const std::string kSingleTank = R"({
  "noise_free": true,
  "tanks": [{"level_tag": "LIT-101", "capacity": 1000, "initial": 100}],
  "actuators": [{"tag": "MV-101", "initially_on": true}],
  "flows": [{"flow_tag": "FIT-101", "to": "LIT-101", "actuator": "MV-101", "rate": 1, "response": 1}],
  "rules": [{"actuator": "MV-101", "sensor": "LIT-101", "mode": "fill", "low": 0, "high": 2000}]
})";

AttackStep step(int id, long long offset, int duration, AttackKind kind, std::string tag, double magnitude = 0.0) {
    AttackStep s;
    s.id = id;
    s.start = default_plant_spec().start + Seconds{offset};
    s.duration = duration;
    s.kind = kind;
    s.tag = std::move(tag);
    s.magnitude = magnitude;
    return s;
}

Eigen::Index col(const TagSeries& s, const std::string& tag) { return static_cast<Eigen::Index>(*s.schema.index_of(tag)); }

}  // namespace

TEST_CASE("single tank gains rate times seconds") {
    const auto spec = parse_plant_spec(kSingleTank);
    const auto s = simulate(spec, 20);
    CHECK(s.values(9, col(s, "LIT-101")) == 110.0);
    CHECK(s.values(0, col(s, "FIT-101")) == 1.0);
    CHECK(s.values(0, col(s, "MV-101")) == 2.0);
}

TEST_CASE("closed valve keeps the level") {
    auto spec = parse_plant_spec(kSingleTank);
    spec.actuators[0].initially_on = false;
    spec.rules[0].low = -10;
    spec.rules[0].high = 1;  // level 100 is above high: stays off
    const auto s = simulate(spec, 50);
    for (Eigen::Index t = 0; t < s.rows(); ++t) CHECK(s.values(t, col(s, "LIT-101")) == 100.0);
}

TEST_CASE("tank spills at capacity") {
    auto spec = parse_plant_spec(kSingleTank);
    spec.tanks[0].initial = 995;
    const auto tr = simulate_trace(spec, 10);
    CHECK(tr.series.values(9, col(tr.series, "LIT-101")) == 1000.0);
    CHECK(tr.spilled[9] == 5.0);
}

TEST_CASE("default plant conserves volume") {
    auto spec = default_plant_spec(3);
    const auto tr = simulate_trace(spec, 20000);
    double initial = 0.0;
    for (const auto& t : spec.tanks) initial += t.initial;
    for (Eigen::Index t = 0; t < tr.truth.rows(); t += 997) {
        double levels = 0.0;
        for (const auto& tank : spec.tanks) levels += tr.truth(t, col(tr.series, tank.level_tag));
        CHECK(levels + tr.sink[t] + tr.spilled[t] - tr.source[t] == doctest::Approx(initial).epsilon(1e-9));
    }
}

TEST_CASE("default plant stays in range and cycles its control loops") {
    const auto spec = default_plant_spec(11);
    const auto s = simulate(spec, 20000);
    CHECK(s.cols() == 16);
    CHECK(s.schema.process_ids() == std::vector<int>{1, 2, 3});
    for (const auto& tank : spec.tanks) {
        const auto c = col(s, tank.level_tag);
        CHECK(s.values.col(c).minCoeff() > 0.0);
        CHECK(s.values.col(c).maxCoeff() < tank.capacity);
    }
    for (Eigen::Index c = 0; c < s.cols(); ++c) {
        if (s.schema[static_cast<std::size_t>(c)].kind != TagKind::actuator) continue;
        CHECK((s.values.col(c).array() == 1.0 || s.values.col(c).array() == 2.0).all());
    }
    for (const char* tag : {"MV-101", "P-101", "MV-201", "P-201"}) {
        INFO(tag);
        CHECK(s.values.col(col(s, tag)).minCoeff() == 1.0);
        CHECK(s.values.col(col(s, tag)).maxCoeff() == 2.0);
    }
    // the overflow pump and the product pump never switch in normal operation
    CHECK(s.values.col(col(s, "P-102")).maxCoeff() == 1.0);
    CHECK(s.values.col(col(s, "P-301")).minCoeff() == 2.0);
}

TEST_CASE("same seed same data") {
    const auto a = simulate(default_plant_spec(7), 3000);
    const auto b = simulate(default_plant_spec(7), 3000);
    const auto c = simulate(default_plant_spec(8), 3000);
    CHECK(a.values == b.values);
    CHECK(a.timestamps == b.timestamps);
    CHECK_FALSE(a.values == c.values);
}

TEST_CASE("spoofed sensor records a constant while the truth moves") {
    const auto spec = default_plant_spec(1);
    AttackScript script{{step(1, 1000, 300, AttackKind::sensor_spoof_constant, "LIT-101", 950.0)}};
    const auto tr = simulate_trace(spec, 2000, script);
    const auto c = col(tr.series, "LIT-101");
    for (Eigen::Index t = 1000; t < 1300; ++t) CHECK(tr.series.values(t, c) == 950.0);
    CHECK(tr.truth.col(c).segment(1000, 300).maxCoeff() - tr.truth.col(c).segment(1000, 300).minCoeff() > 1.0);
    CHECK(tr.series.values(1300, c) != 950.0);
}

TEST_CASE("frozen sensor repeats its last reading") {
    const auto spec = default_plant_spec(1);
    AttackScript script{{step(1, 500, 200, AttackKind::sensor_freeze, "AIT-201")}};
    const auto clean = simulate(spec, 1000);
    const auto s = inject(spec, clean, script);
    const auto c = col(s, "AIT-201");
    for (Eigen::Index t = 500; t < 700; ++t) CHECK(s.values(t, c) == clean.values(499, c));
}

TEST_CASE("offset adds its magnitude to the recorded value") {
    const auto spec = default_plant_spec(1);
    AttackScript script{{step(1, 500, 120, AttackKind::sensor_offset, "LIT-301", 40.0)}};
    const auto tr = simulate_trace(spec, 1000, script);
    const auto clean = simulate(spec, 1000);
    const auto c = col(tr.series, "LIT-301");
    // the rules read the truth, so the plant does not react to the offset
    for (Eigen::Index t = 500; t < 620; ++t) CHECK(tr.series.values(t, c) == doctest::Approx(clean.values(t, c) + 40.0));
}

TEST_CASE("forcing P-301 closed stops FIT-302 after one step") {
    auto spec = default_plant_spec(1);
    spec.noise_free = true;
    const auto clean = simulate(spec, 4000);
    const auto p = col(clean, "P-301");
    Eigen::Index on = -1;
    for (Eigen::Index t = 200; t < clean.rows() - 200; ++t)
        if (clean.values(t, p) == 2.0 && clean.values(t + 150, p) == 2.0) {
            on = t;
            break;
        }
    REQUIRE(on >= 0);
    AttackScript script{{step(1, on, 150, AttackKind::actuator_force_close, "P-301")}};
    const auto s = inject(spec, clean, script);
    const auto f = col(s, "FIT-302");
    CHECK(clean.values(on, f) > 0.0);
    for (Eigen::Index t = on; t < on + 150; ++t) {
        CHECK(s.values(t, p) == 1.0);
        CHECK(s.values(t, f) == 0.0);
    }
}

TEST_CASE("forcing an actuator open records 2") {
    const auto spec = default_plant_spec(1);
    AttackScript script{{step(1, 300, 200, AttackKind::actuator_force_open, "P-102")}};
    const auto s = simulate_trace(spec, 1000, script).series;
    const auto c = col(s, "P-102");
    for (Eigen::Index t = 300; t < 500; ++t) CHECK(s.values(t, c) == 2.0);
}

TEST_CASE("empty script changes nothing") {
    const auto spec = default_plant_spec(2);
    const auto clean = simulate(spec, 2000);
    const auto s = inject(spec, clean, {});
    CHECK(s.values == clean.values);
    for (auto l : s.labels) CHECK(l == Label::normal);
}

TEST_CASE("labels mark exactly the attacked seconds and rows before the attack match") {
    const auto spec = default_plant_spec(2);
    AttackScript script{{step(1, 600, 120, AttackKind::sensor_offset, "FIT-101", 1.0),
                         step(2, 1000, 300, AttackKind::actuator_force_open, "MV-201")}};
    const auto clean = simulate(spec, 2000);
    const auto s = inject(spec, clean, script);
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
        const bool attacked = (t >= 600 && t < 720) || (t >= 1000 && t < 1300);
        CHECK((s.labels[static_cast<std::size_t>(t)] == Label::attack) == attacked);
    }
    CHECK(s.values.topRows(600) == clean.values.topRows(600));
    const auto labels = script.labels();
    REQUIRE(labels.size() == 2);
    CHECK(labels[0].start == spec.start + Seconds{600});
    CHECK(labels[0].end == spec.start + Seconds{719});
    CHECK(labels[1].target_tags == std::vector<std::string>{"MV-201"});
}

TEST_CASE("attack script validation") {
    const auto spec = default_plant_spec();
    SUBCASE("overlap on one tag") {
        AttackScript s{{step(1, 100, 200, AttackKind::sensor_offset, "LIT-101", 1),
                        step(2, 299, 200, AttackKind::sensor_freeze, "LIT-101")}};
        CHECK_THROWS_WITH_AS(s.validate(spec), doctest::Contains("overlap"), std::invalid_argument);
    }
    SUBCASE("back to back is fine") {
        AttackScript s{{step(1, 100, 200, AttackKind::sensor_offset, "LIT-101", 1),
                        step(2, 300, 200, AttackKind::sensor_freeze, "LIT-101")}};
        CHECK_NOTHROW(s.validate(spec));
    }
    SUBCASE("too short") {
        AttackScript s{{step(1, 100, 119, AttackKind::sensor_offset, "LIT-101", 1)}};
        CHECK_THROWS_WITH_AS(s.validate(spec), doctest::Contains("120"), std::invalid_argument);
    }
    SUBCASE("kind does not fit the tag") {
        AttackScript s{{step(1, 100, 200, AttackKind::actuator_force_open, "LIT-101")}};
        CHECK_THROWS_AS(s.validate(spec), std::invalid_argument);
        AttackScript t{{step(1, 100, 200, AttackKind::sensor_freeze, "P-101")}};
        CHECK_THROWS_AS(t.validate(spec), std::invalid_argument);
    }
    SUBCASE("unknown tag") {
        AttackScript s{{step(1, 100, 200, AttackKind::sensor_freeze, "LIT-999")}};
        CHECK_THROWS_AS(s.validate(spec), std::invalid_argument);
    }
    SUBCASE("outside the simulated range") {
        AttackScript s{{step(1, 900, 200, AttackKind::sensor_freeze, "LIT-101")}};
        CHECK_THROWS_AS(simulate_trace(spec, 1000, s), std::invalid_argument);
    }
}

TEST_CASE("plant spec validation") {
    SUBCASE("actuator without a rule") {
        auto spec = parse_plant_spec(kSingleTank);
        spec.rules.clear();
        CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    }
    SUBCASE("sensor named like an actuator") {
        auto spec = parse_plant_spec(kSingleTank);
        spec.tanks[0].level_tag = "P-101";
        CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    }
    SUBCASE("bad response") {
        auto spec = parse_plant_spec(kSingleTank);
        spec.flows[0].response = 0.0;
        CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    }
    SUBCASE("malformed json") { CHECK_THROWS_AS(parse_plant_spec("{\"tanks\": 3"), std::invalid_argument); }
}

TEST_CASE("spec and script JSON round trip") {
    const auto spec = default_plant_spec(42);
    const auto back = parse_plant_spec(plant_spec_to_json(spec));
    CHECK(plant_spec_to_json(back) == plant_spec_to_json(spec));
    CHECK(simulate(back, 500).values == simulate(spec, 500).values);

    AttackScript script{{step(1, 600, 120, AttackKind::sensor_offset, "FIT-101", 1.5),
                         step(2, 1000, 300, AttackKind::actuator_force_close, "MV-201")}};
    const auto parsed = parse_attack_script(attack_script_to_json(script));
    REQUIRE(parsed.attacks.size() == 2);
    CHECK(parsed.attacks[0].start == script.attacks[0].start);
    CHECK(parsed.attacks[0].magnitude == 1.5);
    CHECK(parsed.attacks[1].kind == AttackKind::actuator_force_close);
    CHECK(attack_script_to_json(parsed) == attack_script_to_json(script));
}

TEST_CASE("attack kinds parse") {
    CHECK(parse_attack_kind("sensor-freeze") == AttackKind::sensor_freeze);
    CHECK(to_string(AttackKind::actuator_force_open) == "actuator-force-open");
    CHECK_THROWS_AS(parse_attack_kind("explode"), std::invalid_argument);
}
