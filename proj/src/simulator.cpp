#include "icsad/simulator.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "text_util.hpp"

namespace icsad {

namespace {

using Json = nlohmann::ordered_json;

template <typename T>
T value_or(const Json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::string_view to_string(RuleMode m) { return m == RuleMode::fill ? "fill" : "drain"; }

RuleMode parse_rule_mode(std::string_view s) {
    if (s == "fill") return RuleMode::fill;
    if (s == "drain") return RuleMode::drain;
    throw std::invalid_argument("unknown rule mode '" + std::string(s) + "'");
}

}  // namespace

void PlantSpec::validate() const {
    std::set<std::string> tags;
    auto add_tag = [&](const std::string& tag, TagKind kind) {
        if (tag.empty()) throw std::invalid_argument("empty tag name in plant spec");
        if (!tags.insert(tag).second) throw std::invalid_argument("duplicate tag " + tag);
        if (!derive_process_id(tag)) throw std::invalid_argument("tag " + tag + " has no process number");
        if (auto guess = guess_tag_kind(tag); guess && *guess != kind)
            throw std::invalid_argument("tag " + tag + " is named like a " + std::string(to_string(*guess)));
    };
    std::set<std::string> tank_tags, actuator_tags, readable;
    for (const auto& t : tanks) {
        add_tag(t.level_tag, TagKind::sensor);
        if (!(t.capacity > 0.0)) throw std::invalid_argument("tank " + t.level_tag + ": capacity must be positive");
        if (t.initial < 0.0 || t.initial > t.capacity)
            throw std::invalid_argument("tank " + t.level_tag + ": initial level outside [0, capacity]");
        tank_tags.insert(t.level_tag);
        readable.insert(t.level_tag);
    }
    for (const auto& a : actuators) {
        add_tag(a.tag, TagKind::actuator);
        actuator_tags.insert(a.tag);
    }
    for (const auto& f : flows) {
        if (!f.flow_tag.empty()) add_tag(f.flow_tag, TagKind::sensor);
        if (!f.from.empty() && !tank_tags.contains(f.from)) throw std::invalid_argument("flow from unknown tank " + f.from);
        if (!f.to.empty() && !tank_tags.contains(f.to)) throw std::invalid_argument("flow to unknown tank " + f.to);
        if (!actuator_tags.contains(f.actuator)) throw std::invalid_argument("flow uses unknown actuator " + f.actuator);
        if (!(f.rate >= 0.0)) throw std::invalid_argument("flow rate must be >= 0");
        if (!(f.response > 0.0 && f.response <= 1.0)) throw std::invalid_argument("flow response must be in (0, 1]");
    }
    for (const auto& a : analyzers) {
        add_tag(a.tag, TagKind::sensor);
        if (!a.dosing_actuator.empty() && !actuator_tags.contains(a.dosing_actuator))
            throw std::invalid_argument("analyzer " + a.tag + " doses with unknown actuator " + a.dosing_actuator);
        if (!(a.range > 0.0)) throw std::invalid_argument("analyzer " + a.tag + ": range must be positive");
        readable.insert(a.tag);
    }
    std::map<std::string, int> rule_count;
    for (const auto& r : rules) {
        if (!actuator_tags.contains(r.actuator)) throw std::invalid_argument("rule for unknown actuator " + r.actuator);
        if (!readable.contains(r.sensor)) throw std::invalid_argument("rule reads unknown value " + r.sensor);
        if (!r.interlock.empty() && !readable.contains(r.interlock))
            throw std::invalid_argument("rule interlock reads unknown value " + r.interlock);
        if (!(r.low < r.high)) throw std::invalid_argument("rule for " + r.actuator + ": low must be below high");
        ++rule_count[r.actuator];
    }
    for (const auto& a : actuators)
        if (rule_count[a.tag] != 1)
            throw std::invalid_argument("actuator " + a.tag + " must be driven by exactly one rule");
    if (!(noise_fraction >= 0.0)) throw std::invalid_argument("noise fraction must be >= 0");
}

TagSchema PlantSpec::schema() const {
    std::vector<TagInfo> ordered;
    for (const auto& t : tanks) ordered.push_back({t.level_tag, TagKind::sensor, *derive_process_id(t.level_tag)});
    for (const auto& f : flows)
        if (!f.flow_tag.empty()) ordered.push_back({f.flow_tag, TagKind::sensor, *derive_process_id(f.flow_tag)});
    for (const auto& a : analyzers) ordered.push_back({a.tag, TagKind::sensor, *derive_process_id(a.tag)});
    for (const auto& a : actuators) ordered.push_back({a.tag, TagKind::actuator, *derive_process_id(a.tag)});
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const TagInfo& a, const TagInfo& b) { return a.process_id < b.process_id; });
    return TagSchema(std::move(ordered));
}

PlantSpec default_plant_spec(std::uint64_t seed) {
    PlantSpec s;
    s.seed = seed;
    s.tanks = {{"LIT-101", 1000.0, 600.0}, {"LIT-201", 1000.0, 500.0}, {"LIT-301", 1000.0, 400.0}};
    s.actuators = {{"MV-101", true}, {"P-101", false}, {"P-102", false},
                   {"MV-201", true}, {"P-201", false}, {"P-301", true}};
    s.flows = {
        {"FIT-101", "", "LIT-101", "MV-101", 5.0, 0.2},
        {"FIT-201", "LIT-101", "LIT-201", "P-101", 4.0, 1.0},
        {"", "LIT-101", "", "P-102", 3.0, 1.0},
        {"FIT-301", "LIT-201", "LIT-301", "MV-201", 4.5, 0.2},
        {"FIT-302", "LIT-301", "", "P-301", 3.5, 1.0},
    };
    s.analyzers = {
        {"AIT-101", 50.0, 50.0, 0.001, 0.05, "", 0.0, 20.0},
        {"AIT-201", 250.0, 200.0, 0.0005, 0.02, "P-201", 0.25, 100.0},
        {"AIT-301", 8.0, 8.0, 0.002, 0.01, "", 0.0, 4.0},
    };
    s.rules = {
        {"MV-101", "LIT-101", RuleMode::fill, 500.0, 800.0, "", -std::numeric_limits<double>::infinity()},
        {"P-101", "LIT-201", RuleMode::fill, 300.0, 800.0, "LIT-101", 150.0},
        {"P-102", "LIT-101", RuleMode::drain, 900.0, 950.0, "", -std::numeric_limits<double>::infinity()},
        {"MV-201", "LIT-301", RuleMode::fill, 400.0, 800.0, "LIT-201", 150.0},
        {"P-201", "AIT-201", RuleMode::fill, 240.0, 260.0, "", -std::numeric_limits<double>::infinity()},
        {"P-301", "LIT-301", RuleMode::drain, 200.0, 250.0, "", -std::numeric_limits<double>::infinity()},
    };
    return s;
}

std::string plant_spec_to_json(const PlantSpec& s) {
    Json j;
    j["seed"] = s.seed;
    j["start"] = format_timestamp(s.start);
    j["noise_fraction"] = s.noise_fraction;
    j["noise_free"] = s.noise_free;
    j["tanks"] = Json::array();
    for (const auto& t : s.tanks)
        j["tanks"].push_back({{"level_tag", t.level_tag}, {"capacity", t.capacity}, {"initial", t.initial}});
    j["actuators"] = Json::array();
    for (const auto& a : s.actuators) j["actuators"].push_back({{"tag", a.tag}, {"initially_on", a.initially_on}});
    j["flows"] = Json::array();
    for (const auto& f : s.flows)
        j["flows"].push_back({{"flow_tag", f.flow_tag}, {"from", f.from}, {"to", f.to}, {"actuator", f.actuator},
                              {"rate", f.rate}, {"response", f.response}});
    j["analyzers"] = Json::array();
    for (const auto& a : s.analyzers)
        j["analyzers"].push_back({{"tag", a.tag}, {"initial", a.initial}, {"mean", a.mean},
                                  {"reversion", a.reversion}, {"volatility", a.volatility},
                                  {"dosing_actuator", a.dosing_actuator}, {"dosing_rate", a.dosing_rate},
                                  {"range", a.range}});
    j["rules"] = Json::array();
    for (const auto& r : s.rules) {
        Json rule = {{"actuator", r.actuator}, {"sensor", r.sensor}, {"mode", to_string(r.mode)},
                     {"low", r.low}, {"high", r.high}};
        if (!r.interlock.empty()) {
            rule["interlock"] = r.interlock;
            rule["interlock_below"] = r.interlock_below;
        }
        j["rules"].push_back(rule);
    }
    return j.dump(2) + "\n";
}

PlantSpec parse_plant_spec(std::string_view text) {
    PlantSpec s;
    try {
        const auto j = Json::parse(text);
        s.seed = value_or<std::uint64_t>(j, "seed", 0);
        if (j.contains("start")) s.start = parse_timestamp(j.at("start").get<std::string>());
        s.noise_fraction = value_or(j, "noise_fraction", 0.005);
        s.noise_free = value_or(j, "noise_free", false);
        for (const auto& t : j.at("tanks"))
            s.tanks.push_back({t.at("level_tag").get<std::string>(), t.at("capacity").get<double>(),
                               t.at("initial").get<double>()});
        for (const auto& a : j.at("actuators"))
            s.actuators.push_back({a.at("tag").get<std::string>(), value_or(a, "initially_on", false)});
        for (const auto& f : j.at("flows"))
            s.flows.push_back({value_or<std::string>(f, "flow_tag", ""), value_or<std::string>(f, "from", ""),
                               value_or<std::string>(f, "to", ""), f.at("actuator").get<std::string>(),
                               f.at("rate").get<double>(), value_or(f, "response", 1.0)});
        if (j.contains("analyzers"))
            for (const auto& a : j.at("analyzers"))
                s.analyzers.push_back({a.at("tag").get<std::string>(), a.at("initial").get<double>(),
                                       value_or(a, "mean", a.at("initial").get<double>()),
                                       value_or(a, "reversion", 0.0), value_or(a, "volatility", 0.0),
                                       value_or<std::string>(a, "dosing_actuator", ""), value_or(a, "dosing_rate", 0.0),
                                       value_or(a, "range", 1.0)});
        for (const auto& r : j.at("rules"))
            s.rules.push_back({r.at("actuator").get<std::string>(), r.at("sensor").get<std::string>(),
                               parse_rule_mode(r.at("mode").get<std::string>()), r.at("low").get<double>(),
                               r.at("high").get<double>(), value_or<std::string>(r, "interlock", ""),
                               value_or(r, "interlock_below", -std::numeric_limits<double>::infinity())});
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("plant spec: ") + e.what());
    }
    s.validate();
    return s;
}

PlantSpec load_plant_spec(const std::filesystem::path& path) { return parse_plant_spec(detail::read_file(path)); }

std::string_view to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::sensor_freeze: return "sensor-freeze";
        case AttackKind::sensor_offset: return "sensor-offset";
        case AttackKind::sensor_spoof_constant: return "sensor-spoof-constant";
        case AttackKind::actuator_force_open: return "actuator-force-open";
        case AttackKind::actuator_force_close: return "actuator-force-close";
    }
    return "sensor-offset";
}

AttackKind parse_attack_kind(std::string_view text) {
    for (auto k : {AttackKind::sensor_freeze, AttackKind::sensor_offset, AttackKind::sensor_spoof_constant,
                   AttackKind::actuator_force_open, AttackKind::actuator_force_close})
        if (to_string(k) == text) return k;
    throw std::invalid_argument("unknown attack kind '" + std::string(text) + "'");
}

bool is_sensor_attack(AttackKind kind) {
    return kind == AttackKind::sensor_freeze || kind == AttackKind::sensor_offset ||
           kind == AttackKind::sensor_spoof_constant;
}

void AttackScript::validate(const PlantSpec& spec) const {
    const auto schema = spec.schema();
    std::set<int> ids;
    for (const auto& a : attacks) {
        const auto col = schema.index_of(a.tag);
        if (!col) throw std::invalid_argument("attack " + std::to_string(a.id) + " targets unknown tag " + a.tag);
        if (!ids.insert(a.id).second) throw std::invalid_argument("duplicate attack id " + std::to_string(a.id));
        if (a.duration < 120)
            throw std::invalid_argument("attack " + std::to_string(a.id) + " lasts less than 120 s");
        const bool sensor = schema[*col].kind == TagKind::sensor;
        if (sensor != is_sensor_attack(a.kind))
            throw std::invalid_argument("attack " + std::to_string(a.id) + ": " + std::string(to_string(a.kind)) +
                                        " cannot target " + a.tag);
        for (const auto& b : attacks)
            if (&a != &b && a.tag == b.tag && a.start <= b.last_second() && b.start <= a.last_second())
                throw std::invalid_argument("attacks " + std::to_string(a.id) + " and " + std::to_string(b.id) +
                                            " overlap on " + a.tag);
    }
}

std::vector<AttackLabel> AttackScript::labels() const {
    std::vector<AttackLabel> out;
    for (const auto& a : attacks) out.push_back({a.id, a.start, a.last_second(), {a.tag}, true});
    std::stable_sort(out.begin(), out.end(), [](const AttackLabel& x, const AttackLabel& y) { return x.start < y.start; });
    return out;
}

AttackScript parse_attack_script(std::string_view text) {
    AttackScript script;
    try {
        const auto j = Json::parse(text);
        int next_id = 1;
        for (const auto& a : j.at("attacks")) {
            AttackStep s;
            s.id = value_or(a, "id", next_id);
            next_id = s.id + 1;
            s.start = parse_timestamp(a.at("start").get<std::string>());
            s.duration = a.at("duration").get<int>();
            s.kind = parse_attack_kind(a.at("kind").get<std::string>());
            s.tag = a.at("tag").get<std::string>();
            s.magnitude = value_or(a, "magnitude", 0.0);
            script.attacks.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("attack script: ") + e.what());
    }
    return script;
}

AttackScript load_attack_script(const std::filesystem::path& path) {
    return parse_attack_script(detail::read_file(path));
}

std::string attack_script_to_json(const AttackScript& script) {
    Json j;
    j["attacks"] = Json::array();
    for (const auto& a : script.attacks)
        j["attacks"].push_back({{"id", a.id}, {"start", format_timestamp(a.start)}, {"duration", a.duration},
                                {"kind", to_string(a.kind)}, {"tag", a.tag}, {"magnitude", a.magnitude}});
    return j.dump(2) + "\n";
}

namespace {

struct Plant {
    const PlantSpec& spec;
    TagSchema schema;
    std::unordered_map<std::string, std::size_t> column;

    std::vector<double> level;
    std::vector<double> flow;
    std::vector<double> analyzer;
    std::vector<bool> on;
    std::unordered_map<std::string, std::size_t> tank_index, actuator_index, analyzer_index;

    explicit Plant(const PlantSpec& s) : spec(s), schema(s.schema()) {
        for (std::size_t i = 0; i < schema.size(); ++i) column[schema[i].name] = i;
        for (std::size_t i = 0; i < s.tanks.size(); ++i) {
            tank_index[s.tanks[i].level_tag] = i;
            level.push_back(s.tanks[i].initial);
        }
        for (std::size_t i = 0; i < s.actuators.size(); ++i) {
            actuator_index[s.actuators[i].tag] = i;
            on.push_back(s.actuators[i].initially_on);
        }
        for (std::size_t i = 0; i < s.analyzers.size(); ++i) {
            analyzer_index[s.analyzers[i].tag] = i;
            analyzer.push_back(s.analyzers[i].initial);
        }
        flow.assign(s.flows.size(), 0.0);
    }

    double read(const std::string& tag) const {
        if (auto it = tank_index.find(tag); it != tank_index.end()) return level[it->second];
        return analyzer[analyzer_index.at(tag)];
    }
};

}  // namespace

SimulationTrace simulate_trace(const PlantSpec& spec, std::size_t duration_s, const AttackScript& script) {
    spec.validate();
    if (duration_s < 1) throw std::invalid_argument("duration must be >= 1 s");
    script.validate(spec);

    Plant plant(spec);
    const auto& schema = plant.schema;
    const auto n = schema.size();
    const auto rows = static_cast<Eigen::Index>(duration_s);

    SimulationTrace trace;
    trace.series.schema = schema;
    trace.series.values.resize(rows, static_cast<Eigen::Index>(n));
    trace.series.labels.assign(duration_s, Label::normal);
    trace.truth.resize(rows, static_cast<Eigen::Index>(n));
    trace.source.resize(rows);
    trace.sink.resize(rows);
    trace.spilled.resize(rows);

    // Attack lookups by row.
    struct Active {
        const AttackStep* step;
        std::size_t col;
        long long first, last;
    };
    std::vector<Active> active;
    const auto t0 = to_epoch(spec.start);
    for (const auto& a : script.attacks) {
        const auto first = to_epoch(a.start) - t0;
        const auto last = to_epoch(a.last_second()) - t0;
        if (first < 0 || last >= static_cast<long long>(duration_s))
            throw std::invalid_argument("attack " + std::to_string(a.id) + " falls outside the simulated range");
        active.push_back({&a, plant.column.at(a.tag), first, last});
    }

    std::vector<double> range(n, 1.0);
    for (const auto& t : spec.tanks) range[plant.column.at(t.level_tag)] = t.capacity;
    for (const auto& f : spec.flows)
        if (!f.flow_tag.empty()) range[plant.column.at(f.flow_tag)] = std::max(f.rate, 1e-12);
    for (const auto& a : spec.analyzers) range[plant.column.at(a.tag)] = a.range;

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> frozen(n, 0.0);
    std::vector<double> prev_recorded(n, 0.0);
    double source = 0.0, sink = 0.0, spilled = 0.0;

    for (Eigen::Index t = 0; t < rows; ++t) {
        trace.series.timestamps.push_back(spec.start + Seconds{t});

        // 1. control
        for (const auto& r : spec.rules) {
            const auto idx = plant.actuator_index.at(r.actuator);
            const double v = plant.read(r.sensor);
            bool state = plant.on[idx];
            if (r.mode == RuleMode::fill) {
                if (v < r.low) state = true;
                if (v > r.high) state = false;
            } else {
                if (v > r.high) state = true;
                if (v < r.low) state = false;
            }
            if (!r.interlock.empty() && plant.read(r.interlock) < r.interlock_below) state = false;
            plant.on[idx] = state;
        }
        for (const auto& a : active) {
            if (t < a.first || t > a.last || is_sensor_attack(a.step->kind)) continue;
            plant.on[plant.actuator_index.at(a.step->tag)] = a.step->kind == AttackKind::actuator_force_open;
        }

        // 2-3. flows and tanks
        for (std::size_t i = 0; i < spec.flows.size(); ++i) {
            const auto& f = spec.flows[i];
            const double target = plant.on[plant.actuator_index.at(f.actuator)] ? f.rate : 0.0;
            double q = plant.flow[i] + f.response * (target - plant.flow[i]);
            if (!f.from.empty()) q = std::min(q, plant.level[plant.tank_index.at(f.from)]);
            q = std::max(q, 0.0);
            plant.flow[i] = q;
            if (f.from.empty())
                source += q;
            else
                plant.level[plant.tank_index.at(f.from)] -= q;
            if (f.to.empty())
                sink += q;
            else
                plant.level[plant.tank_index.at(f.to)] += q;
        }
        for (std::size_t i = 0; i < spec.tanks.size(); ++i) {
            auto& l = plant.level[i];
            if (l > spec.tanks[i].capacity) {
                spilled += l - spec.tanks[i].capacity;
                l = spec.tanks[i].capacity;
            }
            l = std::max(l, 0.0);
        }

        // 4. analyzers
        for (std::size_t i = 0; i < spec.analyzers.size(); ++i) {
            const auto& a = spec.analyzers[i];
            auto& x = plant.analyzer[i];
            x += a.reversion * (a.mean - x);
            if (!a.dosing_actuator.empty() && plant.on[plant.actuator_index.at(a.dosing_actuator)]) x += a.dosing_rate;
            if (!spec.noise_free) x += a.volatility * gauss(rng);
        }

        // 5. sensors
        for (std::size_t i = 0; i < spec.tanks.size(); ++i)
            trace.truth(t, static_cast<Eigen::Index>(plant.column.at(spec.tanks[i].level_tag))) = plant.level[i];
        for (std::size_t i = 0; i < spec.flows.size(); ++i)
            if (!spec.flows[i].flow_tag.empty())
                trace.truth(t, static_cast<Eigen::Index>(plant.column.at(spec.flows[i].flow_tag))) = plant.flow[i];
        for (std::size_t i = 0; i < spec.analyzers.size(); ++i)
            trace.truth(t, static_cast<Eigen::Index>(plant.column.at(spec.analyzers[i].tag))) = plant.analyzer[i];
        for (std::size_t i = 0; i < spec.actuators.size(); ++i)
            trace.truth(t, static_cast<Eigen::Index>(plant.column.at(spec.actuators[i].tag))) = plant.on[i] ? 2.0 : 1.0;

        for (std::size_t c = 0; c < n; ++c) {
            double v = trace.truth(t, static_cast<Eigen::Index>(c));
            if (schema[c].kind == TagKind::sensor && !spec.noise_free)
                v += spec.noise_fraction * range[c] * gauss(rng);
            trace.series.values(t, static_cast<Eigen::Index>(c)) = v;
        }
        for (const auto& a : active) {
            if (t < a.first || t > a.last) continue;
            trace.series.labels[static_cast<std::size_t>(t)] = Label::attack;
            const auto c = static_cast<Eigen::Index>(a.col);
            auto& v = trace.series.values(t, c);
            switch (a.step->kind) {
                case AttackKind::sensor_freeze:
                    if (t == a.first) frozen[a.col] = t > 0 ? prev_recorded[a.col] : v;
                    v = frozen[a.col];
                    break;
                case AttackKind::sensor_offset: v += a.step->magnitude; break;
                case AttackKind::sensor_spoof_constant: v = a.step->magnitude; break;
                default: break;
            }
        }
        for (std::size_t c = 0; c < n; ++c) prev_recorded[c] = trace.series.values(t, static_cast<Eigen::Index>(c));

        trace.source[t] = source;
        trace.sink[t] = sink;
        trace.spilled[t] = spilled;
    }
    return trace;
}

TagSeries simulate(const PlantSpec& spec, std::size_t duration_s) { return simulate_trace(spec, duration_s).series; }

TagSeries inject(const PlantSpec& spec, const TagSeries& clean, const AttackScript& script) {
    if (clean.rows() == 0) throw std::invalid_argument("cannot inject into an empty series");
    if (clean.timestamps.front() != spec.start || !(clean.schema == spec.schema()))
        throw std::invalid_argument("series was not produced by this plant spec");
    return simulate_trace(spec, clean.rows(), script).series;
}

}  // namespace icsad
