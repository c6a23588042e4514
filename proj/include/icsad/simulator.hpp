#pragma once

// Synthetic water-treatment style plant.
//
// Tanks are connected by flows; each flow runs while its actuator (a valve or
// pump) is on. Every actuator is driven by one hysteresis rule on a level or
// analyzer value, optionally with a low-level interlock. One step is one
// second:
//   1. rules update actuators from the true state (attacks may override);
//   2. flows move volume, limited by what the source tank holds;
//   3. tanks clamp to [0, capacity], overflow is counted as spill;
//   4. analyzers drift toward their mean and react to dosing;
//   5. sensors record truth plus Gaussian noise (attacks may rewrite them).
// Actuator tags record 1 (off/closed) or 2 (on/open).

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "icsad/dataset.hpp"
#include "icsad/evaluation.hpp"
#include "icsad/time.hpp"

namespace icsad {

struct TankSpec {
    std::string level_tag;
    double capacity = 1000.0;
    double initial = 500.0;
};

struct ActuatorSpec {
    std::string tag;
    bool initially_on = false;
};

struct FlowSpec {
    std::string flow_tag;  // may be empty (flow not metered)
    std::string from;      // level tag of the source tank, empty = external source
    std::string to;        // level tag of the target tank, empty = sink
    std::string actuator;
    double rate = 1.0;      // units per second while the actuator is on
    double response = 1.0;  // fraction of the gap to the target closed per second, (0, 1]
};

struct AnalyzerSpec {
    std::string tag;
    double initial = 0.0;
    double mean = 0.0;
    double reversion = 0.0;   // pull toward mean per second
    double volatility = 0.0;  // random-walk step sd
    std::string dosing_actuator;
    double dosing_rate = 0.0;
    double range = 1.0;  // nominal span, scales the sensor noise
};

enum class RuleMode : std::uint8_t {
    fill,   // on below low, off above high
    drain,  // on above high, off below low
};

struct ControlRule {
    std::string actuator;
    std::string sensor;  // level or analyzer tag read as truth
    RuleMode mode = RuleMode::fill;
    double low = 0.0;
    double high = 0.0;
    std::string interlock;  // forces off while this value is below interlock_below
    double interlock_below = -std::numeric_limits<double>::infinity();
};

struct PlantSpec {
    std::vector<TankSpec> tanks;
    std::vector<ActuatorSpec> actuators;
    std::vector<FlowSpec> flows;
    std::vector<AnalyzerSpec> analyzers;
    std::vector<ControlRule> rules;
    double noise_fraction = 0.005;  // sensor sd as a fraction of the tag's range
    bool noise_free = false;
    std::uint64_t seed = 0;
    Timestamp start = from_epoch(1'450'800'000);

    /// Throws std::invalid_argument naming the first problem.
    void validate() const;
    /// Tag order: tanks' levels, flows, analyzers, actuators, then sorted by
    /// process with the order above kept inside a process.
    TagSchema schema() const;
};

/// Three processes of about six tags each, named like the SWaT testbed.
PlantSpec default_plant_spec(std::uint64_t seed = 0);

PlantSpec parse_plant_spec(std::string_view json_text);
PlantSpec load_plant_spec(const std::filesystem::path& path);
std::string plant_spec_to_json(const PlantSpec& spec);

enum class AttackKind : std::uint8_t {
    sensor_freeze,
    sensor_offset,
    sensor_spoof_constant,
    actuator_force_open,
    actuator_force_close,
};

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view text);
bool is_sensor_attack(AttackKind kind);

struct AttackStep {
    int id = 0;
    Timestamp start{};
    int duration = 120;  // seconds
    AttackKind kind = AttackKind::sensor_offset;
    std::string tag;
    double magnitude = 0.0;  // offset or spoofed value; unused otherwise

    Timestamp last_second() const { return start + Seconds{duration - 1}; }
};

struct AttackScript {
    std::vector<AttackStep> attacks;

    /// Durations >= 120 s, no overlap on one tag, kinds that fit the tag.
    void validate(const PlantSpec& spec) const;
    /// One label per attack covering its first to last attacked second.
    std::vector<AttackLabel> labels() const;
};

AttackScript parse_attack_script(std::string_view json_text);
AttackScript load_attack_script(const std::filesystem::path& path);
std::string attack_script_to_json(const AttackScript& script);

struct SimulationTrace {
    TagSeries series;         // recorded values and labels
    Eigen::MatrixXd truth;    // noise-free, unspoofed values, same columns
    Eigen::VectorXd source;   // cumulative volume drawn from external sources
    Eigen::VectorXd sink;     // cumulative volume delivered to sinks
    Eigen::VectorXd spilled;  // cumulative overflow
};

SimulationTrace simulate_trace(const PlantSpec& spec, std::size_t duration_s, const AttackScript& script = {});

/// Recorded series only.
TagSeries simulate(const PlantSpec& spec, std::size_t duration_s);

/// Re-runs the plant that produced `clean` with the script applied. The
/// noise stream is unchanged, so rows before the first attack match `clean`.
/// Throws if the script falls outside the series or fails validation.
TagSeries inject(const PlantSpec& spec, const TagSeries& clean, const AttackScript& script);

}  // namespace icsad
