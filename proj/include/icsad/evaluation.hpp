#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "icsad/decision.hpp"
#include "icsad/time.hpp"

namespace icsad {

struct AttackLabel {
    int id = 0;
    Timestamp start{};
    Timestamp end{};
    std::vector<std::string> target_tags;
    bool expected_detectable = true;

    /// Process ids derived from the target tag names.
    std::vector<int> target_processes() const;
    bool targets_process(int process_id) const;
    void validate() const;
};

/// CSV "id,start,end,tags,expected_detectable"; tags are ';'-separated and
/// the header line is optional.
std::vector<AttackLabel> parse_labels_csv(std::string_view text);
std::vector<AttackLabel> load_labels(const std::filesystem::path& path);
std::string labels_to_csv(std::span<const AttackLabel> labels);
void write_labels(const std::filesystem::path& path, std::span<const AttackLabel> labels);

/// Alerts or labels that fall outside the evaluated time range.
class ClockMismatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct EvalConfig {
    Seconds grace = std::chrono::minutes{15};
    /// How long after the grace window an alert still counts as a long tail.
    Seconds long_tail = std::chrono::minutes{60};
    /// Unmatched alerts of one process closer than this form one TFP.
    Seconds tfp_merge_gap = std::chrono::minutes{15};
    /// Time range the alerts were produced on; checked when set.
    std::optional<std::pair<Timestamp, Timestamp>> window;
};

enum class AlertClass : std::uint8_t { tp, op, lt, tfp };
std::string_view to_string(AlertClass c);

enum class PointResult : std::uint8_t { none, first, second };
std::string_view to_string(PointResult r);

struct AttackRow {
    AttackLabel label;
    Confidence detected = Confidence::no;
    double rating = 0.0;
    std::vector<std::string> attributed_tags;
    PointResult point = PointResult::none;
};

struct ClassifiedAlert {
    AlertEvent alert;
    AlertClass cls = AlertClass::tfp;
    std::optional<int> attack_id;
    std::size_t group = 0;  // index into EvaluationReport::false_positives or tp_groups
};

/// One deduplicated false positive.
struct FalsePositiveRow {
    int process_id = 0;
    AlertClass cls = AlertClass::tfp;
    Timestamp start{};
    Timestamp end{};
    double peak_rating = 0.0;
    std::optional<int> attack_id;
    std::size_t alerts = 0;  // raw alerts collapsed into this row
};

struct ClassCounts {
    std::size_t tp = 0, op = 0, lt = 0, tfp = 0;
    std::size_t total() const { return tp + op + lt + tfp; }
};

struct AttributionCounts {
    std::size_t first = 0, second = 0, wrong = 0;
};

struct EvaluationReport {
    std::vector<AttackRow> attacks;
    std::vector<ClassifiedAlert> alerts;
    std::vector<FalsePositiveRow> false_positives;
    ClassCounts raw;           // one entry per input alert
    ClassCounts deduplicated;  // TP per (process, attack); FPs per row
    AttributionCounts attribution;
    std::size_t detected = 0;
};

/// Detection status per attack: detected when any alert overlaps
/// [start, end + grace] (closed). The rating is the highest overlapping peak;
/// tags come from the highest-peak alert, preferring the attack's own processes.
std::vector<AttackRow> match_alerts(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels,
                                    const EvalConfig& config = {});

/// Classifies every alert exactly once:
///   TP  overlaps the grace-extended window of an attack on its own process;
///   OP  otherwise overlaps the grace-extended window of another attack;
///   LT  starts within long_tail after the grace window of an attack that an
///       alert of the same process detected;
///   TFP everything else.
std::vector<ClassifiedAlert> classify_alerts(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels,
                                             const EvalConfig& config = {});

AttributionCounts score_attribution(std::span<const AttackRow> rows);

EvaluationReport evaluate(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels,
                          const EvalConfig& config = {});

struct RenderedReport {
    std::string attacks_csv;
    std::string false_positives_csv;
    std::string summary;
};

RenderedReport render_report(const EvaluationReport& report);
/// Writes attacks.csv, false_positives.csv and summary.txt into dir.
void write_report(const std::filesystem::path& dir, const RenderedReport& report);

}  // namespace icsad
