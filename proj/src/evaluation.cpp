#include "icsad/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "icsad/dataset.hpp"
#include "text_util.hpp"

namespace icsad {

std::vector<int> AttackLabel::target_processes() const {
    std::set<int> ids;
    for (const auto& tag : target_tags)
        if (auto p = derive_process_id(tag)) ids.insert(*p);
    return {ids.begin(), ids.end()};
}

bool AttackLabel::targets_process(int process_id) const {
    const auto ids = target_processes();
    return std::find(ids.begin(), ids.end(), process_id) != ids.end();
}

void AttackLabel::validate() const {
    if (!(start < end)) throw std::invalid_argument("attack " + std::to_string(id) + ": start must precede end");
    if (target_tags.empty() && expected_detectable)
        throw std::invalid_argument("attack " + std::to_string(id) + ": no target tags");
}

namespace {

bool parse_flag(std::string_view text) {
    const auto s = detail::to_lower(detail::trim(text));
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw std::invalid_argument("bad flag '" + std::string(text) + "'");
}

std::string join(const std::vector<std::string>& items, char sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

}  // namespace

std::vector<AttackLabel> parse_labels_csv(std::string_view text) {
    std::vector<AttackLabel> out;
    std::set<int> ids;
    std::size_t line_no = 0;
    for (auto line : detail::lines(text)) {
        ++line_no;
        line = detail::trim(line);
        if (line.empty() || line.front() == '#') continue;
        if (line_no == 1 && line.starts_with("id,")) continue;
        const auto cells = detail::split(line, ',');
        try {
            if (cells.size() != 5) throw std::invalid_argument("expected 5 fields, got " + std::to_string(cells.size()));
            AttackLabel a;
            a.id = static_cast<int>(detail::parse_int(cells[0]));
            a.start = parse_timestamp(detail::trim(cells[1]));
            a.end = parse_timestamp(detail::trim(cells[2]));
            for (auto tag : detail::split(cells[3], ';'))
                if (!detail::trim(tag).empty()) a.target_tags.emplace_back(detail::trim(tag));
            a.expected_detectable = parse_flag(cells[4]);
            a.validate();
            if (!ids.insert(a.id).second) throw std::invalid_argument("duplicate attack id " + std::to_string(a.id));
            out.push_back(std::move(a));
        } catch (const std::exception& e) {
            throw std::invalid_argument("labels line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<AttackLabel> load_labels(const std::filesystem::path& path) {
    return parse_labels_csv(detail::read_file(path));
}

std::string labels_to_csv(std::span<const AttackLabel> labels) {
    std::string out = "id,start,end,tags,expected_detectable\n";
    for (const auto& a : labels)
        out += std::to_string(a.id) + ',' + format_timestamp(a.start) + ',' + format_timestamp(a.end) + ',' +
               join(a.target_tags, ';') + ',' + (a.expected_detectable ? "1" : "0") + '\n';
    return out;
}

void write_labels(const std::filesystem::path& path, std::span<const AttackLabel> labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << labels_to_csv(labels);
}

std::string_view to_string(AlertClass c) {
    switch (c) {
        case AlertClass::tp: return "TP";
        case AlertClass::op: return "OP";
        case AlertClass::lt: return "LT";
        case AlertClass::tfp: return "TFP";
    }
    return "TFP";
}

std::string_view to_string(PointResult r) {
    switch (r) {
        case PointResult::none: return "none";
        case PointResult::first: return "first";
        case PointResult::second: return "second";
    }
    return "none";
}

namespace {

bool overlaps(const AlertEvent& alert, const AttackLabel& attack, Seconds grace) {
    return alert.start <= attack.end + grace && alert.end >= attack.start;
}

void check_clock(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels, const EvalConfig& config) {
    if (!config.window) return;
    const auto [lo, hi] = *config.window;
    for (const auto& a : alerts)
        if (a.start < lo || a.end > hi)
            throw ClockMismatchError("clock mismatch: alert " + format_timestamp(a.start) + " lies outside " +
                                     format_timestamp(lo) + " .. " + format_timestamp(hi));
    if (labels.empty()) return;
    const bool any = std::any_of(labels.begin(), labels.end(),
                                 [&](const AttackLabel& l) { return l.start <= hi && l.end >= lo; });
    if (!any) throw ClockMismatchError("clock mismatch: no attack label falls inside the evaluated range");
}

}  // namespace

std::vector<AttackRow> match_alerts(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels,
                                    const EvalConfig& config) {
    check_clock(alerts, labels, config);
    std::vector<AttackRow> rows;
    for (const auto& label : labels) {
        AttackRow row;
        row.label = label;
        const AlertEvent* best = nullptr;
        bool best_on_target = false;
        for (const auto& a : alerts) {
            if (!overlaps(a, label, config.grace)) continue;
            const bool on_target = label.targets_process(a.process_id);
            row.rating = std::max(row.rating, a.peak_rating);
            if (!best || (on_target && !best_on_target) ||
                (on_target == best_on_target && a.peak_rating > best->peak_rating)) {
                best = &a;
                best_on_target = on_target;
            }
        }
        if (best) {
            row.detected = row.rating == 1.0 ? Confidence::yes : Confidence::not_sure;
            row.attributed_tags = best->attributed_tags;
            const auto& tags = row.attributed_tags;
            auto is_target = [&](const std::string& t) {
                return std::find(label.target_tags.begin(), label.target_tags.end(), t) != label.target_tags.end();
            };
            if (!tags.empty() && is_target(tags[0]))
                row.point = PointResult::first;
            else if (tags.size() > 1 && is_target(tags[1]))
                row.point = PointResult::second;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<ClassifiedAlert> classify_alerts(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels,
                                             const EvalConfig& config) {
    check_clock(alerts, labels, config);
    std::vector<ClassifiedAlert> out;
    for (const auto& a : alerts) {
        ClassifiedAlert c;
        c.alert = a;
        // earliest attack on the alert's own process, then any earliest attack
        const AttackLabel* own = nullptr;
        const AttackLabel* other = nullptr;
        for (const auto& l : labels) {
            if (!overlaps(a, l, config.grace)) continue;
            if (l.targets_process(a.process_id)) {
                if (!own || l.start < own->start) own = &l;
            } else if (!other || l.start < other->start) {
                other = &l;
            }
        }
        if (own) {
            c.cls = AlertClass::tp;
            c.attack_id = own->id;
        } else if (other) {
            c.cls = AlertClass::op;
            c.attack_id = other->id;
        } else {
            const AttackLabel* tail = nullptr;
            for (const auto& l : labels) {
                const auto from = l.end + config.grace;
                if (!(a.start > from && a.start <= from + config.long_tail)) continue;
                const bool seen_by_model = std::any_of(alerts.begin(), alerts.end(), [&](const AlertEvent& b) {
                    return b.process_id == a.process_id && overlaps(b, l, config.grace);
                });
                if (seen_by_model && (!tail || l.end > tail->end)) tail = &l;
            }
            if (tail) {
                c.cls = AlertClass::lt;
                c.attack_id = tail->id;
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

AttributionCounts score_attribution(std::span<const AttackRow> rows) {
    AttributionCounts counts;
    for (const auto& r : rows) {
        if (r.detected == Confidence::no) continue;
        switch (r.point) {
            case PointResult::first: ++counts.first; break;
            case PointResult::second: ++counts.second; break;
            case PointResult::none: ++counts.wrong; break;
        }
    }
    return counts;
}

EvaluationReport evaluate(std::span<const AlertEvent> alerts, std::span<const AttackLabel> labels,
                          const EvalConfig& config) {
    EvaluationReport report;
    report.attacks = match_alerts(alerts, labels, config);
    report.alerts = classify_alerts(alerts, labels, config);
    report.attribution = score_attribution(report.attacks);
    for (const auto& r : report.attacks)
        if (r.detected != Confidence::no) ++report.detected;

    // Visiting alerts by (process, start) keeps dedup independent of input
    // order and creates FP rows already sorted the same way.
    std::vector<std::size_t> order(report.alerts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const auto& a = report.alerts[x].alert;
        const auto& b = report.alerts[y].alert;
        if (a.process_id != b.process_id) return a.process_id < b.process_id;
        return a.start < b.start;
    });

    std::map<std::pair<int, int>, std::size_t> tp_groups;
    std::map<std::tuple<int, int, int>, std::size_t> fp_groups;  // (class, process, attack)
    std::map<int, std::size_t> open_tfp;                          // process -> row of the current TFP chain
    for (auto idx : order) {
        auto& c = report.alerts[idx];
        const auto& a = c.alert;
        switch (c.cls) {
            case AlertClass::tp: ++report.raw.tp; break;
            case AlertClass::op: ++report.raw.op; break;
            case AlertClass::lt: ++report.raw.lt; break;
            case AlertClass::tfp: ++report.raw.tfp; break;
        }
        if (c.cls == AlertClass::tp) {
            const auto [it, fresh] = tp_groups.try_emplace({a.process_id, *c.attack_id}, tp_groups.size());
            c.group = it->second;
            continue;
        }
        std::optional<std::size_t> row;
        if (c.cls == AlertClass::tfp) {
            auto it = open_tfp.find(a.process_id);
            if (it != open_tfp.end() && a.start - report.false_positives[it->second].end <= config.tfp_merge_gap)
                row = it->second;
        } else {
            auto it = fp_groups.find({static_cast<int>(c.cls), a.process_id, *c.attack_id});
            if (it != fp_groups.end()) row = it->second;
        }
        if (!row) {
            FalsePositiveRow fp;
            fp.process_id = a.process_id;
            fp.cls = c.cls;
            fp.start = a.start;
            fp.end = a.end;
            fp.attack_id = c.attack_id;
            row = report.false_positives.size();
            report.false_positives.push_back(fp);
            if (c.cls == AlertClass::tfp)
                open_tfp[a.process_id] = *row;
            else
                fp_groups[{static_cast<int>(c.cls), a.process_id, *c.attack_id}] = *row;
        }
        auto& fp = report.false_positives[*row];
        fp.start = std::min(fp.start, a.start);
        fp.end = std::max(fp.end, a.end);
        fp.peak_rating = std::max(fp.peak_rating, a.peak_rating);
        ++fp.alerts;
        c.group = *row;
    }
    report.deduplicated.tp = tp_groups.size();
    for (const auto& fp : report.false_positives) {
        if (fp.cls == AlertClass::op) ++report.deduplicated.op;
        if (fp.cls == AlertClass::lt) ++report.deduplicated.lt;
        if (fp.cls == AlertClass::tfp) ++report.deduplicated.tfp;
    }
    return report;
}

RenderedReport render_report(const EvaluationReport& report) {
    RenderedReport out;
    std::ostringstream attacks;
    attacks << "id,start,end,targets,expected_detectable,detected,rating,tags,point\n";
    for (const auto& r : report.attacks)
        attacks << r.label.id << ',' << format_timestamp(r.label.start) << ',' << format_timestamp(r.label.end) << ','
                << join(r.label.target_tags, ';') << ',' << (r.label.expected_detectable ? 1 : 0) << ','
                << to_string(r.detected) << ',' << detail::format_double(r.rating) << ','
                << join(r.attributed_tags, ';') << ',' << to_string(r.point) << '\n';
    out.attacks_csv = attacks.str();

    std::ostringstream fps;
    fps << "process,type,start,end,peak_rating,attack_id,alerts\n";
    for (const auto& fp : report.false_positives)
        fps << fp.process_id << ',' << to_string(fp.cls) << ',' << format_timestamp(fp.start) << ','
            << format_timestamp(fp.end) << ',' << detail::format_double(fp.peak_rating) << ','
            << (fp.attack_id ? std::to_string(*fp.attack_id) : std::string()) << ',' << fp.alerts << '\n';
    out.false_positives_csv = fps.str();

    std::ostringstream s;
    s << "attacks: " << report.attacks.size() << "\n";
    s << "detected: " << report.detected << "\n";
    s << "attack points: first " << report.attribution.first << ", second " << report.attribution.second
      << ", wrong " << report.attribution.wrong << "\n";
    s << "alerts: " << report.alerts.size() << " (TP " << report.raw.tp << ", OP " << report.raw.op << ", LT "
      << report.raw.lt << ", TFP " << report.raw.tfp << ")\n";
    s << "after dedup: TP " << report.deduplicated.tp << ", OP " << report.deduplicated.op << ", LT "
      << report.deduplicated.lt << ", TFP " << report.deduplicated.tfp << "\n";
    if (!report.attacks.empty()) {
        s << "\n  id  detected  rating    attributed\n";
        for (const auto& r : report.attacks) {
            char line[160];
            std::snprintf(line, sizeof line, "%4d  %-8s  %-8.6f  %s%s\n", r.label.id,
                          std::string(to_string(r.detected)).c_str(), r.rating, join(r.attributed_tags, ' ').c_str(),
                          r.point == PointResult::none ? "" : (r.point == PointResult::first ? "  [first]" : "  [second]"));
            s << line;
        }
    }
    std::map<int, ClassCounts> per_process;
    for (const auto& fp : report.false_positives) {
        auto& c = per_process[fp.process_id];
        if (fp.cls == AlertClass::op) ++c.op;
        if (fp.cls == AlertClass::lt) ++c.lt;
        if (fp.cls == AlertClass::tfp) ++c.tfp;
    }
    if (!per_process.empty()) {
        s << "\n  process  OP  LT  TFP\n";
        for (const auto& [p, c] : per_process) {
            char line[80];
            std::snprintf(line, sizeof line, "  %7d  %2zu  %2zu  %3zu\n", p, c.op, c.lt, c.tfp);
            s << line;
        }
    }
    out.summary = s.str();
    return out;
}

void write_report(const std::filesystem::path& dir, const RenderedReport& report) {
    std::filesystem::create_directories(dir);
    auto put = [&](const char* name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        out << text;
    };
    put("attacks.csv", report.attacks_csv);
    put("false_positives.csv", report.false_positives_csv);
    put("summary.txt", report.summary);
}

}  // namespace icsad
