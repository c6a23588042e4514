#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "eval_fixture.hpp"
#include "icsad/evaluation.hpp"
#include "support.hpp"

using namespace icsad;
using fixture::alert;
using fixture::label;
using fixture::minute;

namespace {

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_CASE("label CSV") {
    const std::string text =
        "id,start,end,tags,expected_detectable\n"
        "# comment\n"
        "1,2015-12-28T10:29:14Z,2015-12-28T10:44:53Z,MV-101,1\n"
        "\n"
        "5,2015-12-28T14:00:00Z,2015-12-28T14:10:00Z,,0\n"
        "23,2015-12-29T18:30:00Z,2015-12-29T18:42:00Z,P-602;DPIT-301;MV-302,true\n";
    const auto labels = parse_labels_csv(text);
    REQUIRE(labels.size() == 3);
    CHECK(labels[0].target_tags == std::vector<std::string>{"MV-101"});
    CHECK_FALSE(labels[1].expected_detectable);
    CHECK(labels[1].target_tags.empty());
    CHECK(labels[2].target_processes() == std::vector<int>{3, 6});
    CHECK(labels[2].targets_process(6));
    CHECK_FALSE(labels[2].targets_process(1));
    CHECK(parse_labels_csv(labels_to_csv(labels)).size() == 3);
    CHECK(labels_to_csv(parse_labels_csv(labels_to_csv(labels))) == labels_to_csv(labels));

    CHECK_THROWS_AS(parse_labels_csv("1,2015-12-28T10:00:00Z,2015-12-28T10:10:00Z,MV-101\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_labels_csv("1,2015-12-28T10:10:00Z,2015-12-28T10:00:00Z,MV-101,1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_labels_csv("1,2015-12-28T10:00:00Z,2015-12-28T10:10:00Z,,1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_labels_csv("1,yesterday,2015-12-28T10:10:00Z,MV-101,1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_labels_csv("1,2015-12-28T10:00:00Z,2015-12-28T10:10:00Z,MV-101,1\n"
                                     "1,2015-12-28T11:00:00Z,2015-12-28T11:10:00Z,MV-101,1\n"),
                    std::invalid_argument);
}

TEST_CASE("grace rule boundaries") {
    const std::vector<AttackLabel> labels{label(1, 0, 10, {"LIT-101"})};
    auto detected_at = [&](double m) {
        const std::vector<AlertEvent> a{alert(1, m, m + 1, 0.5)};
        return match_alerts(a, labels).front().detected != Confidence::no;
    };
    CHECK(detected_at(24));
    CHECK(detected_at(25));  // exactly end + 15:00
    CHECK_FALSE(detected_at(25 + 1.0 / 60));
    CHECK_FALSE(detected_at(26));
    // an alert that started before the attack and is still open counts
    const std::vector<AlertEvent> early{alert(1, -5, 1, 0.5)};
    CHECK(match_alerts(early, labels).front().detected == Confidence::not_sure);
    const std::vector<AlertEvent> before{alert(1, -5, -1, 0.5)};
    CHECK(match_alerts(before, labels).front().detected == Confidence::no);
}

TEST_CASE("detection takes the highest overlapping rating") {
    const std::vector<AttackLabel> labels{label(1, 0, 10, {"LIT-101"})};
    const std::vector<AlertEvent> alerts{alert(1, 1, 2, 0.4, {"FIT-101"}), alert(2, 3, 4, 1.0, {"LIT-201"}),
                                         alert(1, 5, 6, 0.7, {"LIT-101"})};
    const auto row = match_alerts(alerts, labels).front();
    CHECK(row.detected == Confidence::yes);
    CHECK(row.rating == 1.0);
    // tags come from the best alert of the attacked process
    CHECK(row.attributed_tags == std::vector<std::string>{"LIT-101"});
    CHECK(row.point == PointResult::first);
}

TEST_CASE("one alert spanning two adjacent attacks detects both") {
    const std::vector<AttackLabel> labels{label(1, 0, 10, {"LIT-101"}), label(2, 10, 20, {"MV-101"})};
    const std::vector<AlertEvent> alerts{alert(1, 5, 15, 1.0, {"LIT-101", "MV-101"})};
    const auto report = evaluate(alerts, labels);
    CHECK(report.detected == 2);
    CHECK(report.attacks[0].point == PointResult::first);
    CHECK(report.attacks[1].point == PointResult::second);
    CHECK(report.raw.tp == 1);
}

TEST_CASE("attribution scoring") {
    auto row = [](std::vector<std::string> tags, std::vector<std::string> answer) {
        const std::vector<AttackLabel> labels{label(1, 0, 10, std::move(answer))};
        const std::vector<AlertEvent> alerts{alert(1, 1, 2, 0.5, std::move(tags))};
        return match_alerts(alerts, labels).front();
    };
    CHECK(row({"LIT-101"}, {"LIT-101"}).point == PointResult::first);
    CHECK(row({"MV-101", "P-102"}, {"P-102"}).point == PointResult::second);
    CHECK(row({"FIT-401"}, {"AIT-502"}).point == PointResult::none);
    CHECK(row({"LIT-101", "MV-101"}, {"MV-101", "LIT-101"}).point == PointResult::first);

    std::vector<AttackRow> rows(4);
    rows[0].detected = Confidence::yes;
    rows[0].point = PointResult::first;
    rows[1].detected = Confidence::not_sure;
    rows[1].point = PointResult::second;
    rows[2].detected = Confidence::yes;
    rows[3].detected = Confidence::no;  // undetected rows do not count
    const auto c = score_attribution(rows);
    CHECK(c.first == 1);
    CHECK(c.second == 1);
    CHECK(c.wrong == 1);
}

TEST_CASE("false positive taxonomy on small cases") {
    const std::vector<AttackLabel> labels{label(1, 0, 10, {"LIT-301"})};
    SUBCASE("other process during an attack") {
        const std::vector<AlertEvent> a{alert(1, 5, 6, 0.5)};
        const auto c = classify_alerts(a, labels).front();
        CHECK(c.cls == AlertClass::op);
        CHECK(c.attack_id == 1);
    }
    SUBCASE("20 min after an attack the model detected") {
        const std::vector<AlertEvent> a{alert(3, 5, 6, 0.5), alert(3, 30, 31, 0.5)};
        const auto c = classify_alerts(a, labels);
        CHECK(c[0].cls == AlertClass::tp);
        CHECK(c[1].cls == AlertClass::lt);
        CHECK(c[1].attack_id == 1);
    }
    SUBCASE("20 min after an attack the model missed") {
        const std::vector<AlertEvent> a{alert(3, 30, 31, 0.5)};
        CHECK(classify_alerts(a, labels).front().cls == AlertClass::tfp);
    }
    SUBCASE("long after the tail") {
        const std::vector<AlertEvent> a{alert(3, 5, 6, 0.5), alert(3, 86, 87, 0.5)};
        CHECK(classify_alerts(a, labels)[1].cls == AlertClass::tfp);
    }
    SUBCASE("quiet data") {
        const std::vector<AlertEvent> a{alert(2, 500, 501, 0.5)};
        const auto c = classify_alerts(a, labels).front();
        CHECK(c.cls == AlertClass::tfp);
        CHECK_FALSE(c.attack_id.has_value());
    }
}

TEST_CASE("hand-computed classification table") {
    const auto alerts = fixture::alerts();
    const auto labels = fixture::labels();
    const auto report = evaluate(alerts, labels);
    const auto expected = fixture::expected_classes();
    REQUIRE(report.alerts.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CAPTURE(i);
        CHECK(report.alerts[i].alert == alerts[i]);
        CHECK(report.alerts[i].cls == expected[i].cls);
        CHECK(report.alerts[i].attack_id == expected[i].attack);
    }

    const auto rows = fixture::expected_rows();
    REQUIRE(report.false_positives.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CAPTURE(i);
        const auto& fp = report.false_positives[i];
        CHECK(fp.process_id == rows[i].process);
        CHECK(fp.cls == rows[i].cls);
        CHECK(fp.start == minute(rows[i].start_minute));
        CHECK(fp.attack_id == rows[i].attack);
        CHECK(fp.alerts == rows[i].alerts);
    }

    CHECK(report.raw.tp == fixture::kRawCounts.tp);
    CHECK(report.raw.op == fixture::kRawCounts.op);
    CHECK(report.raw.lt == fixture::kRawCounts.lt);
    CHECK(report.raw.tfp == fixture::kRawCounts.tfp);
    CHECK(report.deduplicated.tp == fixture::kDedupCounts.tp);
    CHECK(report.deduplicated.op == fixture::kDedupCounts.op);
    CHECK(report.deduplicated.lt == fixture::kDedupCounts.lt);
    CHECK(report.deduplicated.tfp == fixture::kDedupCounts.tfp);
    CHECK(report.attribution.first == fixture::kAttribution.first);
    CHECK(report.attribution.second == fixture::kAttribution.second);
    CHECK(report.attribution.wrong == fixture::kAttribution.wrong);

    REQUIRE(report.attacks.size() == 4);
    CHECK(report.detected == 3);
    CHECK(report.attacks[0].detected == Confidence::not_sure);
    CHECK(report.attacks[1].detected == Confidence::yes);
    CHECK(report.attacks[2].detected == Confidence::not_sure);
    CHECK(report.attacks[3].detected == Confidence::no);
    CHECK(report.attacks[3].attributed_tags.empty());
}

TEST_CASE("every alert is counted once") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> when(-30, 400);
    std::uniform_int_distribution<int> proc(1, 3);
    const auto labels = fixture::labels();
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<AlertEvent> alerts;
        for (int i = 0; i < 25; ++i) {
            const double s = when(rng);
            alerts.push_back(alert(proc(rng), s, s + 2, 0.5));
        }
        const auto r = evaluate(alerts, labels);
        CHECK(r.raw.total() == alerts.size());
        std::size_t collapsed = r.raw.tp;
        for (const auto& fp : r.false_positives) collapsed += fp.alerts;
        CHECK(collapsed == alerts.size());
        CHECK(r.deduplicated.total() <= r.raw.total());
        CHECK(r.deduplicated.op + r.deduplicated.lt + r.deduplicated.tfp == r.false_positives.size());

        // input order does not matter
        auto shuffled = alerts;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto again = render_report(evaluate(shuffled, labels));
        CHECK(again.false_positives_csv == render_report(r).false_positives_csv);
        CHECK(again.attacks_csv == render_report(r).attacks_csv);
    }
}

TEST_CASE("clock mismatch") {
    EvalConfig cfg;
    cfg.window = std::make_pair(minute(0), minute(400));
    const auto labels = fixture::labels();
    CHECK_NOTHROW(evaluate(fixture::alerts(), labels, cfg));
    const std::vector<AlertEvent> late{alert(1, 500, 501, 0.5)};
    CHECK_THROWS_AS(evaluate(late, labels, cfg), ClockMismatchError);
    cfg.window = std::make_pair(minute(5000), minute(6000));
    CHECK_THROWS_AS(evaluate(std::vector<AlertEvent>{}, labels, cfg), ClockMismatchError);
}

TEST_CASE("no alerts") {
    const auto labels = fixture::labels();
    const auto r = evaluate(std::vector<AlertEvent>{}, labels);
    CHECK(r.detected == 0);
    CHECK(r.false_positives.empty());
    CHECK(r.raw.total() == 0);
    for (const auto& row : r.attacks) CHECK(row.detected == Confidence::no);
    const auto out = render_report(r);
    CHECK(count_lines(out.attacks_csv) == 1 + labels.size());
    CHECK(count_lines(out.false_positives_csv) == 1);
}

TEST_CASE("empty run renders header-only tables") {
    const auto out = render_report(evaluate(std::vector<AlertEvent>{}, std::vector<AttackLabel>{}));
    CHECK(out.attacks_csv == "id,start,end,targets,expected_detectable,detected,rating,tags,point\n");
    CHECK(out.false_positives_csv == "process,type,start,end,peak_rating,attack_id,alerts\n");
    CHECK(out.summary.find("attacks: 0") != std::string::npos);
}

TEST_CASE("rendered report is consistent and reproducible") {
    const auto report = evaluate(fixture::alerts(), fixture::labels());
    const auto out = render_report(report);
    CHECK(count_lines(out.attacks_csv) == 1 + 4);
    CHECK(count_lines(out.false_positives_csv) == 1 + report.false_positives.size());

    // summary counts equal the column tallies of the CSVs
    std::size_t op = 0, lt = 0, tfp = 0, detected = 0;
    std::istringstream fps(out.false_positives_csv);
    std::string line;
    std::getline(fps, line);
    while (std::getline(fps, line)) {
        op += line.find(",OP,") != std::string::npos;
        lt += line.find(",LT,") != std::string::npos;
        tfp += line.find(",TFP,") != std::string::npos;
    }
    std::istringstream att(out.attacks_csv);
    std::getline(att, line);
    while (std::getline(att, line)) detected += line.find(",no,") == std::string::npos;
    CHECK(op == report.deduplicated.op);
    CHECK(lt == report.deduplicated.lt);
    CHECK(tfp == report.deduplicated.tfp);
    CHECK(detected == report.detected);
    CHECK(out.summary.find("detected: 3") != std::string::npos);
    CHECK(out.summary.find("after dedup: TP 3, OP 1, LT 2, TFP 4") != std::string::npos);

    const auto again = render_report(evaluate(fixture::alerts(), fixture::labels()));
    CHECK(again.attacks_csv == out.attacks_csv);
    CHECK(again.false_positives_csv == out.false_positives_csv);
    CHECK(again.summary == out.summary);

    test::TempDir dir("report");
    write_report(dir.path, out);
    std::ifstream in(dir / "summary.txt");
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str() == out.summary);
    CHECK(std::filesystem::exists(dir / "attacks.csv"));
    CHECK(std::filesystem::exists(dir / "false_positives.csv"));
}
