#include "icsad/decision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "text_util.hpp"

namespace icsad {

void RatingConfig::validate() const {
    if (sum_window_seconds < 1) throw std::invalid_argument("sum window must be >= 1 s");
    if (outliers_removed < 0 || outliers_removed >= sum_window_seconds)
        throw std::invalid_argument("outliers removed must be in [0, sum window)");
    if (history_size < 1) throw std::invalid_argument("history size must be >= 1");
    if (!(low_percentile > 0.0 && low_percentile < high_percentile && high_percentile <= 100.0))
        throw std::invalid_argument("percentiles must satisfy 0 < low < high <= 100");
    if (!(ratio_divisor > 0.0)) throw std::invalid_argument("ratio divisor must be positive");
    if (!(alert_threshold > 0.0 && alert_threshold <= 1.0))
        throw std::invalid_argument("alert threshold must be in (0, 1]");
    if (merge_gap_seconds < 0) throw std::invalid_argument("merge gap must be >= 0");
    if (attribution_lookback_seconds < 0) throw std::invalid_argument("attribution lookback must be >= 0");
}

double trimmed_window_sum(std::span<const double> distances, int k) {
    if (k < 0 || distances.size() <= static_cast<std::size_t>(k))
        throw std::invalid_argument("trimmed_window_sum: need 0 <= k < window length");
    std::vector<double> sorted(distances.begin(), distances.end());
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (std::size_t i = 0; i + static_cast<std::size_t>(k) < sorted.size(); ++i) sum += sorted[i];
    return sum;
}

double percentile(std::span<const double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    const auto n = values.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) / 100.0));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::vector<double> tmp(values.begin(), values.end());
    std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(rank - 1), tmp.end());
    return tmp[rank - 1];
}

double rating_from_percentiles(double high, double low, double ratio_divisor) {
    if (low == 0.0) return high > 0.0 ? 1.0 : 0.0;
    const double s = std::min(high / (low * ratio_divisor), 1.0);
    return std::round(s * kRatingSteps) / kRatingSteps;
}

double rating(std::span<const double> history, const RatingConfig& config) {
    return rating_from_percentiles(percentile(history, config.high_percentile),
                                   percentile(history, config.low_percentile), config.ratio_divisor);
}

RatingStream::RatingStream(RatingConfig config) : config_(config) { config_.validate(); }

std::optional<double> RatingStream::last_window_sum() const {
    if (sums_.empty()) return std::nullopt;
    return sums_.back();
}

std::optional<RatingPoint> RatingStream::push(double distance) {
    if (!std::isfinite(distance) || distance < 0.0)
        throw std::invalid_argument("distance must be finite and nonnegative");
    ++seen_;
    window_.push_back(distance);
    if (window_.size() > static_cast<std::size_t>(config_.sum_window_seconds)) window_.pop_front();
    if (window_.size() < static_cast<std::size_t>(config_.sum_window_seconds)) return std::nullopt;

    scratch_.assign(window_.begin(), window_.end());
    const double sum = trimmed_window_sum(scratch_, config_.outliers_removed);
    sums_.push_back(sum);
    if (sums_.size() > static_cast<std::size_t>(config_.history_size)) sums_.pop_front();
    if (sums_.size() < static_cast<std::size_t>(config_.history_size)) return std::nullopt;

    scratch_.assign(sums_.begin(), sums_.end());
    RatingPoint point;
    point.window_sum = sum;
    point.high = percentile(scratch_, config_.high_percentile);
    point.low = percentile(scratch_, config_.low_percentile);
    point.rating = rating_from_percentiles(point.high, point.low, config_.ratio_divisor);
    return point;
}

std::string_view to_string(Confidence c) {
    switch (c) {
        case Confidence::no: return "no";
        case Confidence::not_sure: return "not_sure";
        case Confidence::yes: return "yes";
    }
    return "no";
}

Confidence parse_confidence(std::string_view text) {
    if (text == "no") return Confidence::no;
    if (text == "not_sure") return Confidence::not_sure;
    if (text == "yes") return Confidence::yes;
    throw std::invalid_argument("unknown confidence '" + std::string(text) + "'");
}

Confidence confidence_for(double peak_rating, double threshold) {
    if (peak_rating == 1.0) return Confidence::yes;
    if (peak_rating >= threshold) return Confidence::not_sure;
    return Confidence::no;
}

std::vector<std::string> attribute_tags(const ErrorSeries& errors, const AlertEvent& alert, int lookback_seconds) {
    const auto n = static_cast<std::size_t>(errors.per_tag.cols());
    std::vector<double> mass(n, 0.0);
    const auto first = errors.lower_bound(alert.start - Seconds{lookback_seconds});
    for (std::size_t t = first; t < errors.size() && errors.timestamps[t] <= alert.end; ++t)
        for (std::size_t i = 0; i < n; ++i)
            mass[i] += std::abs(errors.per_tag(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });
    std::vector<std::string> out;
    for (std::size_t r = 0; r < std::min<std::size_t>(2, n); ++r) out.push_back(errors.tag_names[order[r]]);
    return out;
}

Detection detect(const ErrorSeries& errors, const RatingConfig& config) {
    config.validate();
    if (errors.size() < config.min_length())
        throw std::invalid_argument("error series too short for detection: " + std::to_string(errors.size()) +
                                    " seconds, need " + std::to_string(config.min_length()));
    Detection out;
    RatingStream stream(config);
    for (std::size_t t = 0; t < errors.size(); ++t) {
        const auto point = stream.push(errors.distance[static_cast<Eigen::Index>(t)]);
        if (!point) continue;
        out.ratings.timestamps.push_back(errors.timestamps[t]);
        out.ratings.window_sum.push_back(point->window_sum);
        out.ratings.high.push_back(point->high);
        out.ratings.low.push_back(point->low);
        out.ratings.rating.push_back(point->rating);
    }

    const auto& r = out.ratings;
    std::vector<AlertEvent> runs;
    for (std::size_t t = 0; t < r.size(); ++t) {
        if (r.rating[t] < config.alert_threshold) continue;
        const bool extends = !runs.empty() && t > 0 && r.rating[t - 1] >= config.alert_threshold;
        if (!extends) {
            AlertEvent a;
            a.process_id = errors.process_id;
            a.start = r.timestamps[t];
            runs.push_back(a);
        }
        runs.back().end = r.timestamps[t];
        runs.back().peak_rating = std::max(runs.back().peak_rating, r.rating[t]);
    }
    for (auto& a : runs) {
        if (!out.alerts.empty() && a.start - out.alerts.back().end < Seconds{config.merge_gap_seconds}) {
            out.alerts.back().end = a.end;
            out.alerts.back().peak_rating = std::max(out.alerts.back().peak_rating, a.peak_rating);
        } else {
            out.alerts.push_back(a);
        }
    }
    for (auto& a : out.alerts) {
        a.confidence = confidence_for(a.peak_rating, config.alert_threshold);
        a.attributed_tags = attribute_tags(errors, a, config.attribution_lookback_seconds);
    }
    return out;
}

std::string alerts_to_jsonl(std::span<const AlertEvent> alerts) {
    std::string out;
    for (const auto& a : alerts) {
        nlohmann::ordered_json j;
        j["process"] = a.process_id;
        j["start"] = format_timestamp(a.start);
        j["end"] = format_timestamp(a.end);
        j["peak_rating"] = a.peak_rating;
        j["confidence"] = to_string(a.confidence);
        j["tags"] = a.attributed_tags;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<AlertEvent> parse_alerts_jsonl(std::string_view text) {
    std::vector<AlertEvent> out;
    std::size_t line_no = 0;
    for (auto line : detail::lines(text)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            AlertEvent a;
            a.process_id = j.at("process").get<int>();
            a.start = parse_timestamp(j.at("start").get<std::string>());
            a.end = parse_timestamp(j.at("end").get<std::string>());
            a.peak_rating = j.at("peak_rating").get<double>();
            a.confidence = parse_confidence(j.at("confidence").get<std::string>());
            if (j.contains("tags")) a.attributed_tags = j.at("tags").get<std::vector<std::string>>();
            if (a.end < a.start) throw std::invalid_argument("alert ends before it starts");
            out.push_back(std::move(a));
        } catch (const std::exception& e) {
            throw std::invalid_argument("alerts line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_alerts(const std::filesystem::path& path, std::span<const AlertEvent> alerts) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << alerts_to_jsonl(alerts);
}

std::vector<AlertEvent> load_alerts(const std::filesystem::path& path) {
    return parse_alerts_jsonl(detail::read_file(path));
}

void write_rating_csv(const std::filesystem::path& path, const RatingSeries& ratings) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "timestamp,sum,S\n";
    for (std::size_t t = 0; t < ratings.size(); ++t)
        out << format_timestamp(ratings.timestamps[t]) << ',' << detail::format_double(ratings.window_sum[t]) << ','
            << detail::format_double(ratings.rating[t]) << '\n';
}

}  // namespace icsad
