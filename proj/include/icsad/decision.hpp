#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icsad/scoring.hpp"
#include "icsad/time.hpp"

namespace icsad {

struct RatingConfig {
    int sum_window_seconds = 60;  // W_r
    int outliers_removed = 5;     // k
    int history_size = 120;       // N
    double high_percentile = 90.0;
    double low_percentile = 20.0;
    double ratio_divisor = 20.0;  // R
    double alert_threshold = 0.3;
    int merge_gap_seconds = 300;
    /// Seconds before an alert's start that also count toward attribution.
    int attribution_lookback_seconds = 0;

    void validate() const;
    /// Minimum error-series length accepted by detect().
    std::size_t min_length() const {
        return static_cast<std::size_t>(sum_window_seconds) + static_cast<std::size_t>(history_size);
    }
};

/// Drops the k largest values and sums the rest. The remaining values are
/// added in ascending order, so every implementation of the rule that uses
/// this order agrees bit for bit.
double trimmed_window_sum(std::span<const double> distances, int k);

/// Nearest rank: the ceil(q*N/100)-th smallest value (rank at least 1).
/// Throws std::invalid_argument on empty input.
double percentile(std::span<const double> values, double q);

/// Ratings are reported on a 1e-6 grid.
inline constexpr double kRatingResolution = 1e-6;
inline constexpr double kRatingSteps = 1e6;

/// S = min(H / (L * R), 1) rounded to kRatingResolution. When L = 0 the
/// rating is 1 if H > 0 and 0 otherwise.
double rating_from_percentiles(double high, double low, double ratio_divisor);
double rating(std::span<const double> history, const RatingConfig& config);

struct RatingPoint {
    double window_sum = 0.0;
    double high = 0.0;
    double low = 0.0;
    double rating = 0.0;
};

/// Streaming form of the rating rule: push one distance per second; once
/// W_r + N - 1 distances have been seen every push yields a rating.
class RatingStream {
public:
    explicit RatingStream(RatingConfig config);

    std::optional<RatingPoint> push(double distance);
    /// Trimmed sum of the latest full window, if any.
    std::optional<double> last_window_sum() const;
    std::size_t seen() const { return seen_; }

private:
    RatingConfig config_;
    std::deque<double> window_;
    std::deque<double> sums_;
    std::vector<double> scratch_;
    std::size_t seen_ = 0;
};

struct RatingSeries {
    std::vector<Timestamp> timestamps;
    std::vector<double> window_sum;
    std::vector<double> high;
    std::vector<double> low;
    std::vector<double> rating;

    std::size_t size() const { return timestamps.size(); }
};

enum class Confidence : std::uint8_t { no, not_sure, yes };
std::string_view to_string(Confidence c);
Confidence parse_confidence(std::string_view text);
Confidence confidence_for(double peak_rating, double threshold);

struct AlertEvent {
    int process_id = 0;
    Timestamp start{};
    Timestamp end{};
    double peak_rating = 0.0;
    Confidence confidence = Confidence::no;
    std::vector<std::string> attributed_tags;

    bool operator==(const AlertEvent&) const = default;
};

struct Detection {
    RatingSeries ratings;
    std::vector<AlertEvent> alerts;
};

/// Rates every second of the error stream and turns runs of S >= threshold
/// into alerts. Alerts whose gap is shorter than merge_gap_seconds are merged.
/// Each alert is attributed with attribute_tags. Throws if the stream is
/// shorter than config.min_length().
Detection detect(const ErrorSeries& errors, const RatingConfig& config);

/// Ranks tags by the sum of |d_i| over [start - lookback, end] and returns
/// the top two (fewer if the model has fewer tags). Ties keep tag order.
std::vector<std::string> attribute_tags(const ErrorSeries& errors, const AlertEvent& alert, int lookback_seconds = 0);

/// JSON lines, one alert per line.
std::string alerts_to_jsonl(std::span<const AlertEvent> alerts);
std::vector<AlertEvent> parse_alerts_jsonl(std::string_view text);
void write_alerts(const std::filesystem::path& path, std::span<const AlertEvent> alerts);
std::vector<AlertEvent> load_alerts(const std::filesystem::path& path);

/// CSV "timestamp,sum,S".
void write_rating_csv(const std::filesystem::path& path, const RatingSeries& ratings);

}  // namespace icsad
