#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "icsad/dataset.hpp"
#include "icsad/seqmodel.hpp"
#include "icsad/time.hpp"

namespace icsad {

/// Per-second prediction errors of one process model, in normalized units.
struct ErrorSeries {
    int process_id = 0;
    std::vector<std::string> tag_names;
    std::vector<Timestamp> timestamps;  // target second of each window
    Eigen::MatrixXd per_tag;            // [T' x n] residuals actual - predicted
    Eigen::VectorXd distance;           // [T']

    std::size_t size() const { return timestamps.size(); }
    /// Index of the first row with timestamp >= t (size() if none).
    std::size_t lower_bound(Timestamp t) const;
};

/// actual - predicted. Throws std::invalid_argument on a length mismatch.
Eigen::VectorXd residuals(const Eigen::VectorXd& actual, const Eigen::VectorXd& predicted);

/// (sum |d_i|^p)^(1/p), evaluated as m * (sum (|d_i|/m)^p)^(1/p) with
/// m = max |d_i| so tiny or huge residuals neither underflow nor overflow.
/// Terms are summed in index order. p = infinity gives max |d_i|.
double pnorm_distance(std::span<const double> residuals, double p = 4.0);
double pnorm_distance(const Eigen::VectorXd& residuals, double p = 4.0);

struct ScoreOptions {
    double p = 4.0;
    std::size_t batch_size = 256;
    unsigned threads = 1;
};

/// Runs the model over every stride-1 window of a series that is already
/// normalized with the model's stats.
ErrorSeries score_windows(const SeqModelParams& model, const WindowSet& windows, const ScoreOptions& options = {});

/// Normalizes a raw series with the model's own stats (selecting its tags by
/// name) and scores it. Throws if the series is shorter than one window or a
/// model tag is missing.
ErrorSeries score_series(const SeqModelParams& model, const TagSeries& series, const ScoreOptions& options = {});

/// CSV "timestamp,D,d_<tag>,..." with ISO timestamps.
void write_error_csv(const std::filesystem::path& path, const ErrorSeries& errors);
ErrorSeries load_error_csv(const std::filesystem::path& path, int process_id = 0);
ErrorSeries parse_error_csv(std::string_view text, int process_id = 0);

}  // namespace icsad
