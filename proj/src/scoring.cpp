#include "icsad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <numeric>
#include <stdexcept>

#include "text_util.hpp"

namespace icsad {

std::size_t ErrorSeries::lower_bound(Timestamp t) const {
    return static_cast<std::size_t>(std::lower_bound(timestamps.begin(), timestamps.end(), t) - timestamps.begin());
}

Eigen::VectorXd residuals(const Eigen::VectorXd& actual, const Eigen::VectorXd& predicted) {
    if (actual.size() != predicted.size())
        throw std::invalid_argument("residuals: length mismatch (" + std::to_string(actual.size()) + " vs " +
                                    std::to_string(predicted.size()) + ")");
    return actual - predicted;
}

double pnorm_distance(std::span<const double> d, double p) {
    if (!(p >= 1.0)) throw std::invalid_argument("pnorm_distance: p must be >= 1");
    double m = 0.0;
    for (double x : d) m = std::max(m, std::abs(x));
    if (m == 0.0 || std::isinf(p)) return m;
    double sum = 0.0;
    for (double x : d) sum += std::pow(std::abs(x) / m, p);
    return m * std::pow(sum, 1.0 / p);
}

double pnorm_distance(const Eigen::VectorXd& d, double p) {
    return pnorm_distance(std::span<const double>(d.data(), static_cast<std::size_t>(d.size())), p);
}

namespace {

void score_range(const SeqModelParams& model, const WindowSet& windows, const ScoreOptions& options,
                 std::size_t first, std::size_t last, ErrorSeries& out) {
    Seq2SeqNet<double> net(model.config);
    const auto n = static_cast<Eigen::Index>(windows.tags());
    std::vector<std::size_t> starts;
    WindowBatch batch;
    for (std::size_t begin = first; begin < last; begin += options.batch_size) {
        const auto count = std::min(options.batch_size, last - begin);
        starts.resize(count);
        std::iota(starts.begin(), starts.end(), begin);
        windows.fill<double>(starts, batch);
        const auto& pred = net.forward(model.values, batch);
        for (std::size_t b = 0; b < count; ++b) {
            const auto row = static_cast<Eigen::Index>(begin + b);
            const auto col = static_cast<Eigen::Index>(b);
            for (Eigen::Index i = 0; i < n; ++i) out.per_tag(row, i) = batch.target(i, col) - pred(i, col);
            const Eigen::VectorXd d = out.per_tag.row(row).transpose();
            out.distance[row] = pnorm_distance(d, options.p);
        }
    }
}

}  // namespace

ErrorSeries score_windows(const SeqModelParams& model, const WindowSet& windows, const ScoreOptions& options) {
    if (options.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (static_cast<int>(windows.tags()) != model.config.n_tags)
        throw std::invalid_argument("window tag count does not match the model");
    ErrorSeries out;
    out.process_id = model.config.process_id;
    out.tag_names = windows.tag_names();
    const auto count = windows.count();
    out.timestamps.reserve(count);
    for (std::size_t w = 0; w < count; ++w) out.timestamps.push_back(windows.target_timestamp(w));
    out.per_tag.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(windows.tags()));
    out.distance.resize(static_cast<Eigen::Index>(count));

    const unsigned threads = std::max(1u, options.threads);
    if (threads == 1 || count < 2 * options.batch_size) {
        score_range(model, windows, options, 0, count, out);
        return out;
    }
    // Each thread writes a disjoint row range of the same output.
    const std::size_t chunk = (count + threads - 1) / threads;
    std::vector<std::future<void>> jobs;
    for (std::size_t first = 0; first < count; first += chunk)
        jobs.push_back(std::async(std::launch::async, score_range, std::cref(model), std::cref(windows),
                                  std::cref(options), first, std::min(count, first + chunk), std::ref(out)));
    for (auto& j : jobs) j.get();
    return out;
}

ErrorSeries score_series(const SeqModelParams& model, const TagSeries& series, const ScoreOptions& options) {
    if (series.rows() < kWindowLength)
        throw std::invalid_argument("series too short: " + std::to_string(series.rows()) + " rows, need " +
                                    std::to_string(kWindowLength));
    const auto& stats = model.norm_stats;
    Eigen::MatrixXd data(static_cast<Eigen::Index>(stats.size()), static_cast<Eigen::Index>(series.rows()));
    for (std::size_t i = 0; i < stats.size(); ++i) {
        const auto col = series.schema.index_of(stats.names[i]);
        if (!col) throw std::invalid_argument("series has no column for model tag " + stats.names[i]);
        const auto k = static_cast<Eigen::Index>(i);
        for (Eigen::Index t = 0; t < data.cols(); ++t)
            data(k, t) = normalize_value(series.values(t, static_cast<Eigen::Index>(*col)), stats.min[k], stats.max[k]);
    }
    const WindowSet windows(std::move(data), series.timestamps, stats.names);
    return score_windows(model, windows, options);
}

void write_error_csv(const std::filesystem::path& path, const ErrorSeries& errors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "timestamp,D";
    for (const auto& name : errors.tag_names) out << ",d_" << name;
    out << '\n';
    for (std::size_t t = 0; t < errors.size(); ++t) {
        const auto r = static_cast<Eigen::Index>(t);
        out << format_timestamp(errors.timestamps[t]) << ',' << detail::format_double(errors.distance[r]);
        for (Eigen::Index i = 0; i < errors.per_tag.cols(); ++i) out << ',' << detail::format_double(errors.per_tag(r, i));
        out << '\n';
    }
}

ErrorSeries parse_error_csv(std::string_view text, int process_id) {
    const auto rows = detail::lines(text);
    if (rows.empty()) throw std::invalid_argument("error CSV is empty");
    const auto header = detail::split(rows.front(), ',');
    if (header.size() < 2 || detail::trim(header[0]) != "timestamp" || detail::trim(header[1]) != "D")
        throw std::invalid_argument("error CSV header must start with timestamp,D");
    ErrorSeries out;
    out.process_id = process_id;
    for (std::size_t i = 2; i < header.size(); ++i) {
        auto name = detail::trim(header[i]);
        if (name.starts_with("d_")) name.remove_prefix(2);
        out.tag_names.emplace_back(name);
    }
    const auto n = static_cast<Eigen::Index>(out.tag_names.size());
    out.per_tag.resize(static_cast<Eigen::Index>(rows.size() - 1), n);
    out.distance.resize(static_cast<Eigen::Index>(rows.size() - 1));
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto cells = detail::split(rows[r], ',');
        if (static_cast<Eigen::Index>(cells.size()) != n + 2)
            throw std::invalid_argument("error CSV line " + std::to_string(r + 1) + ": wrong number of fields");
        const auto row = static_cast<Eigen::Index>(r - 1);
        out.timestamps.push_back(parse_timestamp(detail::trim(cells[0])));
        out.distance[row] = detail::parse_double(cells[1]);
        for (Eigen::Index i = 0; i < n; ++i) out.per_tag(row, i) = detail::parse_double(cells[static_cast<std::size_t>(i + 2)]);
    }
    return out;
}

ErrorSeries load_error_csv(const std::filesystem::path& path, int process_id) {
    return parse_error_csv(detail::read_file(path), process_id);
}

}  // namespace icsad
