#include "icsad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "text_util.hpp"

namespace icsad {

using detail::split;
using detail::trim;

std::string_view to_string(TagKind kind) {
    return kind == TagKind::sensor ? "sensor" : "actuator";
}

TagKind parse_tag_kind(std::string_view text) {
    const auto lower = detail::to_lower(trim(text));
    if (lower == "sensor") return TagKind::sensor;
    if (lower == "actuator") return TagKind::actuator;
    throw std::invalid_argument("unknown tag kind '" + std::string(text) + "'");
}

std::optional<int> derive_process_id(std::string_view name) {
    std::size_t end = name.size();
    while (end > 0 && !std::isdigit(static_cast<unsigned char>(name[end - 1]))) --end;
    std::size_t begin = end;
    while (begin > 0 && std::isdigit(static_cast<unsigned char>(name[begin - 1]))) --begin;
    if (begin == end) return std::nullopt;
    return name[begin] - '0';
}

std::optional<TagKind> guess_tag_kind(std::string_view name) {
    std::size_t n = 0;
    while (n < name.size() && std::isalpha(static_cast<unsigned char>(name[n]))) ++n;
    const auto prefix = detail::to_lower(name.substr(0, n));
    if (prefix == "fit" || prefix == "lit" || prefix == "ait" || prefix == "pit" || prefix == "dpit")
        return TagKind::sensor;
    if (prefix == "mv" || prefix == "p" || prefix == "uv") return TagKind::actuator;
    return std::nullopt;
}

TagSchema::TagSchema(std::vector<TagInfo> tags) : tags_(std::move(tags)) {
    for (std::size_t i = 0; i < tags_.size(); ++i) {
        const auto& tag = tags_[i];
        if (tag.name.empty()) throw std::invalid_argument("empty tag name");
        if (tag.process_id < 1) throw std::invalid_argument("tag " + tag.name + " has no process");
        if (auto derived = derive_process_id(tag.name); derived && *derived != tag.process_id)
            throw std::invalid_argument("tag " + tag.name + " declares process " +
                                        std::to_string(tag.process_id) + " but its suffix says " +
                                        std::to_string(*derived));
        if (!index_.emplace(tag.name, i).second)
            throw std::invalid_argument("duplicate tag name " + tag.name);
    }
}

TagSchema TagSchema::from_names(std::span<const std::string> names) {
    std::vector<TagInfo> tags;
    tags.reserve(names.size());
    for (const auto& name : names) {
        const auto pid = derive_process_id(name);
        if (!pid) throw std::invalid_argument("cannot derive process of tag " + name);
        tags.push_back({name, guess_tag_kind(name).value_or(TagKind::sensor), *pid});
    }
    return TagSchema(std::move(tags));
}

std::optional<std::size_t> TagSchema::index_of(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<int> TagSchema::process_ids() const {
    std::set<int> ids;
    for (const auto& tag : tags_) ids.insert(tag.process_id);
    return {ids.begin(), ids.end()};
}

std::vector<std::size_t> TagSchema::process_columns(int process_id) const {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < tags_.size(); ++i)
        if (tags_[i].process_id == process_id) cols.push_back(i);
    return cols;
}

std::vector<std::string> TagSchema::process_tag_names(int process_id) const {
    std::vector<std::string> names;
    for (const auto& tag : tags_)
        if (tag.process_id == process_id) names.push_back(tag.name);
    return names;
}

bool TagSchema::operator==(const TagSchema& other) const {
    if (tags_.size() != other.tags_.size()) return false;
    for (std::size_t i = 0; i < tags_.size(); ++i) {
        const auto &a = tags_[i], &b = other.tags_[i];
        if (a.name != b.name || a.kind != b.kind || a.process_id != b.process_id) return false;
    }
    return true;
}

TagSchema load_schema(const std::filesystem::path& path) {
    const auto text = detail::read_file(path);
    std::vector<TagInfo> tags;
    std::size_t line_no = 0;
    for (auto line : detail::lines(text)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 3)
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected name,kind,process");
        if (detail::to_lower(trim(fields[0])) == "name") continue;
        try {
            tags.push_back({std::string(trim(fields[0])), parse_tag_kind(fields[1]),
                            static_cast<int>(detail::parse_int(fields[2]))});
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return TagSchema(std::move(tags));
}

void write_schema(const std::filesystem::path& path, const TagSchema& schema) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "name,kind,process\n";
    for (const auto& tag : schema.tags())
        out << tag.name << ',' << to_string(tag.kind) << ',' << tag.process_id << '\n';
}

void TagSeries::validate() const {
    if (values.rows() != static_cast<Eigen::Index>(rows()) ||
        values.cols() != static_cast<Eigen::Index>(cols()))
        throw std::runtime_error("value matrix shape does not match timestamps/schema");
    if (!labels.empty() && labels.size() != rows())
        throw std::runtime_error("label count does not match row count");
    for (std::size_t t = 1; t < timestamps.size(); ++t) {
        const auto step = timestamps[t] - timestamps[t - 1];
        if (step <= Seconds{0})
            throw std::runtime_error("non-monotonic timestamps at row " + std::to_string(t) + " (" +
                                     format_timestamp(timestamps[t]) + ")");
        if (step != Seconds{1})
            throw std::runtime_error("timestamp gap of " + std::to_string(step.count()) +
                                     " s at row " + std::to_string(t) + " (" +
                                     format_timestamp(timestamps[t]) + ")");
    }
    if (!values.allFinite()) throw std::runtime_error("non-finite tag value");
}

TagSeries TagSeries::slice(std::size_t first, std::size_t count) const {
    if (first + count > rows()) throw std::out_of_range("slice beyond series end");
    TagSeries out;
    out.schema = schema;
    out.timestamps.assign(timestamps.begin() + first, timestamps.begin() + first + count);
    out.values = values.middleRows(first, count);
    if (has_labels()) out.labels.assign(labels.begin() + first, labels.begin() + first + count);
    return out;
}

namespace {

std::optional<Label> parse_label(std::string_view text) {
    auto lower = detail::to_lower(trim(text));
    std::erase(lower, ' ');
    if (lower == "normal" || lower == "0") return Label::normal;
    if (lower == "attack" || lower == "1") return Label::attack;
    return std::nullopt;
}

bool is_label_header(std::string_view name) {
    const auto lower = detail::to_lower(trim(name));
    return lower == "label" || lower == "normal/attack";
}

}  // namespace

TagSchema infer_schema(std::string_view text) {
    for (auto line : detail::lines(text)) {
        if (trim(line).empty()) continue;
        auto header = split(line, ',');
        if (header.size() < 2) throw std::runtime_error("CSV header needs a timestamp and tag columns");
        if (is_label_header(header.back())) header.pop_back();
        std::vector<std::string> names;
        for (std::size_t f = 1; f < header.size(); ++f) names.emplace_back(trim(header[f]));
        return TagSchema::from_names(names);
    }
    throw std::runtime_error("empty CSV");
}

TagSeries parse_csv(std::string_view text, const TagSchema& schema) {
    const auto all_lines = detail::lines(text);
    std::size_t first = 0;
    while (first < all_lines.size() && trim(all_lines[first]).empty()) ++first;
    if (first == all_lines.size()) throw std::runtime_error("empty CSV");

    const auto header = split(all_lines[first], ',');
    if (header.size() < 2) throw std::runtime_error("CSV header needs a timestamp and tag columns");

    const bool has_label = is_label_header(header.back());
    const std::size_t tag_fields = header.size() - 1 - (has_label ? 1 : 0);

    // csv column -> schema column
    std::vector<std::size_t> target(tag_fields);
    std::vector<bool> seen(schema.size(), false);
    for (std::size_t f = 0; f < tag_fields; ++f) {
        const auto name = trim(header[f + 1]);
        const auto idx = schema.index_of(name);
        if (!idx) throw std::runtime_error("unexpected column '" + std::string(name) + "'");
        if (seen[*idx]) throw std::runtime_error("duplicated column '" + std::string(name) + "'");
        seen[*idx] = true;
        target[f] = *idx;
    }
    for (std::size_t i = 0; i < schema.size(); ++i)
        if (!seen[i]) throw std::runtime_error("missing tag column '" + schema[i].name + "'");

    std::vector<std::vector<std::string_view>> rows;
    rows.reserve(all_lines.size() - first);
    for (std::size_t l = first + 1; l < all_lines.size(); ++l) {
        if (trim(all_lines[l]).empty()) continue;
        rows.push_back(split(all_lines[l], ','));
    }

    TagSeries series;
    series.schema = schema;
    series.timestamps.reserve(rows.size());
    series.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.size()));
    if (has_label) series.labels.reserve(rows.size());

    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& fields = rows[r];
        const auto where = [&] { return " on data row " + std::to_string(r + 1); };
        if (fields.size() != header.size())
            throw std::runtime_error("expected " + std::to_string(header.size()) + " fields" + where());
        try {
            series.timestamps.push_back(parse_timestamp(fields[0]));
            for (std::size_t f = 0; f < tag_fields; ++f)
                series.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(target[f])) =
                    detail::parse_double(fields[f + 1]);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(std::string(e.what()) + where());
        }
        if (has_label) {
            const auto label = parse_label(fields.back());
            if (!label) throw std::runtime_error("unknown label '" + std::string(fields.back()) + "'" + where());
            series.labels.push_back(*label);
        }
    }
    series.validate();
    return series;
}

TagSeries load_csv(const std::filesystem::path& path, const TagSchema& schema) {
    try {
        return parse_csv(detail::read_file(path), schema);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_csv(const std::filesystem::path& path, const TagSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "timestamp";
    for (const auto& tag : series.schema.tags()) out << ',' << tag.name;
    if (series.has_labels()) out << ",label";
    out << '\n';
    std::string line;
    for (std::size_t r = 0; r < series.rows(); ++r) {
        line = format_timestamp(series.timestamps[r]);
        for (std::size_t c = 0; c < series.cols(); ++c) {
            line += ',';
            line += detail::format_double(series.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        }
        if (series.has_labels()) line += series.labels[r] == Label::attack ? ",Attack" : ",Normal";
        line += '\n';
        out << line;
    }
}

std::optional<std::size_t> NormStats::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return i;
    return std::nullopt;
}

NormStats NormStats::subset(std::span<const std::string> tag_names) const {
    NormStats out;
    out.min.resize(static_cast<Eigen::Index>(tag_names.size()));
    out.max.resize(static_cast<Eigen::Index>(tag_names.size()));
    for (std::size_t i = 0; i < tag_names.size(); ++i) {
        const auto idx = index_of(tag_names[i]);
        if (!idx) throw std::invalid_argument("no normalization stats for tag " + tag_names[i]);
        out.names.push_back(tag_names[i]);
        out.min[static_cast<Eigen::Index>(i)] = min[static_cast<Eigen::Index>(*idx)];
        out.max[static_cast<Eigen::Index>(i)] = max[static_cast<Eigen::Index>(*idx)];
    }
    return out;
}

NormStats fit_norm_stats(const TagSeries& train) {
    if (train.rows() == 0) throw std::invalid_argument("cannot fit normalization on an empty series");
    NormStats stats;
    for (const auto& tag : train.schema.tags()) stats.names.push_back(tag.name);
    stats.min = train.values.colwise().minCoeff().transpose();
    stats.max = train.values.colwise().maxCoeff().transpose();
    return stats;
}

namespace {

double constant_scale(double c) { return std::max(std::abs(c), 1.0); }

}  // namespace

double normalize_value(double x, double min, double max) {
    if (max == min) return 0.5 + (x - min) / constant_scale(min);
    return (x - min) / (max - min);
}

double denormalize_value(double x, double min, double max) {
    if (max == min) return min + (x - 0.5) * constant_scale(min);
    return x * (max - min) + min;
}

namespace {

std::vector<std::size_t> stats_columns(const TagSeries& series, const NormStats& stats) {
    std::vector<std::size_t> cols;
    for (const auto& tag : series.schema.tags()) {
        const auto idx = stats.index_of(tag.name);
        if (!idx) throw std::invalid_argument("no normalization stats for tag " + tag.name);
        cols.push_back(*idx);
    }
    return cols;
}

}  // namespace

TagSeries normalize(const TagSeries& series, const NormStats& stats) {
    const auto cols = stats_columns(series, stats);
    TagSeries out = series;
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto j = static_cast<Eigen::Index>(c);
        const double lo = stats.min[static_cast<Eigen::Index>(cols[c])];
        const double hi = stats.max[static_cast<Eigen::Index>(cols[c])];
        for (Eigen::Index r = 0; r < out.values.rows(); ++r)
            out.values(r, j) = normalize_value(series.values(r, j), lo, hi);
    }
    return out;
}

TagSeries denormalize(const TagSeries& series, const NormStats& stats) {
    const auto cols = stats_columns(series, stats);
    TagSeries out = series;
    for (std::size_t c = 0; c < cols.size(); ++c) {
        const auto j = static_cast<Eigen::Index>(c);
        const double lo = stats.min[static_cast<Eigen::Index>(cols[c])];
        const double hi = stats.max[static_cast<Eigen::Index>(cols[c])];
        for (Eigen::Index r = 0; r < out.values.rows(); ++r)
            out.values(r, j) = denormalize_value(series.values(r, j), lo, hi);
    }
    return out;
}

WindowSet::WindowSet(Eigen::MatrixXd process_data, std::vector<Timestamp> timestamps,
                     std::vector<std::string> tag_names)
    : data_(std::move(process_data)), timestamps_(std::move(timestamps)), tag_names_(std::move(tag_names)) {
    if (timestamps_.size() < kWindowLength) throw std::invalid_argument("series too short");
    if (data_.cols() != static_cast<Eigen::Index>(timestamps_.size()) ||
        data_.rows() != static_cast<Eigen::Index>(tag_names_.size()))
        throw std::invalid_argument("window data shape mismatch");
}

template <typename T>
void WindowSet::fill(std::span<const std::size_t> starts, BasicWindowBatch<T>& out) const {
    const auto batch = static_cast<Eigen::Index>(starts.size());
    const auto n = data_.rows();
    out.batch = batch;
    out.encoder_input.resize(n, static_cast<Eigen::Index>(kEncoderLength) * batch);
    out.decoder_hint.resize(n, static_cast<Eigen::Index>(kHintLength) * batch);
    out.target.resize(n, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const auto start = starts[static_cast<std::size_t>(b)];
        if (start >= count()) throw std::out_of_range("window index out of range");
        const auto s = static_cast<Eigen::Index>(start);
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(kEncoderLength); ++t)
            out.encoder_input.col(t * batch + b) = data_.col(s + t).template cast<T>();
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(kHintLength); ++t)
            out.decoder_hint.col(t * batch + b) =
                data_.col(s + static_cast<Eigen::Index>(kEncoderLength) + t).template cast<T>();
        out.target.col(b) = data_.col(s + static_cast<Eigen::Index>(kWindowLength) - 1).template cast<T>();
    }
}

template void WindowSet::fill<float>(std::span<const std::size_t>, BasicWindowBatch<float>&) const;
template void WindowSet::fill<double>(std::span<const std::size_t>, BasicWindowBatch<double>&) const;

WindowStream::WindowStream(const WindowSet& windows, std::size_t batch_size)
    : windows_(&windows), batch_size_(batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

template <typename T>
bool WindowStream::next(BasicWindowBatch<T>& batch) {
    if (next_ >= windows_->count()) return false;
    const auto n = std::min(batch_size_, windows_->count() - next_);
    starts_.resize(n);
    for (std::size_t i = 0; i < n; ++i) starts_[i] = next_ + i;
    windows_->fill<T>(starts_, batch);
    next_ += n;
    return true;
}

template bool WindowStream::next<float>(BasicWindowBatch<float>&);
template bool WindowStream::next<double>(BasicWindowBatch<double>&);

WindowSet make_windows(const TagSeries& normalized, int process_id) {
    if (normalized.rows() < kWindowLength) throw std::invalid_argument("series too short");
    const auto cols = normalized.schema.process_columns(process_id);
    if (cols.empty()) throw std::invalid_argument("no tags for process " + std::to_string(process_id));
    Eigen::MatrixXd data(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(normalized.rows()));
    for (std::size_t i = 0; i < cols.size(); ++i)
        data.row(static_cast<Eigen::Index>(i)) = normalized.values.col(static_cast<Eigen::Index>(cols[i])).transpose();
    return WindowSet(std::move(data), normalized.timestamps, normalized.schema.process_tag_names(process_id));
}

TagSeries load_csv(const std::filesystem::path& path) {
    const auto text = detail::read_file(path);
    try {
        return parse_csv(text, infer_schema(text));
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace icsad
