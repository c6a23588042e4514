#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "icsad/time.hpp"

namespace icsad {

enum class TagKind : std::uint8_t { sensor, actuator };

std::string_view to_string(TagKind kind);
TagKind parse_tag_kind(std::string_view text);

/// First digit of the tag's trailing number, e.g. MV-101 -> 1, DPIT-301 -> 3.
std::optional<int> derive_process_id(std::string_view tag_name);

/// Sensor/actuator guess from the SWaT-style prefix (FIT, LIT, AIT, PIT, DPIT
/// are sensors; MV, P, UV are actuators).
std::optional<TagKind> guess_tag_kind(std::string_view tag_name);

struct TagInfo {
    std::string name;
    TagKind kind = TagKind::sensor;
    int process_id = 0;
};

/// Ordered tag list with a process partition. Names are unique and every tag
/// belongs to exactly one process.
class TagSchema {
public:
    TagSchema() = default;
    explicit TagSchema(std::vector<TagInfo> tags);

    /// Builds a schema from SWaT-style names, deriving kind and process.
    static TagSchema from_names(std::span<const std::string> names);

    std::size_t size() const { return tags_.size(); }
    bool empty() const { return tags_.empty(); }
    const TagInfo& operator[](std::size_t i) const { return tags_[i]; }
    const std::vector<TagInfo>& tags() const { return tags_; }

    std::optional<std::size_t> index_of(std::string_view name) const;
    std::vector<int> process_ids() const;
    /// Column indices (schema order) of the tags in one process.
    std::vector<std::size_t> process_columns(int process_id) const;
    std::vector<std::string> process_tag_names(int process_id) const;

    bool operator==(const TagSchema& other) const;

private:
    std::vector<TagInfo> tags_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Schema file: one "name,kind,process" line per tag; '#' starts a comment and
/// an optional "name,kind,process" header line is skipped.
TagSchema load_schema(const std::filesystem::path& path);
void write_schema(const std::filesystem::path& path, const TagSchema& schema);

enum class Label : std::uint8_t { normal, attack };

/// Per-second frame of operational data. values is [T x n] in schema column
/// order; labels is either empty or has one entry per row.
struct TagSeries {
    TagSchema schema;
    std::vector<Timestamp> timestamps;
    Eigen::MatrixXd values;
    std::vector<Label> labels;

    std::size_t rows() const { return timestamps.size(); }
    std::size_t cols() const { return schema.size(); }
    bool has_labels() const { return !labels.empty(); }

    /// Throws std::runtime_error unless rows are strictly 1 s apart, values
    /// are finite and the shapes agree.
    void validate() const;

    /// Rows [first, first + count).
    TagSeries slice(std::size_t first, std::size_t count) const;
};

/// Reads "timestamp,<tag>...,[label]". Tag columns may appear in any order but
/// every schema tag must be present; the result uses schema column order.
TagSeries load_csv(const std::filesystem::path& path, const TagSchema& schema);
TagSeries parse_csv(std::string_view text, const TagSchema& schema);
void write_csv(const std::filesystem::path& path, const TagSeries& series);
/// Schema built from the CSV header alone (kinds and processes from the names).
TagSchema infer_schema(std::string_view csv_text);
/// load_csv with the schema inferred from the header.
TagSeries load_csv(const std::filesystem::path& path);

/// Per-tag min/max over the training rows, keyed by tag name.
struct NormStats {
    std::vector<std::string> names;
    Eigen::VectorXd min;
    Eigen::VectorXd max;

    std::size_t size() const { return names.size(); }
    std::optional<std::size_t> index_of(std::string_view name) const;
    /// Stats for the named tags, in the given order. Throws if one is missing.
    NormStats subset(std::span<const std::string> tag_names) const;
    bool operator==(const NormStats& other) const = default;
};

NormStats fit_norm_stats(const TagSeries& train);

/// Min-max scaling: (x - min) / (max - min). Values outside the training
/// range are kept (not clipped). A constant tag c maps to 0.5 and moves by
/// (x - c) / max(|c|, 1) when it changes.
double normalize_value(double x, double min, double max);
double denormalize_value(double x, double min, double max);
TagSeries normalize(const TagSeries& series, const NormStats& stats);
/// Inverse of normalize.
TagSeries denormalize(const TagSeries& series, const NormStats& stats);

inline constexpr std::size_t kWindowLength = 100;
inline constexpr std::size_t kEncoderLength = 90;
inline constexpr std::size_t kHintLength = 9;

/// A batch of windows for one process. Matrices are tag-major columns laid
/// out as (sequence step, batch): column t * batch + b holds step t of
/// window b. encoder_input covers seconds 1..90, decoder_hint 91..99 and
/// target second 100.
template <typename T>
struct BasicWindowBatch {
    using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

    Eigen::Index batch = 0;
    Matrix encoder_input;
    Matrix decoder_hint;
    Matrix target;

    Eigen::Index tags() const { return target.rows(); }
};
using WindowBatch = BasicWindowBatch<double>;

/// All stride-1 windows of one process. Window i starts at row i and its
/// target is row i + 99.
class WindowSet {
public:
    WindowSet(Eigen::MatrixXd process_data, std::vector<Timestamp> timestamps,
              std::vector<std::string> tag_names);

    std::size_t count() const { return timestamps_.size() - kWindowLength + 1; }
    std::size_t tags() const { return static_cast<std::size_t>(data_.rows()); }
    const std::vector<std::string>& tag_names() const { return tag_names_; }
    Timestamp target_timestamp(std::size_t window) const {
        return timestamps_[window + kWindowLength - 1];
    }
    /// [tags x T] normalized process data.
    const Eigen::MatrixXd& data() const { return data_; }

    /// Fills a batch with the windows starting at the given rows.
    template <typename T>
    void fill(std::span<const std::size_t> starts, BasicWindowBatch<T>& batch) const;

    template <typename T>
    BasicWindowBatch<T> batch(std::span<const std::size_t> starts) const {
        BasicWindowBatch<T> out;
        fill(starts, out);
        return out;
    }

private:
    Eigen::MatrixXd data_;
    std::vector<Timestamp> timestamps_;
    std::vector<std::string> tag_names_;
};

/// Sequential single-consumer stream of batches over a WindowSet.
class WindowStream {
public:
    WindowStream(const WindowSet& windows, std::size_t batch_size);

    /// Returns false once every window has been emitted.
    template <typename T>
    bool next(BasicWindowBatch<T>& batch);

    std::size_t position() const { return next_; }

private:
    const WindowSet* windows_;
    std::size_t batch_size_;
    std::size_t next_ = 0;
    std::vector<std::size_t> starts_;
};

/// Restricts a normalized series to one process and prepares its windows.
/// Throws "series too short" when T < 100.
WindowSet make_windows(const TagSeries& normalized, int process_id);

}  // namespace icsad
