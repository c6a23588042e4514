#include "icsad/swat.hpp"

#include <cctype>
#include <optional>
#include <stdexcept>

#include "text_util.hpp"

namespace icsad {

const TagSchema& swat_schema() {
    static const TagSchema schema = [] {
        static const char* const names[] = {
            "FIT-101", "LIT-101", "MV-101",  "P-101",   "P-102",   "AIT-201", "AIT-202", "AIT-203",
            "FIT-201", "MV-201",  "P-201",   "P-202",   "P-203",   "P-204",   "P-205",   "P-206",
            "DPIT-301", "FIT-301", "LIT-301", "MV-301", "MV-302",  "MV-303",  "MV-304",  "P-301",
            "P-302",   "AIT-401", "AIT-402", "FIT-401", "LIT-401", "P-401",   "P-402",   "P-403",
            "P-404",   "UV-401",  "AIT-501", "AIT-502", "AIT-503", "AIT-504", "FIT-501", "FIT-502",
            "FIT-503", "FIT-504", "P-501",   "P-502",   "PIT-501", "PIT-502", "PIT-503", "FIT-601",
            "P-601",   "P-602",   "P-603"};
        std::vector<std::string> list(std::begin(names), std::end(names));
        return TagSchema::from_names(list);
    }();
    return schema;
}

std::string canonical_swat_name(std::string_view raw) {
    std::string compact;
    for (char c : raw)
        if (c != ' ' && c != '\t' && c != '-' && c != '_') compact += c;
    std::size_t split = 0;
    while (split < compact.size() && std::isalpha(static_cast<unsigned char>(compact[split]))) ++split;
    if (split == 0 || split == compact.size()) return compact;
    return compact.substr(0, split) + "-" + compact.substr(split);
}

Timestamp parse_swat_timestamp(std::string_view raw) {
    auto text = detail::trim(raw);
    // dd/mm/yyyy h:mm:ss[.fff] AM|PM
    const auto space = text.find(' ');
    if (space == std::string_view::npos) throw std::invalid_argument("bad SWaT timestamp");
    const auto date = detail::split(text.substr(0, space), '/');
    auto rest = detail::trim(text.substr(space + 1));
    bool pm = false, has_meridiem = false;
    if (rest.size() > 2) {
        const auto tail = detail::to_lower(rest.substr(rest.size() - 2));
        if (tail == "am" || tail == "pm") {
            has_meridiem = true;
            pm = tail == "pm";
            rest = detail::trim(rest.substr(0, rest.size() - 2));
        }
    }
    const auto clock = detail::split(rest, ':');
    if (date.size() != 3 || clock.size() != 3) throw std::invalid_argument("bad SWaT timestamp: " + std::string(text));
    const auto day = static_cast<unsigned>(detail::parse_int(date[0]));
    const auto month = static_cast<unsigned>(detail::parse_int(date[1]));
    const auto year = static_cast<int>(detail::parse_int(date[2]));
    auto hour = static_cast<int>(detail::parse_int(clock[0]));
    const auto minute = static_cast<int>(detail::parse_int(clock[1]));
    const auto second = static_cast<int>(detail::parse_double(clock[2]));
    if (has_meridiem) {
        if (hour == 12) hour = 0;
        if (pm) hour += 12;
    }
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
    if (!ymd.ok()) throw std::invalid_argument("bad SWaT date: " + std::string(text));
    return std::chrono::sys_days{ymd} + std::chrono::hours{hour} + std::chrono::minutes{minute} + Seconds{second};
}

TagSeries load_swat_csv(const std::filesystem::path& path) {
    const auto text = detail::read_file(path);
    const auto all = detail::lines(text);
    const auto& schema = swat_schema();

    // Some exports carry a banner line before the header.
    std::size_t header_line = 0;
    while (header_line < all.size() && detail::to_lower(all[header_line]).find("timestamp") == std::string::npos)
        ++header_line;
    if (header_line == all.size()) throw std::runtime_error(path.string() + ": no SWaT header row");

    const auto header = detail::split(all[header_line], ',');
    std::vector<std::optional<std::size_t>> target(header.size());
    std::optional<std::size_t> label_col;
    for (std::size_t f = 1; f < header.size(); ++f) {
        const auto name = detail::to_lower(detail::trim(header[f]));
        if (name == "normal/attack" || name == "label") {
            label_col = f;
            continue;
        }
        target[f] = schema.index_of(canonical_swat_name(header[f]));
        if (!target[f]) throw std::runtime_error(path.string() + ": unknown SWaT column '" + std::string(header[f]) + "'");
    }

    std::vector<std::vector<std::string_view>> rows;
    for (std::size_t l = header_line + 1; l < all.size(); ++l)
        if (!detail::trim(all[l]).empty()) rows.push_back(detail::split(all[l], ','));

    TagSeries series;
    series.schema = schema;
    series.values.setZero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(schema.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& fields = rows[r];
        if (fields.size() != header.size())
            throw std::runtime_error(path.string() + ": field count mismatch on row " + std::to_string(r + 1));
        try {
            series.timestamps.push_back(parse_swat_timestamp(fields[0]));
            for (std::size_t f = 1; f < fields.size(); ++f)
                if (target[f])
                    series.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(*target[f])) =
                        detail::parse_double(fields[f]);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path.string() + ": " + e.what() + " on row " + std::to_string(r + 1));
        }
        if (label_col) {
            auto label = detail::to_lower(fields[*label_col]);
            std::erase(label, ' ');
            series.labels.push_back(label == "attack" ? Label::attack : Label::normal);
        }
    }
    series.validate();
    return series;
}

}  // namespace icsad
