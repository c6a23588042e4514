#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "icsad/seqmodel.hpp"
#include "text_util.hpp"

namespace icsad {
namespace {

constexpr char kMagic[8] = {'I', 'C', 'S', 'A', 'D', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename U>
void put(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

template <typename U>
U take(std::string_view& in) {
    if (in.size() < sizeof(U)) throw std::runtime_error("truncated checkpoint");
    U value;
    std::memcpy(&value, in.data(), sizeof(U));
    in.remove_prefix(sizeof(U));
    return value;
}

nlohmann::ordered_json header_json(const SeqModelParams& params) {
    nlohmann::ordered_json j;
    const auto& c = params.config;
    j["config"] = {{"n_tags", c.n_tags},         {"hidden_dim", c.hidden_dim}, {"num_layers", c.num_layers},
                   {"process_id", c.process_id}, {"seed", c.seed},             {"attention", to_string(c.attention)}};
    auto& norm = j["norm_stats"];
    norm = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < params.norm_stats.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        norm.push_back({{"tag", params.norm_stats.names[i]},
                        {"min", params.norm_stats.min[k]},
                        {"max", params.norm_stats.max[k]}});
    }
    auto& slots = j["tensors"];
    slots = nlohmann::ordered_json::array();
    const auto layout = params.layout();
    for (const auto& s : layout.slots())
        slots.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"offset", s.offset}});
    return j;
}

}  // namespace

std::string serialize_checkpoint(const SeqModelParams& params) {
    if (params.values.size() != params.layout().total())
        throw std::invalid_argument("parameter vector does not match its layout");
    const std::string header = header_json(params).dump();
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, header.size());
    out += header;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(params.values.size()));
    out.append(reinterpret_cast<const char*>(params.values.data()),
               static_cast<std::size_t>(params.values.size()) * sizeof(double));
    return out;
}

SeqModelParams deserialize_checkpoint(std::string_view in) {
    if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("not a checkpoint (bad magic)");
    in.remove_prefix(sizeof kMagic);
    const auto version = take<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = take<std::uint64_t>(in);
    if (in.size() < header_len) throw std::runtime_error("truncated checkpoint header");
    const auto j = nlohmann::json::parse(in.substr(0, header_len));
    in.remove_prefix(header_len);

    SeqModelParams params;
    const auto& c = j.at("config");
    params.config.n_tags = c.at("n_tags").get<int>();
    params.config.hidden_dim = c.at("hidden_dim").get<int>();
    params.config.num_layers = c.at("num_layers").get<int>();
    params.config.process_id = c.at("process_id").get<int>();
    params.config.seed = c.at("seed").get<std::uint64_t>();
    params.config.attention = parse_attention_kind(c.at("attention").get<std::string>());

    const auto& norm = j.at("norm_stats");
    params.norm_stats.min.resize(static_cast<Eigen::Index>(norm.size()));
    params.norm_stats.max.resize(static_cast<Eigen::Index>(norm.size()));
    for (std::size_t i = 0; i < norm.size(); ++i) {
        params.norm_stats.names.push_back(norm[i].at("tag").get<std::string>());
        params.norm_stats.min[static_cast<Eigen::Index>(i)] = norm[i].at("min").get<double>();
        params.norm_stats.max[static_cast<Eigen::Index>(i)] = norm[i].at("max").get<double>();
    }

    const auto layout = params.layout();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != layout.slots().size()) throw std::runtime_error("checkpoint tensor table mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& s = layout.slots()[i];
        if (tensors[i].at("name").get<std::string>() != s.name || tensors[i].at("rows").get<Eigen::Index>() != s.rows ||
            tensors[i].at("cols").get<Eigen::Index>() != s.cols)
            throw std::runtime_error("checkpoint tensor " + s.name + " does not match the configured architecture");
    }

    const auto count = take<std::uint64_t>(in);
    if (count != static_cast<std::uint64_t>(layout.total()) || in.size() != count * sizeof(double))
        throw std::runtime_error("checkpoint parameter block has the wrong size");
    params.values.resize(layout.total());
    std::memcpy(params.values.data(), in.data(), in.size());
    if (!params.values.allFinite()) throw std::runtime_error("checkpoint holds non-finite parameters");
    return params;
}

void save_checkpoint(const std::filesystem::path& path, const SeqModelParams& params) {
    const auto bytes = serialize_checkpoint(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

SeqModelParams load_checkpoint(const std::filesystem::path& path) {
    try {
        return deserialize_checkpoint(detail::read_file(path));
    } catch (const std::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace icsad
