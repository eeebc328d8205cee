#include <cstring>
#include <fstream>

#include "dagan/checkpoint.hpp"
#include "dagan/common.hpp"
#include "json.hpp"

namespace dagan {
namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'A', 'G', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ConfigError(std::string("checkpoint truncated reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ParamMap& params, const std::filesystem::path& path) {
    const bool f32 = default_precision() == Precision::f32;
    json header = json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : params) {
        const std::size_t bytes = static_cast<std::size_t>(t.numel()) * (f32 ? 4 : 8);
        header[name] = {{"shape", t.shape()}, {"dtype", f32 ? "f32" : "f64"}, {"offset", offset}};
        offset += bytes;
    }
    const std::string hs = header.dump();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : params) {
        t.validate_finite("checkpoint tensor '" + name + "'");
        if (f32) {
            std::vector<float> buf(t.data().begin(), t.data().end());
            out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
        } else {
            out.write(reinterpret_cast<const char*>(t.data().data()),
                      static_cast<std::streamsize>(t.data().size() * 8));
        }
    }
    if (!out) throw ConfigError("short write: " + path.string());
}

ParamMap load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ConfigError("not a checkpoint: " + path.string());
    const std::uint32_t version = get_u32(in, "version");
    if (version != kVersion)
        throw ConfigError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
    const std::uint32_t hlen = get_u32(in, "header length");
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw ConfigError("checkpoint truncated reading header: " + path.string());
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw ConfigError("bad checkpoint header in " + path.string() + ": " + e.what());
    }
    const std::streampos payload_start = in.tellg();

    ParamMap out;
    for (auto it = header.begin(); it != header.end(); ++it) {
        const auto& meta = it.value();
        std::vector<int> shape = meta.at("shape").get<std::vector<int>>();
        const std::string dtype = meta.at("dtype").get<std::string>();
        const std::size_t offset = meta.at("offset").get<std::size_t>();
        const std::int64_t n = shape_numel(shape);
        if (dtype != "f32" && dtype != "f64") throw ConfigError("unknown dtype '" + dtype + "' in " + path.string());
        in.seekg(payload_start + static_cast<std::streamoff>(offset));
        std::vector<double> data(static_cast<std::size_t>(n));
        if (dtype == "f32") {
            std::vector<float> buf(static_cast<std::size_t>(n));
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
            if (!in) throw ConfigError("checkpoint truncated reading '" + it.key() + "': " + path.string());
            std::copy(buf.begin(), buf.end(), data.begin());
        } else {
            in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
            if (!in) throw ConfigError("checkpoint truncated reading '" + it.key() + "': " + path.string());
        }
        out.insert(it.key(), Tensor::from_data(std::move(shape), std::move(data), true));
    }
    return out;
}

ParamMap strip_prefix(const ParamMap& params, const std::string& prefix) {
    ParamMap out;
    for (const auto& [name, t] : params)
        if (name.rfind(prefix, 0) == 0) out.insert(name.substr(prefix.size()), t);
    if (out.size() == 0) throw ConfigError("checkpoint has no tensors under prefix '" + prefix + "'");
    return out;
}

}  // namespace dagan
