#include "mcfe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

constexpr std::string_view kMagic = "MCFE1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void append_le(std::string& out, const void* src, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(src);
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(bytes), n);
    } else {
        for (std::size_t i = n; i-- > 0;) out.push_back(static_cast<char>(bytes[i]));
    }
}

void read_le(const char* src, void* dst, std::size_t n) {
    auto* bytes = static_cast<unsigned char*>(dst);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(bytes, src, n);
    } else {
        for (std::size_t i = 0; i < n; ++i) bytes[i] = static_cast<unsigned char>(src[n - 1 - i]);
    }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
    nlohmann::json manifest;
    manifest["role"] = checkpoint.role;
    manifest["config"] = checkpoint.config;
    manifest["tensors"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : checkpoint.tensors) {
        const std::uint64_t bytes = tensor.size() * sizeof(double);
        manifest["tensors"].push_back({{"name", name}, {"shape", tensor.shape()}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    }
    const std::string text = manifest.dump();
    const auto length = static_cast<std::uint32_t>(text.size());

    std::string out(kMagic);
    append_le(out, &length, sizeof(length));
    out += text;
    for (const auto& [name, tensor] : checkpoint.tensors)
        for (double v : tensor.data()) append_le(out, &v, sizeof(v));
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    if (bytes.size() < kMagic.size() + 4 || bytes.compare(0, kMagic.size(), kMagic) != 0) {
        throw Error(ErrorKind::format, "checkpoint: missing MCFE1 magic");
    }
    std::uint32_t length = 0;
    read_le(bytes.data() + kMagic.size(), &length, sizeof(length));
    const std::size_t manifest_start = kMagic.size() + 4;
    if (bytes.size() < manifest_start + length) throw Error(ErrorKind::format, "checkpoint: truncated manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(manifest_start, length));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("checkpoint: bad manifest: ") + e.what());
    }
    const std::size_t payload = manifest_start + length;
    Checkpoint out;
    try {
        out.role = manifest.at("role").get<std::string>();
        out.config = manifest.at("config");
        for (const auto& entry : manifest.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto nbytes = entry.at("bytes").get<std::uint64_t>();
            if (nbytes != shape_size(shape) * sizeof(double) || payload + offset + nbytes > bytes.size()) {
                throw Error(ErrorKind::format, "checkpoint: tensor '" + name + "' payload out of range");
            }
            std::vector<double> data(shape_size(shape));
            for (std::size_t i = 0; i < data.size(); ++i) read_le(bytes.data() + payload + offset + i * sizeof(double), &data[i], sizeof(double));
            out.tensors.emplace(name, Tensor(shape, std::move(data)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("checkpoint: bad manifest: ") + e.what());
    }
    return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot open " + path + " for writing");
    const std::string bytes = serialize_checkpoint(checkpoint);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

std::uint64_t checksum(const ParamSet& params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, tensor] : params) {
        mix(name.data(), name.size());
        for (auto extent : tensor.shape()) mix(&extent, sizeof(extent));
        mix(tensor.data().data(), tensor.size() * sizeof(double));
    }
    return h;
}

}  // namespace mcfe
