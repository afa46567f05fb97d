// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file layout (all integers and doubles little-endian):
//
//   char[8]   magic "CMIDCKPT"
//   uint32    format version (currently 1)
//   uint32    tensor count
//   repeated per tensor:
//     uint32  name length, followed by the UTF-8 name bytes
//     uint32  rank, followed by rank × uint64 dimensions
//     double  product(dims) values, row-major

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmid/nn/tensor.hpp"

namespace cmid::nn {

inline constexpr char kCheckpointMagic[8] = {'C', 'M', 'I', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {
template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T read_pod(std::istream& is, const std::string& path) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("checkpoint: truncated file " + path);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("checkpoint: cannot open " + path + " for writing");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::write_pod<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.values.data()),
                 static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    if (!os) throw ConfigError("checkpoint: write failed for " + path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open " + path);
    char magic[8];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw ConfigError("checkpoint: bad magic in " + path);
    }
    const auto version = detail::read_pod<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw ConfigError("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
    }
    const auto count = detail::read_pod<std::uint32_t>(is, path);
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = detail::read_pod<std::uint32_t>(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw ConfigError("checkpoint: truncated file " + path);
        const auto rank = detail::read_pod<std::uint32_t>(is, path);
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_pod<std::uint64_t>(is, path);
        Tensor t(shape);
        if (!is.read(reinterpret_cast<char*>(t.values.data()),
                     static_cast<std::streamsize>(t.values.size() * sizeof(double)))) {
            throw ConfigError("checkpoint: truncated file " + path);
        }
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace cmid::nn
