#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include "common.hpp"

namespace hvlab::io {

// Repo-wide dump format: 16-byte magic, u32 version, u32 rank, rank x u64
// extents, float64 little-endian payload. Complex arrays carry a trailing
// extent 2 (interleaved re, im).
inline constexpr char kMagic[16] = {'H', 'V', 'L', 'A', 'B', '-', 'G', 'R', 'I', 'D', 0, 0, 0, 0, 0, 0};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "grid dumps assume a little-endian host");

struct GridArray {
    std::vector<std::uint64_t> extents;
    rvec data;

    bool is_complex() const { return !extents.empty() && extents.back() == 2; }
    cvec as_complex() const {
        cvec out(data.size() / 2);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = {data[2 * i], data[2 * i + 1]};
        return out;
    }
};

inline void write_grid(const std::string& path, const std::vector<std::uint64_t>& extents, const double* data,
                       std::size_t count) {
    std::uint64_t expect = 1;
    for (auto e : extents) expect *= e;
    if (expect != count) throw FormatError("write_grid: extents do not match payload size");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    std::uint32_t rank = static_cast<std::uint32_t>(extents.size());
    f.write(kMagic, 16);
    f.write(reinterpret_cast<const char*>(&kVersion), 4);
    f.write(reinterpret_cast<const char*>(&rank), 4);
    f.write(reinterpret_cast<const char*>(extents.data()), 8 * extents.size());
    f.write(reinterpret_cast<const char*>(data), 8 * count);
    if (!f) throw FormatError("short write to " + path);
}

inline void write_grid(const std::string& path, std::vector<std::uint64_t> extents, const rvec& v) {
    write_grid(path, extents, v.data(), v.size());
}

inline void write_grid(const std::string& path, std::vector<std::uint64_t> extents, const cvec& v) {
    extents.push_back(2);
    write_grid(path, extents, reinterpret_cast<const double*>(v.data()), 2 * v.size());
}

inline GridArray read_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    char magic[16];
    f.read(magic, 16);
    if (!f || std::memcmp(magic, kMagic, 16) != 0) throw FormatError(path + ": bad magic");
    std::uint32_t version = 0, rank = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&rank), 4);
    if (version != kVersion) throw FormatError(path + ": unsupported version");
    if (rank > 16) throw FormatError(path + ": implausible rank");
    GridArray g;
    g.extents.resize(rank);
    f.read(reinterpret_cast<char*>(g.extents.data()), 8 * rank);
    std::uint64_t n = 1;
    for (auto e : g.extents) n *= e;
    g.data.resize(n);
    f.read(reinterpret_cast<char*>(g.data.data()), 8 * n);
    if (!f) throw FormatError(path + ": truncated payload");
    return g;
}

}  // namespace hvlab::io
