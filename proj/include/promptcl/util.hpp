#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "promptcl/errors.hpp"

namespace promptcl {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

using Rng = std::mt19937_64;

inline Mat gaussian(int rows, int cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m(r, c) = dist(rng);
    return m;
}

// FNV-1a over raw bytes; used for bit-identity checks of frozen weights.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t hash_matrix(const Mat& m, uint64_t h = 0xcbf29ce484222325ULL) {
    // Row-major walk so the hash is layout-independent.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(r, c);
            h = fnv1a64(&v, sizeof(v), h);
        }
    return h;
}

/// Write-then-rename so readers never observe partial files.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw DataError("cannot open for writing: " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out)
            throw DataError("short write: " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open: " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

/// Fixed-format float with `digits` decimals; used for stable CSV output.
inline std::string format_fixed(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return std::string(buf);
}

inline double round2(double v) {
    return std::floor(v * 100.0 + 0.5) / 100.0;
}

} // namespace promptcl
