#pragma once

#include "vickam/error.hpp"
#include "vickam/random.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace vickam {

using Dims = std::vector<std::size_t>;

inline std::string dims_to_string(const Dims& dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

inline std::size_t dims_numel(const Dims& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline void check_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) fail(ErrorCode::numeric, std::string("non-finite value in ") + what);
    }
}

/// Dense row-major float32 tensor of rank 1..4 (last index fastest).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Dims dims, float fill = 0.0f) : dims_(std::move(dims)) {
        validate_dims(dims_);
        data_.assign(dims_numel(dims_), fill);
    }

    Tensor(Dims dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data)) {
        validate_dims(dims_);
        if (data_.size() != dims_numel(dims_)) {
            fail(ErrorCode::shape, "tensor data length " + std::to_string(data_.size()) +
                                       " does not match dims " + dims_to_string(dims_));
        }
    }

    /// Rounds 64-bit values to storage precision. Rejects non-finite input.
    static Tensor from_doubles(Dims dims, std::span<const double> values) {
        check_finite(values, "tensor");
        std::vector<float> data(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<float>(values[i]);
        return Tensor(std::move(dims), std::move(data));
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }

    std::vector<double> to_doubles() const { return {data_.begin(), data_.end()}; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(std::size_t i, std::size_t j) { return data_[offset({i, j})]; }
    float at(std::size_t i, std::size_t j) const { return data_[offset({i, j})]; }
    float& at(std::size_t i, std::size_t j, std::size_t k) { return data_[offset({i, j, k})]; }
    float at(std::size_t i, std::size_t j, std::size_t k) const { return data_[offset({i, j, k})]; }
    float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data_[offset({i, j, k, l})];
    }
    float at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data_[offset({i, j, k, l})];
    }

    std::string shape_string() const { return dims_to_string(dims_); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        if (a.dims_ != b.dims_) return false;
        return std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
    }

private:
    static void validate_dims(const Dims& dims) {
        if (dims.empty() || dims.size() > 4) {
            fail(ErrorCode::shape, "unsupported rank " + std::to_string(dims.size()));
        }
        for (auto d : dims) {
            if (d == 0) fail(ErrorCode::shape, "zero extent in dims " + dims_to_string(dims));
        }
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        std::size_t off = 0;
        std::size_t axis = 0;
        for (auto i : idx) off = off * dims_[axis++] + i;
        return off;
    }

    Dims dims_;
    std::vector<float> data_;
};

// --- TensorFile ------------------------------------------------------------
//
// Layout: "VKT1" | rank:u8 | dims: rank x u32 LE | payload: numel x f32 LE.

inline constexpr std::array<char, 4> kTensorMagic{'V', 'K', 'T', '1'};

namespace detail {

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::format, "cannot open file for reading", path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::format, "cannot open file for writing", path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::format, "write failed", path.string());
}

} // namespace detail

inline std::vector<unsigned char> encode_tensor(const Tensor& t) {
    std::vector<unsigned char> out;
    out.reserve(5 + 4 * t.rank() + 4 * t.numel());
    out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (auto d : t.dims()) detail::put_u32_le(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Tensor decode_tensor(std::span<const unsigned char> bytes, const std::string& path = {}) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0) {
        fail(ErrorCode::format, "not a VKT1 file", path);
    }
    const std::size_t rank = bytes[4];
    if (rank == 0 || rank > 4) fail(ErrorCode::format, "unsupported rank " + std::to_string(rank), path);
    if (bytes.size() < 5 + 4 * rank) fail(ErrorCode::format, "size mismatch: truncated header", path);
    Dims dims(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        dims[i] = detail::get_u32_le(bytes.data() + 5 + 4 * i);
        if (dims[i] == 0) fail(ErrorCode::format, "zero extent in dims", path);
    }
    const std::size_t numel = dims_numel(dims);
    const std::size_t header = 5 + 4 * rank;
    if (bytes.size() != header + 4 * numel) {
        fail(ErrorCode::format,
             "size mismatch: dims " + dims_to_string(dims) + " need " + std::to_string(4 * numel) +
                 " payload bytes, found " + std::to_string(bytes.size() - header),
             path);
    }
    std::vector<float> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
        data[i] = std::bit_cast<float>(detail::get_u32_le(bytes.data() + header + 4 * i));
    }
    return Tensor(std::move(dims), std::move(data));
}

inline void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    const auto bytes = encode_tensor(t);
    detail::write_file_bytes(path, bytes);
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    return decode_tensor(bytes, path.string());
}

// --- Seeded fill -------------------------------------------------------------

enum class Distribution { uniform, gaussian };

/// Deterministic fill. Element i draws from the counter stream keyed by
/// `seed`:
///   uniform:  u = (word(2i) >> 40) * 2^-24, value = 2u - 1 (exact in float)
///   gaussian: Box-Muller on word(2i), word(2i+1), value = float(sigma * z)
inline Tensor seeded_fill(const Dims& dims, std::uint64_t seed, Distribution dist = Distribution::uniform,
                          double sigma = 1.0) {
    Tensor t(dims);
    auto data = t.data();
    if (dist == Distribution::gaussian && sigma == 0.0) return t;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto w0 = counter_word(seed, 2 * i);
        if (dist == Distribution::uniform) {
            data[i] = static_cast<float>(2.0 * word_to_unit24(w0) - 1.0);
        } else {
            data[i] = static_cast<float>(sigma * words_to_normal(w0, counter_word(seed, 2 * i + 1)));
        }
    }
    return t;
}

} // namespace vickam
