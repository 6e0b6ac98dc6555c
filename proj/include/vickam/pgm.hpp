#pragma once

#include "vickam/error.hpp"
#include "vickam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vickam {

/// Binary P5 image, maxval 255. Pixel = round(255 * (v - min) / (max - min));
/// a constant map is all zeros.
inline std::vector<unsigned char> encode_pgm(std::span<const double> values, std::size_t height, std::size_t width) {
    if (values.size() != height * width || values.empty()) fail(ErrorCode::shape, "pgm size does not match image");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, hi = *hi_it;
    const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + values.size());
    for (double v : values) {
        const double scaled = hi > lo ? std::round(255.0 * (v - lo) / (hi - lo)) : 0.0;
        out.push_back(static_cast<unsigned char>(std::clamp(scaled, 0.0, 255.0)));
    }
    return out;
}

inline void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t height,
                      std::size_t width) {
    const auto bytes = encode_pgm(values, height, width);
    detail::write_file_bytes(path, bytes);
}

} // namespace vickam
