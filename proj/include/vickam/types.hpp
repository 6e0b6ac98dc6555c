#pragma once

#include "vickam/error.hpp"
#include "vickam/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace vickam {

/// Global representation of one sample: an h x w x C grid, channel last.
class FeatureMap {
public:
    FeatureMap() = default;
    explicit FeatureMap(Tensor grid) : grid_(std::move(grid)) {
        if (grid_.rank() != 3) {
            fail(ErrorCode::shape, "feature map must be rank 3 (h x w x C), got " + grid_.shape_string());
        }
    }

    std::size_t height() const { return grid_.dim(0); }
    std::size_t width() const { return grid_.dim(1); }
    std::size_t channels() const { return grid_.dim(2); }
    const Tensor& grid() const noexcept { return grid_; }
    Tensor& grid() noexcept { return grid_; }

private:
    Tensor grid_;
};

/// One p x p x C patch tagged with its action class.
struct Prototype {
    Tensor patch;
    std::size_t action_id = 0;

    std::size_t size() const { return patch.dim(0); }
    std::size_t channels() const { return patch.dim(2); }
};

/// Class-averaged ROI features, K_a x p x p x C, plus per-class sample counts.
struct PrototypeBank {
    Tensor prototypes;
    std::vector<std::size_t> counts;
    std::vector<std::string> action_names;

    std::size_t num_actions() const { return prototypes.dim(0); }
    std::size_t size() const { return prototypes.dim(1); }
    std::size_t channels() const { return prototypes.dim(3); }

    Prototype prototype(std::size_t k) const {
        const std::size_t p = size();
        const std::size_t c = channels();
        const std::size_t n = p * p * c;
        auto src = prototypes.data().subspan(k * n, n);
        return {Tensor({p, p, c}, std::vector<float>(src.begin(), src.end())), k};
    }
};

/// Per-action likelihood surfaces, K_a x h x w.
struct ActionMapStack {
    Tensor maps;

    std::size_t num_actions() const { return maps.dim(0); }
    std::size_t height() const { return maps.dim(1); }
    std::size_t width() const { return maps.dim(2); }
};

/// Individual box in feature-grid cell units. Cell (i, j) spans
/// [j, j+1) x [i, i+1), so a box covering cells x in [a, b] has x0 = a, x1 = b + 1.
struct BoxAnnotation {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    std::size_t action_id = 0;
};

/// Maps (x, y) to (a*x + b*y + tx, c*x + d*y + ty), grid-cell units.
struct AffineTransform {
    double a = 1, b = 0, tx = 0;
    double c = 0, d = 1, ty = 0;

    static AffineTransform identity() { return {}; }
    double determinant() const { return a * d - b * c; }
};

/// Training sample carrying the individual annotations used by stage 1.
struct AnnotatedSample {
    FeatureMap grid;
    std::size_t group = 0;
    AffineTransform affine;
    std::vector<BoxAnnotation> boxes;
};

/// Sample as seen by stage 2 and evaluation: no boxes, no action labels.
struct GroupSample {
    FeatureMap grid;
    std::size_t group = 0;
};

} // namespace vickam
