#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/tensor.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace csdnet::ssdp {

struct PatternMap {
    Tensor scores;  // H x W, feature resolution
    Tensor resized; // Ih x Iw, image resolution
};

struct Rect {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t bottom() const { return top + height; } // exclusive
    std::size_t right() const { return left + width; }  // exclusive
    friend bool operator==(const Rect&, const Rect&) = default;
};

struct DiscrepancyMask {
    Tensor mask; // Ih x Iw of {0, 1}; 1 exactly inside rect
    Rect rect;
    bool fallback = false; // no foreground cell, whole image used
};

using Cell = std::pair<std::size_t, std::size_t>; // (row, col)

/// A 4-connected set of foreground cells, sorted in raster order.
struct Component {
    std::vector<Cell> cells;
    Rect bounds;
};

struct MaskOptions {
    /// Grow the component's bounding rectangle to a square, shifted to stay
    /// inside the image and clipped when the image is too small.
    bool square = false;
};

/// Differentiable scores P(x,y) = sum_i kernel(i) * X(i,x,y).
Var pattern_scores(Var features, Var kernel);

/// P and its bilinear resize to the image extents. Not differentiable.
PatternMap pattern_map(const Tensor& features, const Tensor& kernel, std::size_t image_h,
                       std::size_t image_w);

/// B(i,j) = 1 iff P(i,j) > mean(P). Constant maps give all zeros.
Tensor binarize(const Tensor& resized);

/// Largest 4-connected foreground component; ties go to the component whose
/// first cell in raster order comes first. Empty when B has no foreground.
Component largest_component(const Tensor& binary);

/// Filled bounding rectangle of the largest component, or the whole image
/// when B has no foreground.
DiscrepancyMask largest_component_mask(const Tensor& binary, const MaskOptions& options = {});

/// Crops the masked rectangle and scales it back to the full image extents.
Tensor augment(const Tensor& image, const DiscrepancyMask& mask);

/// X_s = sigmoid(P) * X, broadcast over channels.
Var refine(Var features, Var scores);

/// Full parsing chain: features -> P -> P_hat -> B -> M -> I'.
struct Augmentation {
    PatternMap pattern;
    DiscrepancyMask mask;
    Tensor image;
};
Augmentation parse_and_augment(const Tensor& image, const Tensor& features, const Tensor& kernel,
                               const MaskOptions& options = {});

} // namespace csdnet::ssdp
