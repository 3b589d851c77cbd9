#include "csdnet/ssdp.hpp"

#include "csdnet/ops.hpp"

#include <algorithm>
#include <stdexcept>

namespace csdnet::ssdp {

Var pattern_scores(Var features, Var kernel) { return ops::conv2d_1x1(features, kernel); }

PatternMap pattern_map(const Tensor& features, const Tensor& kernel, std::size_t image_h,
                       std::size_t image_w) {
    Tape tape;
    Var p = pattern_scores(tape.constant(features), tape.constant(kernel));
    PatternMap out;
    out.scores = p.value();
    out.resized = ops::bilinear_resize(out.scores, image_h, image_w);
    return out;
}

Tensor binarize(const Tensor& resized) {
    if (resized.rank() != 2) {
        throw std::invalid_argument("binarize: expected H x W map, got " +
                                    shape_to_string(resized.shape()));
    }
    Tensor out(resized.shape(), 0.0);
    const auto [lo, hi] = std::minmax_element(resized.data().begin(), resized.data().end());
    // The computed mean of a constant map can round above its entries.
    if (*lo == *hi) {
        return out;
    }
    const double threshold = resized.sum() / static_cast<double>(resized.size());
    for (std::size_t i = 0; i < resized.size(); ++i) {
        out[i] = resized[i] > threshold ? 1.0 : 0.0;
    }
    return out;
}

Component largest_component(const Tensor& binary) {
    if (binary.rank() != 2) {
        throw std::invalid_argument("largest_component: expected H x W map, got " +
                                    shape_to_string(binary.shape()));
    }
    const std::size_t rows = binary.dim(0), cols = binary.dim(1);
    std::vector<char> seen(binary.size(), 0);
    std::vector<std::size_t> stack;
    std::vector<std::size_t> current;
    std::vector<std::size_t> best;

    for (std::size_t start = 0; start < binary.size(); ++start) {
        if (seen[start] || binary[start] == 0.0) {
            continue;
        }
        current.clear();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t idx = stack.back();
            stack.pop_back();
            current.push_back(idx);
            const std::size_t r = idx / cols, c = idx % cols;
            auto visit = [&](std::size_t n) {
                if (!seen[n] && binary[n] != 0.0) {
                    seen[n] = 1;
                    stack.push_back(n);
                }
            };
            if (r > 0) visit(idx - cols);
            if (r + 1 < rows) visit(idx + cols);
            if (c > 0) visit(idx - 1);
            if (c + 1 < cols) visit(idx + 1);
        }
        // Components are discovered in raster order of their first cell, so
        // strict > keeps the earliest one among equal sizes.
        if (current.size() > best.size()) {
            best = current;
        }
    }

    Component comp;
    if (best.empty()) {
        return comp;
    }
    std::sort(best.begin(), best.end());
    std::size_t r0 = rows, r1 = 0, c0 = cols, c1 = 0;
    comp.cells.reserve(best.size());
    for (auto idx : best) {
        const std::size_t r = idx / cols, c = idx % cols;
        comp.cells.emplace_back(r, c);
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
    }
    comp.bounds = Rect{r0, c0, r1 - r0 + 1, c1 - c0 + 1};
    return comp;
}

namespace {

void squarify(Rect& rect, std::size_t rows, std::size_t cols) {
    const std::size_t side = std::max(rect.height, rect.width);
    auto grow = [](std::size_t start, std::size_t len, std::size_t target, std::size_t limit,
                   std::size_t& out_start, std::size_t& out_len) {
        out_len = std::min(target, limit);
        const std::size_t extra = out_len - len;
        std::size_t s = start >= extra / 2 ? start - extra / 2 : 0;
        if (s + out_len > limit) {
            s = limit - out_len;
        }
        out_start = s;
    };
    Rect r = rect;
    grow(rect.top, rect.height, side, rows, r.top, r.height);
    grow(rect.left, rect.width, side, cols, r.left, r.width);
    rect = r;
}

} // namespace

DiscrepancyMask largest_component_mask(const Tensor& binary, const MaskOptions& options) {
    Component comp = largest_component(binary);
    const std::size_t rows = binary.dim(0), cols = binary.dim(1);
    DiscrepancyMask out;
    if (comp.cells.empty()) {
        out.rect = Rect{0, 0, rows, cols};
        out.fallback = true;
    } else {
        out.rect = comp.bounds;
        if (options.square) {
            squarify(out.rect, rows, cols);
        }
    }
    out.mask = Tensor(binary.shape(), 0.0);
    for (std::size_t r = out.rect.top; r < out.rect.bottom(); ++r) {
        for (std::size_t c = out.rect.left; c < out.rect.right(); ++c) {
            out.mask.at(r, c) = 1.0;
        }
    }
    return out;
}

Tensor augment(const Tensor& image, const DiscrepancyMask& mask) {
    if (image.rank() != 3) {
        throw std::invalid_argument("augment: expected C x H x W image, got " +
                                    shape_to_string(image.shape()));
    }
    const std::size_t ch = image.dim(0), rows = image.dim(1), cols = image.dim(2);
    const Rect& r = mask.rect;
    if (r.height == 0 || r.width == 0 || r.bottom() > rows || r.right() > cols) {
        throw std::invalid_argument("augment: mask rectangle outside the image");
    }
    if (r.height == rows && r.width == cols) {
        return image;
    }
    Tensor crop({ch, r.height, r.width}, 0.0);
    for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t y = 0; y < r.height; ++y) {
            for (std::size_t x = 0; x < r.width; ++x) {
                crop.at(c, y, x) = image.at(c, r.top + y, r.left + x);
            }
        }
    }
    return ops::bilinear_resize(crop, rows, cols);
}

Var refine(Var features, Var scores) {
    return ops::channel_gate(features, ops::sigmoid(scores));
}

Augmentation parse_and_augment(const Tensor& image, const Tensor& features, const Tensor& kernel,
                               const MaskOptions& options) {
    if (image.rank() != 3) {
        throw std::invalid_argument("parse_and_augment: expected C x H x W image");
    }
    Augmentation out;
    out.pattern = pattern_map(features, kernel, image.dim(1), image.dim(2));
    out.mask = largest_component_mask(binarize(out.pattern.resized), options);
    out.image = augment(image, out.mask);
    return out;
}

} // namespace csdnet::ssdp
