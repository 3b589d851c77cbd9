#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace csdnet {

inline constexpr std::array<std::size_t, 4> kBackboneChannels{3, 8, 16, 32};
inline constexpr std::size_t kEmbeddingWidth = kBackboneChannels.back();
/// Three stride-2 blocks shrink each spatial extent by this factor.
inline constexpr std::size_t kFeatureStride = 8;

/// Rounds every entry to the nearest float. Parameters are kept at single
/// precision so that checkpoints round-trip bit-exactly.
void quantize_to_float(Tensor& t) noexcept;

/// Throws std::invalid_argument unless the image is 3 x H x W with H, W
/// positive multiples of kFeatureStride.
void validate_image_shape(const Shape& shape);

/// Three conv blocks (3x3, stride 2, padding 1, bias, ReLU), 3 -> 8 -> 16 -> 32,
/// applied to the image shifted by -0.5.
struct TinyBackbone {
    std::array<Tensor, 3> weights;
    std::array<Tensor, 3> biases;

    /// Weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.
    static TinyBackbone initialize(std::uint64_t seed);
};

/// Linear classifier shared by the raw and augmented branches.
struct Head {
    Tensor weight; // K x D
    Tensor bias;   // K

    static Head initialize(std::size_t classes, std::size_t width, std::uint64_t seed);
    std::size_t classes() const { return weight.dim(0); }
    std::size_t width() const { return weight.dim(1); }
};

struct ModelOptions {
    std::size_t classes = 2;
    /// Whether the content-aware kernel (and therefore refinement) exists.
    bool discrepancy_kernel = true;
};

/// All trainable state. Parameter order is fixed and shared by the
/// optimizer, checkpoints and bound tapes.
struct Model {
    TinyBackbone backbone;
    Head head;
    std::optional<Tensor> kernel; // content-aware kernel W_K, length C

    static Model initialize(const ModelOptions& options, std::uint64_t seed);

    std::size_t classes() const { return head.classes(); }
    std::vector<std::string> parameter_names() const;
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
};

/// Model parameters placed on a tape, either trainable or detached.
struct BoundModel {
    std::array<Var, 3> weights;
    std::array<Var, 3> biases;
    Var head_weight;
    Var head_bias;
    std::optional<Var> kernel;

    /// Same order as Model::parameters().
    std::vector<Var> parameters() const;
};

BoundModel bind(Tape& tape, const Model& model, bool trainable);

/// I (3 x Ih x Iw) -> X (32 x Ih/8 x Iw/8).
Var extract_features(const BoundModel& model, Var image);

/// W e + b.
Var head_forward(const BoundModel& model, Var embedding);

/// Plain evaluation without a tape.
Tensor head_forward(const Head& head, const Tensor& embedding);

} // namespace csdnet
