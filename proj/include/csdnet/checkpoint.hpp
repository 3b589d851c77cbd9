#pragma once

#include "csdnet/backbone.hpp"
#include "csdnet/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csdnet {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct OptimizerSnapshot {
    std::uint64_t step = 0;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
};

/// Little-endian layout:
///   "CSD1" | u64 config digest | u32 tensor count
///   per tensor: u32 name length, name, u32 rank, u32 extents[rank], f32 payload
///   u8 optimizer flag; when 1: u64 step, then f64 first and second moments
///   for every tensor in order.
struct Checkpoint {
    std::uint64_t config_digest = 0;
    std::vector<NamedTensor> tensors;
    std::optional<OptimizerSnapshot> optimizer;
};

Checkpoint make_checkpoint(const Model& model, std::uint64_t config_digest,
                           std::optional<OptimizerSnapshot> optimizer = std::nullopt);

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct ApplyResult {
    bool digest_matched = true;
    std::vector<std::string> warnings;
};

/// Copies tensors into `model` by name. Nothing is modified unless every
/// name and shape agrees. A digest mismatch is reported, not fatal.
ApplyResult apply_checkpoint(const Checkpoint& checkpoint, Model& model,
                             std::optional<std::uint64_t> expected_digest = std::nullopt);

/// Builds a model whose layout (class count, kernel presence) follows the
/// checkpoint, then applies it.
Model model_from_checkpoint(const Checkpoint& checkpoint);

/// FNV-1a over names, shapes and float32 bytes of every tensor.
std::uint64_t parameter_checksum(const Model& model);

} // namespace csdnet
