#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>

namespace csdnet::cli {

// Exit codes shared by every command.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kBadInput = 2;
inline constexpr int kDiverged = 3;

/// Trains from a JSON config and writes the metrics file and the final
/// checkpoint into `out_dir`. `seed` overrides trainer.seed.
int cmd_train(const std::filesystem::path& config, const std::filesystem::path& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);

/// Prints test-split top-1 accuracy and images/second (all images when the
/// dataset has no test split).
int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
             bool dual_branch, std::ostream& out, std::ostream& err);

/// Writes <stem>.mask.ppm and <stem>.aug.ppm next to `image`.
int cmd_augment(const std::filesystem::path& image, const std::filesystem::path& checkpoint,
                std::ostream& out, std::ostream& err);

/// Runs the gradient suite and prints the worst relative error per op.
int cmd_gradcheck(std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);

/// Generates the synthetic dataset described by the config's data section.
/// `seed` overrides data.seed.
int cmd_gen_data(const std::filesystem::path& config, const std::filesystem::path& out_dir,
                 std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);

} // namespace csdnet::cli
