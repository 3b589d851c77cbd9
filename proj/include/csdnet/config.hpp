#pragma once

#include "csdnet/dataset.hpp"
#include "csdnet/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace csdnet {

/// Raised for unknown keys, wrong types and out-of-range values. The
/// message starts with the dotted key path, e.g. "ddl.alpha: ...".
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& message)
        : std::runtime_error(key + ": " + message), key_(key) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct IoConfig {
    /// When set, train on this dataset directory instead of generating one.
    std::string data_dir;
    std::string metrics_file = "metrics.jsonl";
    std::string checkpoint_file = "final.ckpt";
};

/// Sections: data, model, ssdp, ddl, ssdt, trainer, io. Every key is
/// optional and defaults to the values below.
struct RunConfig {
    SyntheticSpec data;
    TrainConfig trainer;
    IoConfig io;
};

RunConfig parse_run_config(const nlohmann::json& document);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical document with every key spelled out.
nlohmann::ordered_json to_json(const RunConfig& config);

/// FNV-1a of the canonical document.
std::uint64_t config_digest(const RunConfig& config);

} // namespace csdnet
