#pragma once

#include "csdnet/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace csdnet {

/// Parameters of the synthetic ultra-fine-grained dataset: a few images per
/// class, each a structured background with one small class-specific patch.
struct SyntheticSpec {
    std::size_t classes = 20;
    std::size_t images_per_class = 6;
    /// 0 selects images_per_class / 2.
    std::size_t test_per_class = 0;
    std::size_t image_size = 64;
    std::size_t patch_size = 16;
    std::size_t jitter = 16;
    double noise = 0.04;
    std::uint64_t seed = 1;
    std::size_t min_images_per_class = 3;
    std::size_t max_images_per_class = 11;

    std::size_t test_count() const {
        return test_per_class ? test_per_class : images_per_class / 2;
    }
    std::size_t train_count() const { return images_per_class - test_count(); }
    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct Sample {
    Tensor image; // 3 x H x W, values k/255
    int label = 0;
    std::string name;
};

struct Dataset {
    std::size_t classes = 0;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// Pure function of the spec: per-image randomness derives from
/// (seed, class, index) only.
Dataset generate_dataset(const SyntheticSpec& spec);

/// Class texture patch, 3 x patch x patch.
Tensor class_patch(const SyntheticSpec& spec, std::size_t label);

/// Writes images/<class>_<idx>.ppm and labels.csv (filename,label,split).
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Inverse of write_dataset. Throws when the directory is missing, empty or
/// inconsistent.
Dataset read_dataset(const std::filesystem::path& dir);

/// FNV-1a over labels, names and quantized pixels of both splits.
std::uint64_t dataset_checksum(const Dataset& data);

/// Accuracy on the test split of a nearest-class-mean classifier in raw
/// pixel space. A sanity bar that a learned model should beat.
double nearest_centroid_accuracy(const Dataset& data);

} // namespace csdnet
