#include "csdnet/dataset.hpp"

#include "csdnet/backbone.hpp"
#include "csdnet/ppm.hpp"
#include "csdnet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace csdnet {

namespace {

constexpr std::uint64_t kPatchStream = 0x5041544348ULL;
constexpr std::uint64_t kImageStream = 0x494D414745ULL;
constexpr double kPatchAmplitude = 0.15;

std::string sample_name(std::size_t label, std::size_t index) {
    return std::to_string(label) + "_" + std::to_string(index) + ".ppm";
}

void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
}

Tensor render_image(const SyntheticSpec& spec, std::size_t label, std::size_t index,
                    const Tensor& patch) {
    const std::size_t s = spec.image_size;
    Rng rng(derive_seed(spec.seed, {kImageStream, label, index}));

    // Smooth background: a linear ramp plus one low-frequency wave.
    const double ramp_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double wave_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double wave_freq = rng.uniform(1.0, 3.0);
    const double wave_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // Near-grey so that colour alone does not give the class away.
    const double grey = rng.uniform(0.45, 0.55);
    double offset[3], slope[3], wave[3];
    for (std::size_t c = 0; c < 3; ++c) {
        offset[c] = grey + rng.uniform(-0.03, 0.03);
        slope[c] = rng.uniform(-0.1, 0.1);
        wave[c] = rng.uniform(-0.05, 0.05);
    }

    Tensor image({3, s, s}, 0.0);
    for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
            const double u = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(s) - 1.0;
            const double v = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(s) - 1.0;
            const double ramp = std::cos(ramp_angle) * u + std::sin(ramp_angle) * v;
            const double phase = std::numbers::pi * wave_freq *
                                     (std::cos(wave_angle) * u + std::sin(wave_angle) * v) +
                                 wave_phase;
            const double w = std::sin(phase);
            for (std::size_t c = 0; c < 3; ++c) {
                image.at(c, y, x) = offset[c] + slope[c] * ramp + wave[c] * w +
                                    rng.uniform(-spec.noise, spec.noise);
            }
        }
    }

    const std::size_t p = spec.patch_size;
    const auto jitter = static_cast<long>(spec.jitter);
    const long centre = static_cast<long>((s - p) / 2);
    auto place = [&](std::uint64_t draw) {
        const long j = static_cast<long>(draw % static_cast<std::uint64_t>(2 * jitter + 1)) - jitter;
        return static_cast<std::size_t>(std::clamp(centre + j, 0L, static_cast<long>(s - p)));
    };
    const std::size_t top = place(rng.next_u64());
    const std::size_t left = place(rng.next_u64());
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < p; ++y) {
            for (std::size_t x = 0; x < p; ++x) {
                image.at(c, top + y, left + x) =
                    patch.at(c, y, x) + rng.uniform(-spec.noise, spec.noise);
            }
        }
    }
    quantize_to_bytes(image);
    return image;
}

} // namespace

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("synthetic spec: " + field + " " + why);
    };
    if (classes < 2) fail("classes", "must be at least 2");
    if (images_per_class < 2) fail("images_per_class", "must be at least 2 to split");
    if (images_per_class < min_images_per_class || images_per_class > max_images_per_class) {
        fail("images_per_class", "must lie in [" + std::to_string(min_images_per_class) + ", " +
                                      std::to_string(max_images_per_class) + "]");
    }
    if (test_count() == 0 || test_count() >= images_per_class) {
        fail("test_per_class", "must leave at least one train and one test image per class");
    }
    if (image_size == 0 || image_size % kFeatureStride != 0) {
        fail("image_size", "must be a positive multiple of " + std::to_string(kFeatureStride));
    }
    if (patch_size == 0 || patch_size > image_size) fail("patch_size", "must be in [1, image_size]");
    if (!(noise >= 0.0) || noise > 0.5) fail("noise", "must be in [0, 0.5]");
}

Tensor class_patch(const SyntheticSpec& spec, std::size_t label) {
    const std::size_t p = spec.patch_size;
    Rng rng(derive_seed(spec.seed, {kPatchStream, label}));
    double base[3];
    for (auto& b : base) {
        b = rng.uniform(0.1, 0.9);
    }
    Tensor patch({3, p, p}, 0.0);
    for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
            const bool bit = (rng.next_u64() >> 63) != 0;
            for (std::size_t c = 0; c < 3; ++c) {
                patch.at(c, y, x) = base[c] + (bit ? kPatchAmplitude : -kPatchAmplitude);
            }
        }
    }
    quantize_to_bytes(patch);
    return patch;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Dataset data;
    data.classes = spec.classes;
    const std::size_t train_n = spec.train_count();
    for (std::size_t label = 0; label < spec.classes; ++label) {
        const Tensor patch = class_patch(spec, label);
        for (std::size_t i = 0; i < spec.images_per_class; ++i) {
            Sample s{render_image(spec, label, i, patch), static_cast<int>(label),
                     sample_name(label, i)};
            (i < train_n ? data.train : data.test).push_back(std::move(s));
        }
    }
    return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::ofstream csv(dir / "labels.csv", std::ios::binary);
    if (!csv) {
        throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
    }
    csv << "filename,label,split\n";
    auto emit = [&](const std::vector<Sample>& split, const char* tag) {
        for (const auto& s : split) {
            write_ppm(s.image, dir / "images" / s.name);
            csv << s.name << ',' << s.label << ',' << tag << '\n';
        }
    };
    emit(data.train, "train");
    emit(data.test, "test");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    const auto csv_path = dir / "labels.csv";
    std::ifstream csv(csv_path);
    if (!csv) {
        throw std::runtime_error("missing " + csv_path.string());
    }
    Dataset data;
    std::string line;
    if (!std::getline(csv, line) || line != "filename,label,split") {
        throw FormatError(csv_path.string() + ": expected header 'filename,label,split'");
    }
    int max_label = -1;
    std::size_t line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string name, label_text, split;
        if (!std::getline(row, name, ',') || !std::getline(row, label_text, ',') ||
            !std::getline(row, split)) {
            throw FormatError(csv_path.string() + ":" + std::to_string(line_no) +
                              ": expected filename,label,split");
        }
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(label_text, &used);
            if (used != label_text.size() || label < 0) throw std::invalid_argument("label");
        } catch (const std::exception&) {
            throw FormatError(csv_path.string() + ":" + std::to_string(line_no) +
                              ": bad label '" + label_text + "'");
        }
        if (split != "train" && split != "test") {
            throw FormatError(csv_path.string() + ":" + std::to_string(line_no) +
                              ": split must be train or test");
        }
        Sample s{read_ppm(dir / "images" / name), label, name};
        max_label = std::max(max_label, label);
        (split == "train" ? data.train : data.test).push_back(std::move(s));
    }
    if (data.train.empty() && data.test.empty()) {
        throw std::runtime_error(dir.string() + ": dataset has no samples");
    }
    const Shape& shape = (data.train.empty() ? data.test : data.train).front().image.shape();
    for (const auto* split : {&data.train, &data.test}) {
        for (const auto& s : *split) {
            if (s.image.shape() != shape) {
                throw FormatError(s.name + ": image shape " + shape_to_string(s.image.shape()) +
                                  " differs from " + shape_to_string(shape));
            }
        }
    }
    data.classes = static_cast<std::size_t>(max_label + 1);
    return data;
}

std::uint64_t dataset_checksum(const Dataset& data) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto* split : {&data.train, &data.test}) {
        for (const auto& s : *split) {
            fnv1a(h, s.name.data(), s.name.size());
            const std::int32_t label = s.label;
            fnv1a(h, &label, sizeof label);
            for (double v : s.image.data()) {
                const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
                fnv1a(h, &byte, 1);
            }
        }
    }
    return h;
}

double nearest_centroid_accuracy(const Dataset& data) {
    if (data.train.empty() || data.test.empty()) {
        throw std::invalid_argument("nearest_centroid_accuracy: both splits must be non-empty");
    }
    const Shape& shape = data.train.front().image.shape();
    std::vector<Tensor> centroids(data.classes, Tensor(shape, 0.0));
    std::vector<std::size_t> counts(data.classes, 0);
    for (const auto& s : data.train) {
        auto& c = centroids.at(static_cast<std::size_t>(s.label));
        for (std::size_t i = 0; i < c.size(); ++i) {
            c[i] += s.image[i];
        }
        ++counts[static_cast<std::size_t>(s.label)];
    }
    for (std::size_t k = 0; k < data.classes; ++k) {
        if (counts[k] == 0) continue;
        for (auto& v : centroids[k].data()) {
            v /= static_cast<double>(counts[k]);
        }
    }
    std::size_t correct = 0;
    for (const auto& s : data.test) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < data.classes; ++k) {
            if (counts[k] == 0) continue;
            double d = 0.0;
            for (std::size_t i = 0; i < s.image.size(); ++i) {
                const double diff = s.image[i] - centroids[k][i];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        correct += static_cast<int>(best) == s.label;
    }
    return static_cast<double>(correct) / static_cast<double>(data.test.size());
}

} // namespace csdnet
