#include "csdnet/cli.hpp"

#include "csdnet/checkpoint.hpp"
#include "csdnet/config.hpp"
#include "csdnet/dataset.hpp"
#include "csdnet/gradcheck.hpp"
#include "csdnet/ops.hpp"
#include "csdnet/ppm.hpp"
#include "csdnet/ssdp.hpp"
#include "csdnet/trainer.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <string>

namespace csdnet::cli {

namespace fs = std::filesystem;

namespace {

bool make_dir(const fs::path& dir, std::ostream& err) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        err << "error: cannot create " << dir.string() << ": " << ec.message() << "\n";
        return false;
    }
    return true;
}

std::optional<Checkpoint> open_checkpoint(const fs::path& path, std::ostream& err) {
    try {
        return load_checkpoint(path);
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
    }
    return std::nullopt;
}

} // namespace

int cmd_train(const fs::path& config_path, const fs::path& out_dir,
              std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
    RunConfig config;
    try {
        config = load_run_config(config_path);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kBadInput;
    }
    if (seed) config.trainer.seed = *seed;

    Dataset data;
    try {
        data = config.io.data_dir.empty() ? generate_dataset(config.data)
                                          : read_dataset(config.io.data_dir);
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << "\n";
        return kBadInput;
    }
    if (!make_dir(out_dir, err)) return kBadInput;

    const fs::path metrics_path = out_dir / config.io.metrics_file;
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) {
        err << "error: cannot write " << metrics_path.string() << "\n";
        return kBadInput;
    }
    RunResult result;
    try {
        result = run_training(data, config.trainer, &metrics);
    } catch (const DivergenceError& e) {
        err << "training diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }
    metrics.close();

    const fs::path ckpt = out_dir / config.io.checkpoint_file;
    save_checkpoint(make_checkpoint(result.model, config_digest(config), result.optimizer), ckpt);
    out << "steps: " << result.reports.size() << "\n";
    out << "final accuracy: " << std::fixed << std::setprecision(4) << result.final_accuracy
        << "\n";
    out << "metrics: " << metrics_path.string() << "\n";
    out << "checkpoint: " << ckpt.string() << "\n";
    return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, bool dual_branch,
             std::ostream& out, std::ostream& err) {
    const auto ckpt = open_checkpoint(checkpoint, err);
    if (!ckpt) return kBadInput;
    Dataset data;
    try {
        data = read_dataset(data_dir);
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << "\n";
        return kBadInput;
    }
    Model model;
    try {
        model = model_from_checkpoint(*ckpt);
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }
    const std::vector<Sample>& split = data.test.empty() ? data.train : data.test;
    for (const auto& s : split) {
        if (s.label < 0 || static_cast<std::size_t>(s.label) >= model.head.classes()) {
            err << "error: " << s.name << " has label " << s.label << " but the checkpoint has "
                << model.head.classes() << " classes\n";
            return kBadInput;
        }
    }
    if (dual_branch && !model.kernel) {
        err << "error: --dual-branch needs a checkpoint with a discrepancy kernel\n";
        return kBadInput;
    }

    const auto start = std::chrono::steady_clock::now();
    const EvalResult r =
        evaluate(split, model, dual_branch ? EvalMode::dual_branch : EvalMode::raw_only);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;

    out << "mode: " << (dual_branch ? "dual-branch" : "raw-only") << "\n";
    out << "images: " << r.samples << "\n";
    out << "accuracy: " << std::fixed << std::setprecision(4) << r.accuracy << "\n";
    out << "images/second: " << std::setprecision(2)
        << static_cast<double>(r.samples) / std::max(elapsed.count(), 1e-9) << "\n";
    return kOk;
}

int cmd_augment(const fs::path& image_path, const fs::path& checkpoint, std::ostream& out,
                std::ostream& err) {
    Tensor image;
    try {
        image = read_ppm(image_path);
        validate_image_shape(image.shape());
    } catch (const std::exception& e) {
        err << "image error: " << e.what() << "\n";
        return kBadInput;
    }
    const auto ckpt = open_checkpoint(checkpoint, err);
    if (!ckpt) return kBadInput;
    Model model;
    try {
        model = model_from_checkpoint(*ckpt);
    } catch (const CheckpointError& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }
    if (!model.kernel) {
        err << "error: checkpoint has no discrepancy kernel (trained with ssdp disabled)\n";
        return kBadInput;
    }

    Tape tape;
    const Tensor features =
        extract_features(bind(tape, model, false), tape.constant(image)).value();
    const auto aug = ssdp::parse_and_augment(image, features, *model.kernel);

    // Overlay: the image shows through inside the rectangle, dimmed outside.
    Tensor overlay = image;
    const auto& r = aug.mask.rect;
    const std::size_t h = image.dim(1), w = image.dim(2);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                if (aug.mask.mask.at(i, j) == 0.0) overlay.at(c, i, j) *= 0.35;
            }
        }
    }

    const fs::path dir = image_path.parent_path();
    const std::string stem = image_path.stem().string();
    const fs::path mask_path = dir / (stem + ".mask.ppm");
    const fs::path aug_path = dir / (stem + ".aug.ppm");
    try {
        write_ppm(overlay, mask_path);
        write_ppm(aug.image, aug_path);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
    out << "rect: top=" << r.top << " left=" << r.left << " height=" << r.height
        << " width=" << r.width << (aug.mask.fallback ? " (fallback: whole image)" : "") << "\n";
    out << "mask: " << mask_path.string() << "\n";
    out << "aug: " << aug_path.string() << "\n";
    return kOk;
}

int cmd_gradcheck(std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
    // Mutation sentinel for the CLI tests.
    if (const char* fault = std::getenv("CSDNET_INJECT_FAULT")) {
        if (std::string(fault) == "sigmoid_backward_sign") {
            ops::inject_fault(ops::Fault::sigmoid_backward_sign);
        } else {
            err << "error: unknown fault " << fault << "\n";
            return kBadInput;
        }
    }
    GradSuiteOptions options;
    if (seed) options.base_seed = *seed;
    const auto start = std::chrono::steady_clock::now();
    const auto entries = run_gradient_suite(options);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    ops::inject_fault(ops::Fault::none);

    std::vector<std::string> failed;
    for (const auto& e : entries) {
        out << std::left << std::setw(24) << e.op << std::scientific << std::setprecision(3)
            << e.worst_rel_error << "  " << (e.passed ? "ok" : "FAIL") << "\n";
        if (!e.passed) failed.push_back(e.op);
    }
    out << std::defaultfloat << "tolerance " << options.tolerance << ", " << options.seeds
        << " seeds, " << std::fixed << std::setprecision(1) << elapsed.count() << " s\n";
    if (failed.empty()) return kOk;
    err << "gradient check failed:";
    for (const auto& op : failed) err << " " << op;
    err << "\n";
    return kFailure;
}

int cmd_gen_data(const fs::path& config_path, const fs::path& out_dir,
                 std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
    RunConfig config;
    try {
        config = load_run_config(config_path);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kBadInput;
    }
    if (seed) config.data.seed = *seed;
    if (!make_dir(out_dir, err)) return kBadInput;
    const Dataset data = generate_dataset(config.data);
    try {
        write_dataset(data, out_dir);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
    out << "classes: " << data.classes << "\n";
    out << "train: " << data.train.size() << " test: " << data.test.size() << "\n";
    out << "checksum: " << std::hex << std::setw(16) << std::setfill('0')
        << dataset_checksum(data) << std::dec << "\n";
    return kOk;
}

} // namespace csdnet::cli
