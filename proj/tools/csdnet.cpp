#include "csdnet/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace csdnet;
    CLI::App app{"csdnet: tiny-CNN training with discrepancy-guided augmentation"};
    app.require_subcommand(1);

    std::string config, out_dir, checkpoint, data_dir, image;
    std::optional<std::uint64_t> seed;
    bool dual_branch = false;

    auto* train = app.add_subcommand("train", "train from a JSON config");
    train->add_option("config", config, "config file")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--seed", seed, "override trainer.seed");

    auto* eval = app.add_subcommand("eval", "top-1 accuracy and throughput of a checkpoint");
    eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("data", data_dir, "dataset directory")->required();
    eval->add_flag("--dual-branch", dual_branch, "also run the augmented branch");
    eval->add_option("--seed", seed, "unused; evaluation is deterministic");

    auto* augment = app.add_subcommand("augment", "write the discrepancy mask and augmented image");
    augment->alias("augment-preview");
    augment->add_option("image", image, "P6 image")->required();
    augment->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    augment->add_option("--seed", seed, "unused; augmentation is deterministic");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
    gradcheck->add_option("--seed", seed, "base seed of the random inputs");

    auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
    gen->add_option("config", config, "config file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "override data.seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kBadInput;
    }

    if (*train) return cli::cmd_train(config, out_dir, seed, std::cout, std::cerr);
    if (*eval) return cli::cmd_eval(checkpoint, data_dir, dual_branch, std::cout, std::cerr);
    if (*augment) return cli::cmd_augment(image, checkpoint, std::cout, std::cerr);
    if (*gradcheck) return cli::cmd_gradcheck(seed, std::cout, std::cerr);
    return cli::cmd_gen_data(config, out_dir, seed, std::cout, std::cerr);
}
