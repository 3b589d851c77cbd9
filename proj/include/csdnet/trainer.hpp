#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/backbone.hpp"
#include "csdnet/checkpoint.hpp"
#include "csdnet/dataset.hpp"
#include "csdnet/ddl.hpp"
#include "csdnet/ssdp.hpp"
#include "csdnet/ssdt.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csdnet {

struct TrainConfig {
    // Loss weights and their modules.
    double alpha = 1.0;
    double beta = 0.4;
    double margin = 1.0;
    std::size_t queue_length = 2;
    ddl::NegativeSampling negative_sampling = ddl::NegativeSampling::all;
    double temperature = 1.0;
    ssdt::Teacher teacher = ssdt::Teacher::aug;
    bool detach_teacher = true;
    bool ssdp_enabled = true;
    bool square_mask = false;
    /// Supervise the augmented logits with L_cls as well as the raw ones.
    bool cls_on_aug = true;

    double label_smoothing = 0.1;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.01;
    std::size_t batch_size = 12;
    std::size_t epochs = 40;
    std::uint64_t seed = 0;
    /// Evaluate every N steps (0: only after the last step).
    std::size_t eval_every = 0;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

struct LossReport {
    std::size_t step = 0;
    double l_cls = 0.0;
    double l_qc = 0.0;
    double l_ssdt = 0.0;
    double total = 0.0;
    std::optional<double> accuracy;
};

/// One metrics line: {"step":..,"l_cls":..,"l_qc":..,"l_ssdt":..,"total":..[,"acc":..]}.
std::string to_json_line(const LossReport& report);

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Smoothed cross entropy: targets (1 - eps) one_hot + eps / K.
Var label_smoothing_ce(Var logits, std::size_t label, double epsilon);

double total_loss(double l_cls, double l_qc, double l_ssdt, double alpha, double beta);
Var total_loss(Var l_cls, Var l_qc, Var l_ssdt, double alpha, double beta);

struct AdamWOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with decoupled weight decay and bias correction.
class AdamW {
public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

    const AdamWOptions& options() const noexcept { return options_; }
    std::uint64_t steps() const noexcept { return step_; }
    OptimizerSnapshot snapshot() const;
    void restore(OptimizerSnapshot snapshot);

private:
    AdamWOptions options_;
    std::uint64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Tallies of work done per branch, so tests can prove the augmented branch
/// never runs at inference time.
struct BranchCounters {
    std::size_t raw_forwards = 0;
    std::size_t augment_calls = 0;
    std::size_t aug_forwards = 0;
};

struct BranchOutput {
    Var features; // X
    std::optional<Var> scores; // P, absent without the discrepancy kernel
    Var refined;  // X_s (X when there is no kernel)
    Var embedding;
    Var logits;
};

/// X -> P -> X_s -> pool -> Head on one image.
BranchOutput forward_branch(const BoundModel& model, Var image);

/// The symbolic losses of one batch plus what the queue should receive.
struct BatchLosses {
    Var l_cls;
    Var l_qc;
    Var l_ssdt;
    Var total;
    ddl::EmbeddingBatch embeddings;
    std::vector<Tensor> augmented_images;
};

/// Builds the full training objective for `batch` on `tape`. When
/// `augmented` is given those images replace the ones SSDP would derive,
/// which lets a finite-difference oracle hold the non-differentiable mask
/// path fixed.
BatchLosses batch_losses(Tape& tape, const BoundModel& model, std::span<const Sample* const> batch,
                         const ddl::MemoryQueue& queue, const TrainConfig& config,
                         std::size_t step,
                         const std::vector<Tensor>* augmented = nullptr,
                         BranchCounters* counters = nullptr);

class Trainer {
public:
    Trainer(Model model, TrainConfig config);

    /// Forward, backward, AdamW update, then queue update.
    LossReport train_step(std::span<const Sample* const> batch);

    const Model& model() const noexcept { return model_; }
    Model& model() noexcept { return model_; }
    const ddl::MemoryQueue& queue() const noexcept { return queue_; }
    const AdamW& optimizer() const noexcept { return optimizer_; }
    AdamW& optimizer() noexcept { return optimizer_; }
    const TrainConfig& config() const noexcept { return config_; }
    std::size_t steps_taken() const noexcept { return step_; }
    const BranchCounters& counters() const noexcept { return counters_; }
    /// Gradients of the last step, in Model::parameters() order.
    const std::vector<Tensor>& last_gradients() const noexcept { return last_grads_; }

private:
    Model model_;
    TrainConfig config_;
    AdamW optimizer_;
    ddl::MemoryQueue queue_;
    std::size_t step_ = 0;
    BranchCounters counters_;
    std::vector<Tensor> last_grads_;
};

enum class EvalMode {
    raw_only,    // deployment path
    dual_branch, // also parses, augments and re-extracts; logits averaged
};

struct EvalResult {
    double accuracy = 0.0;
    std::size_t samples = 0;
    std::vector<std::size_t> predictions;
};

/// Top-1 accuracy. Throws std::invalid_argument on an empty split.
EvalResult evaluate(std::span<const Sample> split, const Model& model,
                    EvalMode mode = EvalMode::raw_only, BranchCounters* counters = nullptr,
                    const ssdp::MaskOptions& mask = {});

struct RunResult {
    Model model;
    std::vector<LossReport> reports;
    double final_accuracy = 0.0;
    OptimizerSnapshot optimizer;
};

/// Trains from a fresh seeded model over `config.epochs` shuffled epochs and
/// writes one metrics line per step to `metrics` when given.
RunResult run_training(const Dataset& data, const TrainConfig& config,
                       std::ostream* metrics = nullptr);

} // namespace csdnet
