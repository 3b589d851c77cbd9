#include "csdnet/trainer.hpp"

#include "csdnet/ops.hpp"
#include "csdnet/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <numeric>
#include <sstream>

namespace csdnet {

namespace {

constexpr std::uint64_t kModelStream = 0x4D4F44454CULL;
constexpr std::uint64_t kShuffleStream = 0x53485546ULL;
constexpr std::uint64_t kNegativeStream = 0x4E4547ULL;

void require(bool ok, const std::string& field, const std::string& why) {
    if (!ok) {
        throw std::invalid_argument("trainer." + field + " " + why);
    }
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

} // namespace

void TrainConfig::validate() const {
    require(finite_nonneg(alpha), "alpha", "must be finite and >= 0");
    require(finite_nonneg(beta), "beta", "must be finite and >= 0");
    require(std::isfinite(margin), "margin", "must be finite");
    require(std::isfinite(temperature) && temperature > 0.0, "temperature", "must be > 0");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0, "label_smoothing", "must be in [0, 1)");
    require(finite_nonneg(learning_rate), "learning_rate", "must be finite and >= 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must be in [0, 1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must be in [0, 1)");
    require(std::isfinite(adam_eps) && adam_eps > 0.0, "adam_eps", "must be > 0");
    require(finite_nonneg(weight_decay), "weight_decay", "must be finite and >= 0");
    require(batch_size >= 2, "batch_size", "must be at least 2");
    require(epochs >= 1, "epochs", "must be at least 1");
    require(!square_mask || ssdp_enabled, "square_mask", "requires SSDP to be enabled");
}

std::string to_json_line(const LossReport& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["l_cls"] = r.l_cls;
    j["l_qc"] = r.l_qc;
    j["l_ssdt"] = r.l_ssdt;
    j["total"] = r.total;
    if (r.accuracy) {
        j["acc"] = *r.accuracy;
    }
    return j.dump();
}

Var label_smoothing_ce(Var logits, std::size_t label, double epsilon) {
    const std::size_t k = logits.value().size();
    if (logits.value().rank() != 1) {
        throw std::invalid_argument("label_smoothing_ce: logits must be a vector");
    }
    if (label >= k) {
        throw std::invalid_argument("label_smoothing_ce: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(k) + " classes");
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw std::invalid_argument("label_smoothing_ce: epsilon must be in [0, 1)");
    }
    Tensor target({k}, epsilon / static_cast<double>(k));
    target[label] += 1.0 - epsilon;
    Tape& tape = logits.tape();
    return ops::scale(ops::sum(ops::mul(tape.constant(std::move(target)), ops::log_softmax(logits))),
                      -1.0);
}

double total_loss(double l_cls, double l_qc, double l_ssdt, double alpha, double beta) {
    return (l_cls + alpha * l_qc) + beta * l_ssdt;
}

Var total_loss(Var l_cls, Var l_qc, Var l_ssdt, double alpha, double beta) {
    return ops::add(ops::add(l_cls, ops::scale(l_qc, alpha)), ops::scale(l_ssdt, beta));
}

void AdamW::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("AdamW: parameter and gradient counts differ");
    }
    if (m_.empty()) {
        for (const auto* p : params) {
            m_.emplace_back(p->shape(), 0.0);
            v_.emplace_back(p->shape(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw std::invalid_argument("AdamW: parameter set changed between steps");
    }
    ++step_;
    const auto& o = options_;
    const double t = static_cast<double>(step_);
    const double correction1 = 1.0 - std::pow(o.beta1, t);
    const double correction2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        require_same_shape(p, grads[i], "AdamW");
        require_same_shape(p, m_[i], "AdamW state");
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = grads[i][j];
            p[j] -= o.learning_rate * o.weight_decay * p[j];
            m_[i][j] = o.beta1 * m_[i][j] + (1.0 - o.beta1) * g;
            v_[i][j] = o.beta2 * v_[i][j] + (1.0 - o.beta2) * g * g;
            const double m_hat = m_[i][j] / correction1;
            const double v_hat = v_[i][j] / correction2;
            p[j] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
        }
    }
}

OptimizerSnapshot AdamW::snapshot() const { return {step_, m_, v_}; }

void AdamW::restore(OptimizerSnapshot snapshot) {
    if (snapshot.first_moment.size() != snapshot.second_moment.size()) {
        throw std::invalid_argument("AdamW::restore: moment lists differ in length");
    }
    step_ = snapshot.step;
    m_ = std::move(snapshot.first_moment);
    v_ = std::move(snapshot.second_moment);
}

BranchOutput forward_branch(const BoundModel& model, Var image) {
    BranchOutput out;
    out.features = extract_features(model, image);
    if (model.kernel) {
        out.scores = ssdp::pattern_scores(out.features, *model.kernel);
        out.refined = ssdp::refine(out.features, *out.scores);
    } else {
        out.refined = out.features;
    }
    out.embedding = ops::global_avg_pool(out.refined);
    out.logits = head_forward(model, out.embedding);
    return out;
}

BatchLosses batch_losses(Tape& tape, const BoundModel& model, std::span<const Sample* const> batch,
                         const ddl::MemoryQueue& queue, const TrainConfig& config,
                         std::size_t step, const std::vector<Tensor>* augmented,
                         BranchCounters* counters) {
    if (batch.empty()) {
        throw std::invalid_argument("batch_losses: empty batch");
    }
    if (config.ssdp_enabled && !model.kernel) {
        throw std::invalid_argument("batch_losses: SSDP enabled but the model has no kernel");
    }
    if (augmented && augmented->size() != batch.size()) {
        throw std::invalid_argument("batch_losses: augmented image count differs from batch");
    }
    const ssdp::MaskOptions mask_options{config.square_mask};
    const ssdt::DistillOptions distill{config.teacher, config.detach_teacher};

    BatchLosses out;
    out.embeddings.batch_index = step;
    std::vector<Var> cls_terms, ssdt_terms, current;
    std::vector<int> labels;

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Sample& s = *batch[b];
        const auto label = static_cast<std::size_t>(s.label);
        BranchOutput raw = forward_branch(model, tape.constant(s.image));
        if (counters) ++counters->raw_forwards;
        Var ce_raw = label_smoothing_ce(raw.logits, label, config.label_smoothing);

        if (!config.ssdp_enabled) {
            cls_terms.push_back(ce_raw);
            current.push_back(raw.embedding);
            labels.push_back(s.label);
            out.embeddings.items.push_back({raw.embedding.value(), s.label, ddl::Origin::raw});
            continue;
        }

        Tensor aug_image;
        if (augmented) {
            aug_image = (*augmented)[b];
        } else {
            aug_image = ssdp::parse_and_augment(s.image, raw.features.value(),
                                                model.kernel->value(), mask_options)
                            .image;
            if (counters) ++counters->augment_calls;
        }
        BranchOutput aug = forward_branch(model, tape.constant(aug_image));
        if (counters) ++counters->aug_forwards;
        out.augmented_images.push_back(std::move(aug_image));

        if (config.cls_on_aug) {
            const Var pair[] = {ce_raw, label_smoothing_ce(aug.logits, label, config.label_smoothing)};
            cls_terms.push_back(ops::average(pair));
        } else {
            cls_terms.push_back(ce_raw);
        }
        ssdt_terms.push_back(
            ssdt::ssdt_loss({raw.logits, aug.logits, config.temperature}, distill));

        current.push_back(aug.embedding);
        current.push_back(raw.embedding);
        labels.push_back(s.label);
        labels.push_back(s.label);
        out.embeddings.items.push_back({aug.embedding.value(), s.label, ddl::Origin::aug});
        out.embeddings.items.push_back({raw.embedding.value(), s.label, ddl::Origin::raw});
    }

    out.l_cls = ops::average(cls_terms);
    out.l_ssdt = ssdt_terms.empty() ? tape.constant(Tensor::scalar(0.0)) : ops::average(ssdt_terms);
    const ddl::ContrastiveOptions contrastive{config.margin, config.negative_sampling,
                                              derive_seed(config.seed, {kNegativeStream, step})};
    out.l_qc = ddl::queue_contrastive_loss(tape, current, labels, queue, contrastive).loss;
    out.total = total_loss(out.l_cls, out.l_qc, out.l_ssdt, config.alpha, config.beta);
    return out;
}

Trainer::Trainer(Model model, TrainConfig config)
    : model_(std::move(model)),
      config_(config),
      optimizer_(AdamWOptions{config.learning_rate, config.adam_beta1, config.adam_beta2,
                              config.adam_eps, config.weight_decay}),
      queue_(config.queue_length) {
    config_.validate();
}

LossReport Trainer::train_step(std::span<const Sample* const> batch) {
    if (batch.size() < 2) {
        throw std::invalid_argument("train_step: batch size must be at least 2");
    }
    Tape tape;
    const BoundModel bound = bind(tape, model_, true);
    BatchLosses losses = batch_losses(tape, bound, batch, queue_, config_, step_, nullptr, &counters_);

    LossReport report;
    report.step = step_ + 1;
    report.l_cls = losses.l_cls.value().item();
    report.l_qc = losses.l_qc.value().item();
    report.l_ssdt = losses.l_ssdt.value().item();
    report.total = losses.total.value().item();
    if (!std::isfinite(report.total) || !std::isfinite(report.l_cls) ||
        !std::isfinite(report.l_qc) || !std::isfinite(report.l_ssdt)) {
        std::ostringstream os;
        os << "non-finite loss at step " << report.step << ": " << to_json_line(report);
        throw DivergenceError(os.str());
    }

    tape.backward(losses.total);
    last_grads_.clear();
    for (const auto& p : bound.parameters()) {
        last_grads_.push_back(p.grad());
    }
    auto params = model_.parameters();
    optimizer_.step(params, last_grads_);
    for (auto* p : params) {
        quantize_to_float(*p);
        if (!p->all_finite()) {
            throw DivergenceError("non-finite parameter after step " + std::to_string(report.step));
        }
    }
    queue_.push(std::move(losses.embeddings));
    ++step_;
    return report;
}

EvalResult evaluate(std::span<const Sample> split, const Model& model, EvalMode mode,
                    BranchCounters* counters, const ssdp::MaskOptions& mask) {
    if (split.empty()) {
        throw std::invalid_argument("evaluate: empty split");
    }
    if (mode == EvalMode::dual_branch && !model.kernel) {
        throw std::invalid_argument("evaluate: dual-branch mode needs the discrepancy kernel");
    }
    EvalResult result;
    result.samples = split.size();
    std::size_t correct = 0;
    for (const auto& s : split) {
        Tape tape;
        const BoundModel bound = bind(tape, model, false);
        BranchOutput raw = forward_branch(bound, tape.constant(s.image));
        if (counters) ++counters->raw_forwards;
        Tensor logits = raw.logits.value();
        if (mode == EvalMode::dual_branch) {
            const Tensor aug_image =
                ssdp::parse_and_augment(s.image, raw.features.value(), *model.kernel, mask).image;
            if (counters) ++counters->augment_calls;
            BranchOutput aug = forward_branch(bound, tape.constant(aug_image));
            if (counters) ++counters->aug_forwards;
            for (std::size_t k = 0; k < logits.size(); ++k) {
                logits[k] = 0.5 * (logits[k] + aug.logits.value()[k]);
            }
        }
        const std::size_t pred = ssdt::argmax(logits);
        result.predictions.push_back(pred);
        correct += static_cast<int>(pred) == s.label;
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
    return result;
}

RunResult run_training(const Dataset& data, const TrainConfig& config, std::ostream* metrics) {
    config.validate();
    if (data.train.size() < 2 || data.test.empty()) {
        throw std::invalid_argument("run_training: need >= 2 train and >= 1 test samples");
    }
    validate_image_shape(data.train.front().image.shape());

    Model model = Model::initialize({data.classes, config.ssdp_enabled},
                                    derive_seed(config.seed, {kModelStream}));
    Trainer trainer(std::move(model), config);

    const std::size_t n = data.train.size();
    // A trailing batch of one sample cannot form a pair and is dropped.
    std::size_t per_epoch = n / config.batch_size + (n % config.batch_size >= 2 ? 1 : 0);
    const std::size_t total_steps = per_epoch * config.epochs;

    RunResult result;
    std::vector<std::size_t> order(n);
    std::vector<const Sample*> batch;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(config.seed, {kShuffleStream, epoch}));
        shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start + 2 <= n; start += config.batch_size) {
            const std::size_t end = std::min(n, start + config.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(&data.train[order[i]]);
            }
            LossReport report = trainer.train_step(batch);
            const bool last = report.step == total_steps;
            if (last || (config.eval_every && report.step % config.eval_every == 0)) {
                report.accuracy = evaluate(data.test, trainer.model()).accuracy;
            }
            if (metrics) {
                *metrics << to_json_line(report) << '\n';
            }
            result.reports.push_back(report);
        }
    }
    result.final_accuracy = result.reports.back().accuracy.value_or(0.0);
    result.model = trainer.model();
    result.optimizer = trainer.optimizer().snapshot();
    return result;
}

} // namespace csdnet
