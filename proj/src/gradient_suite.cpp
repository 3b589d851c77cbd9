#include "csdnet/gradcheck.hpp"

#include "csdnet/backbone.hpp"
#include "csdnet/ddl.hpp"
#include "csdnet/ops.hpp"
#include "csdnet/rng.hpp"
#include "csdnet/ssdp.hpp"
#include "csdnet/ssdt.hpp"
#include "csdnet/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace csdnet {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

/// sum(out * R) for a fixed random R, so every output coordinate is probed.
Var probe(Var out, std::uint64_t seed) {
    Rng rng(seed);
    return ops::sum(ops::mul(out, out.tape().constant(random_tensor(out.shape(), rng))));
}

/// Worst error over checking each input of `f` in turn; the others stay fixed.
using MultiFn = std::function<Var(Tape&, std::vector<Var>&)>;

double check_each_input(const MultiFn& f, const std::vector<Tensor>& inputs, std::uint64_t seed,
                        const GradCheckOptions& base) {
    double worst = 0.0;
    for (std::size_t target = 0; target < inputs.size(); ++target) {
        ScalarFn single = [&, target](Tape& tape, Var x) {
            std::vector<Var> vars;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                vars.push_back(i == target ? x : tape.constant(inputs[i]));
            }
            return f(tape, vars);
        };
        GradCheckOptions opt = base;
        opt.seed = derive_seed(seed, {target});
        worst = std::max(worst, grad_check(single, inputs[target], opt));
    }
    return worst;
}

void set_parameter(BoundModel& m, std::size_t index, Var v) {
    if (index < 6) {
        (index % 2 == 0 ? m.weights[index / 2] : m.biases[index / 2]) = v;
    } else if (index == 6) {
        m.head_weight = v;
    } else if (index == 7) {
        m.head_bias = v;
    } else {
        m.kernel = v;
    }
}

Model random_model(std::size_t classes, std::uint64_t seed) {
    Model m = Model::initialize({classes, true}, seed);
    Rng rng(derive_seed(seed, {99}));
    for (auto* p : m.parameters()) {
        if (p->rank() == 1) {
            for (auto& v : p->data()) v = rng.uniform(-0.2, 0.2);
        }
    }
    return m;
}

struct SuiteCase {
    const char* op;
    std::function<double(std::uint64_t seed)> run;
    std::size_t seeds; // 0: use the suite default
};

std::vector<SuiteCase> suite_cases() {
    const GradCheckOptions dense{};
    std::vector<SuiteCase> cases;

    cases.push_back({"conv2d_1x1", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::conv2d_1x1(v[0], v[1]), s); },
            {random_tensor({3, 4, 5}, rng), random_tensor({3}, rng)}, s, dense);
    }, 0});

    cases.push_back({"conv2d_3x3", [dense](std::uint64_t s) {
        Rng rng(s);
        double worst = 0.0;
        for (std::size_t stride : {1u, 2u}) {
            worst = std::max(worst, check_each_input(
                [s, stride](Tape&, std::vector<Var>& v) {
                    return probe(ops::conv2d_3x3(v[0], v[1], stride), s);
                },
                {random_tensor({2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng)}, s, dense));
        }
        return worst;
    }, 0});

    cases.push_back({"add_channel_bias", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::add_channel_bias(v[0], v[1]), s); },
            {random_tensor({3, 2, 2}, rng), random_tensor({3}, rng)}, s, dense);
    }, 0});

    cases.push_back({"relu", [dense](std::uint64_t s) {
        Rng rng(s);
        Tensor x = random_tensor({12}, rng);
        for (auto& v : x.data()) {
            v += v >= 0 ? 0.05 : -0.05; // keep away from the kink
        }
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::relu(v[0]), s); }, {x}, s, dense);
    }, 0});

    cases.push_back({"global_avg_pool", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::global_avg_pool(v[0]), s); },
            {random_tensor({4, 3, 2}, rng)}, s, dense);
    }, 0});

    cases.push_back({"sigmoid", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::sigmoid(v[0]), s); },
            {random_tensor({6}, rng, -4.0, 4.0)}, s, dense);
    }, 0});

    cases.push_back({"softmax", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::softmax(v[0]), s); },
            {random_tensor({5}, rng, -3.0, 3.0)}, s, dense);
    }, 0});

    cases.push_back({"log_softmax", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::log_softmax(v[0]), s); },
            {random_tensor({5}, rng, -3.0, 3.0)}, s, dense);
    }, 0});

    cases.push_back({"l2_normalize", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::l2_normalize(v[0]), s); },
            {random_tensor({6}, rng)}, s, dense);
    }, 0});

    cases.push_back({"linear_head", [dense](std::uint64_t s) {
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) { return probe(ops::linear(v[0], v[1], v[2]), s); },
            {random_tensor({4, 6}, rng), random_tensor({4}, rng), random_tensor({6}, rng)}, s,
            dense);
    }, 0});

    cases.push_back({"refine", [dense](std::uint64_t s) {
        // X_s = sigmoid(P(X, W_K)) * X, checked w.r.t. X and W_K.
        Rng rng(s);
        return check_each_input(
            [s](Tape&, std::vector<Var>& v) {
                return probe(ssdp::refine(v[0], ssdp::pattern_scores(v[0], v[1])), s);
            },
            {random_tensor({4, 3, 3}, rng), random_tensor({4}, rng)}, s, dense);
    }, 0});

    cases.push_back({"extract_features", [](std::uint64_t s) {
        Model m = random_model(3, s);
        Rng rng(derive_seed(s, {7}));
        const Tensor image = random_tensor({3, 8, 8}, rng, 0.0, 1.0);
        GradCheckOptions opt;
        opt.max_coords = 48;
        double worst = 0.0;
        for (std::size_t idx = 0; idx < 6; ++idx) {
            ScalarFn f = [&, idx](Tape& tape, Var x) {
                BoundModel b = bind(tape, m, false);
                set_parameter(b, idx, x);
                return probe(extract_features(b, tape.constant(image)), s);
            };
            opt.seed = derive_seed(s, {idx});
            worst = std::max(worst, grad_check(f, *m.parameters()[idx], opt));
        }
        ScalarFn wrt_image = [&](Tape& tape, Var x) {
            return probe(extract_features(bind(tape, m, false), x), s);
        };
        return std::max(worst, grad_check(wrt_image, image, opt));
    }, 0});

    cases.push_back({"queue_contrastive_loss", [dense](std::uint64_t s) {
        Rng rng(s);
        const std::size_t n = 5, d = 4;
        std::vector<int> labels;
        std::vector<Tensor> current;
        for (std::size_t i = 0; i < n; ++i) {
            current.push_back(random_tensor({d}, rng));
            labels.push_back(static_cast<int>(rng.below(3)));
        }
        ddl::MemoryQueue queue(2);
        ddl::EmbeddingBatch stored;
        for (std::size_t i = 0; i < 3; ++i) {
            stored.items.push_back({random_tensor({d}, rng), static_cast<int>(rng.below(3)),
                                    ddl::Origin::raw});
        }
        queue.push(stored);
        // Margin below the typical similarity keeps the hinge active.
        const ddl::ContrastiveOptions options{-0.5, ddl::NegativeSampling::all, s};
        return check_each_input(
            [&](Tape& tape, std::vector<Var>& v) {
                return ddl::queue_contrastive_loss(tape, v, labels, queue, options).loss;
            },
            current, s, dense);
    }, 0});

    cases.push_back({"ssdt_loss", [dense](std::uint64_t s) {
        Rng rng(s);
        const double temperature = rng.uniform(0.5, 3.0);
        const Tensor raw = random_tensor({5}, rng, -2.0, 2.0);
        const Tensor aug = random_tensor({5}, rng, -2.0, 2.0);
        // Detached teacher: only the raw logits receive gradient.
        ScalarFn student = [&](Tape& tape, Var x) {
            return ssdt::ssdt_loss({x, tape.constant(aug), temperature});
        };
        GradCheckOptions opt = dense;
        opt.seed = s;
        const double detached = grad_check(student, raw, opt);
        const double both = check_each_input(
            [temperature](Tape&, std::vector<Var>& v) {
                return ssdt::ssdt_loss({v[0], v[1], temperature}, {ssdt::Teacher::aug, false});
            },
            {raw, aug}, s, dense);
        return std::max(detached, both);
    }, 0});

    cases.push_back({"label_smoothing_ce", [dense](std::uint64_t s) {
        Rng rng(s);
        const std::size_t label = rng.below(6);
        const double eps = rng.uniform(0.0, 0.5);
        return check_each_input(
            [label, eps](Tape&, std::vector<Var>& v) { return label_smoothing_ce(v[0], label, eps); },
            {random_tensor({6}, rng, -3.0, 3.0)}, s, dense);
    }, 0});

    cases.push_back({"total_loss_end_to_end", [](std::uint64_t s) {
        // Full objective on a 4-sample batch with a non-empty queue. The
        // augmented images are frozen from the unperturbed forward pass.
        const std::size_t classes = 3;
        Model m = random_model(classes, s);
        Rng rng(derive_seed(s, {11}));
        std::vector<Sample> samples;
        for (std::size_t i = 0; i < 4; ++i) {
            samples.push_back({random_tensor({3, 16, 16}, rng, 0.0, 1.0),
                               static_cast<int>(i % 2), "s" + std::to_string(i)});
        }
        std::vector<const Sample*> batch;
        for (const auto& x : samples) batch.push_back(&x);

        TrainConfig cfg;
        cfg.margin = -0.5;
        cfg.queue_length = 1;
        // A stop-gradient is invisible to finite differences, so the
        // teacher path is left attached here.
        cfg.detach_teacher = false;
        ddl::MemoryQueue queue(1);
        ddl::EmbeddingBatch stored;
        for (std::size_t i = 0; i < 2; ++i) {
            stored.items.push_back({random_tensor({kEmbeddingWidth}, rng), static_cast<int>(i),
                                    ddl::Origin::aug});
        }
        queue.push(stored);

        std::vector<Tensor> frozen;
        {
            Tape tape;
            frozen = batch_losses(tape, bind(tape, m, false), batch, queue, cfg, 0).augmented_images;
        }
        GradCheckOptions opt;
        opt.max_coords = 16;
        double worst = 0.0;
        const auto params = m.parameters();
        for (std::size_t idx = 0; idx < params.size(); ++idx) {
            ScalarFn f = [&, idx](Tape& tape, Var x) {
                BoundModel b = bind(tape, m, false);
                set_parameter(b, idx, x);
                return batch_losses(tape, b, batch, queue, cfg, 0, &frozen).total;
            };
            opt.seed = derive_seed(s, {idx});
            worst = std::max(worst, grad_check(f, *params[idx], opt));
        }
        return worst;
    }, 0});

    return cases;
}

} // namespace

std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& options) {
    std::vector<GradSuiteEntry> out;
    for (const auto& c : suite_cases()) {
        GradSuiteEntry e;
        e.op = c.op;
        const std::size_t seeds = c.seeds ? c.seeds : options.seeds;
        for (std::size_t i = 0; i < seeds; ++i) {
            const double err = c.run(derive_seed(options.base_seed, {i}));
            e.worst_rel_error = std::isfinite(err) ? std::max(e.worst_rel_error, err)
                                                   : std::numeric_limits<double>::infinity();
            ++e.trials;
        }
        e.passed = e.worst_rel_error <= options.tolerance;
        out.push_back(e);
    }
    return out;
}

} // namespace csdnet
