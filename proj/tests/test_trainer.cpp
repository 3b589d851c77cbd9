#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csdnet/ops.hpp"
#include "csdnet/trainer.hpp"
#include "support/oracles.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <sstream>

using namespace csdnet;
using oracle::random_tensor;

namespace {

SyntheticSpec tiny_spec() {
    SyntheticSpec s;
    s.classes = 4;
    s.images_per_class = 4;
    s.image_size = 32;
    s.patch_size = 8;
    s.jitter = 4;
    s.seed = 3;
    return s;
}

std::vector<const Sample*> first(const Dataset& d, std::size_t n) {
    std::vector<const Sample*> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(&d.train[i]);
    return out;
}

double ce(const Tensor& logits, std::size_t label, double eps) {
    Tape tape;
    return label_smoothing_ce(tape.leaf(logits), label, eps).value().item();
}

} // namespace

TEST_CASE("label smoothing cross entropy") {
    CHECK(std::abs(ce(Tensor::vector({0, 0}), 0, 0.1) - std::log(2.0)) < 1e-12);
    CHECK(std::abs(ce(Tensor::vector({0, 0}), 0, 0.1) - 0.693147) < 1e-5);
    CHECK(ce(Tensor::vector({50, 0, 0}), 0, 0.0) < 1e-9);
    // Smoothing floors the loss at the entropy of the target.
    const double eps = 0.1;
    const double floor = -((1 - eps + eps / 3) * std::log(1 - eps + eps / 3) + 2 * (eps / 3) * std::log(eps / 3));
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Tensor l = random_tensor({3}, seed, -5.0, 5.0);
        const std::size_t y = seed % 3;
        CHECK(ce(l, y, eps) >= floor - 1e-12);
        double lse = 0.0;
        for (double v : l.data()) lse += std::exp(v);
        lse = std::log(lse);
        double want = 0.0;
        for (std::size_t k = 0; k < 3; ++k) want -= ((k == y ? 1 - eps : 0.0) + eps / 3) * (l[k] - lse);
        CHECK(std::abs(ce(l, y, eps) - want) < 1e-12);
    }
    Tape tape;
    CHECK_THROWS_AS(label_smoothing_ce(tape.leaf(Tensor::vector({1, 2})), 2, 0.1), std::invalid_argument);
}

TEST_CASE("total loss combination") {
    CHECK(std::abs(total_loss(1.0, 0.5, 0.5, 1.0, 0.2) - 1.6) < 1e-12);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(seed);
        const double c = rng.uniform(0, 3), q = rng.uniform(0, 3), s = rng.uniform(0, 3);
        CHECK(total_loss(c, q, s, 0.0, 0.0) == c);
        CHECK(total_loss(c, q, s, 0.0, 1.0) == c + s);
        CHECK(total_loss(c, q, s, 1.0, 0.0) == c + q);
    }
}

TEST_CASE("AdamW closed forms") {
    SUBCASE("first step moves each weight by lr against the gradient sign") {
        AdamW opt({0.1, 0.9, 0.999, 1e-12, 0.0});
        Tensor p = Tensor::vector({1.0, -2.0, 0.5});
        const Tensor g = Tensor::vector({3.0, -0.01, 0.0});
        Tensor* ps[] = {&p};
        opt.step(ps, std::span<const Tensor>(&g, 1));
        CHECK(std::abs(p[0] - 0.9) < 1e-9);
        CHECK(std::abs(p[1] - -1.9) < 1e-9);
        CHECK(p[2] == 0.5);
        CHECK(opt.steps() == 1);
    }
    SUBCASE("decay alone shrinks by lr * wd") {
        AdamW opt({0.5, 0.9, 0.999, 1e-8, 0.1});
        Tensor p = Tensor::vector({2.0});
        const Tensor g = Tensor::vector({0.0});
        Tensor* ps[] = {&p};
        opt.step(ps, std::span<const Tensor>(&g, 1));
        CHECK(p[0] == doctest::Approx(2.0 * (1 - 0.05)).epsilon(1e-14));
    }
    SUBCASE("matches a scalar reference over several steps") {
        const AdamWOptions o{0.01, 0.8, 0.99, 1e-8, 0.02};
        AdamW opt(o);
        Tensor p = Tensor::vector({0.7});
        double ref = 0.7, m = 0.0, v = 0.0;
        for (int t = 1; t <= 10; ++t) {
            const Tensor g = Tensor::vector({std::sin(t * 1.3)});
            Tensor* ps[] = {&p};
            opt.step(ps, std::span<const Tensor>(&g, 1));
            ref -= o.learning_rate * o.weight_decay * ref;
            m = o.beta1 * m + (1 - o.beta1) * g[0];
            v = o.beta2 * v + (1 - o.beta2) * g[0] * g[0];
            const double mh = m / (1 - std::pow(o.beta1, t)), vh = v / (1 - std::pow(o.beta2, t));
            ref -= o.learning_rate * mh / (std::sqrt(vh) + o.eps);
            CHECK(std::abs(p[0] - ref) < 1e-15);
        }
        const auto snap = opt.snapshot();
        CHECK(snap.step == 10);
        CHECK(std::abs(snap.first_moment[0][0] - m) < 1e-15);
    }
}

TEST_CASE("config validation names the field") {
    TrainConfig c;
    c.alpha = -1;
    try {
        c.validate();
        FAIL("expected a throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("alpha") != std::string::npos);
    }
    c = {};
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.ssdp_enabled = false;
    c.square_mask = true;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves the model and the reports unchanged") {
    const Dataset d = generate_dataset(tiny_spec());
    TrainConfig c;
    c.learning_rate = 0.0;
    c.weight_decay = 0.0;
    c.queue_length = 0;
    Trainer t(Model::initialize({4, true}, 1), c);
    const auto before = parameter_checksum(t.model());
    const auto batch = first(d, 4);
    const LossReport a = t.train_step(batch);
    const LossReport b = t.train_step(batch);
    CHECK(parameter_checksum(t.model()) == before);
    CHECK(a.l_cls == b.l_cls);
    CHECK(a.l_qc == b.l_qc);
    CHECK(a.l_ssdt == b.l_ssdt);
    CHECK(a.total == b.total);
    CHECK(b.step == 2);
}

TEST_CASE("reported total equals the weighted sum of its parts") {
    const Dataset d = generate_dataset(tiny_spec());
    TrainConfig c;
    c.alpha = 0.7;
    c.beta = 0.3;
    Trainer t(Model::initialize({4, true}, 5), c);
    for (int i = 0; i < 4; ++i) {
        const LossReport r = t.train_step(first(d, 4));
        CHECK(std::abs(r.total - total_loss(r.l_cls, r.l_qc, r.l_ssdt, 0.7, 0.3)) < 1e-12);
        CHECK(r.l_cls > 0.0);
        CHECK(r.l_qc >= 0.0);
        CHECK(r.l_ssdt >= 0.0);
    }
    CHECK(t.queue().size() == 2);
}

TEST_CASE("with every extra term off, a step is plain smoothed-CE AdamW") {
    const Dataset d = generate_dataset(tiny_spec());
    TrainConfig c;
    c.alpha = 0.0;
    c.beta = 0.0;
    c.queue_length = 0;
    c.ssdp_enabled = false;
    c.learning_rate = 0.01;
    const Model init = Model::initialize({4, false}, 9);
    Trainer t(init, c);

    Model ref = init;
    AdamW opt({c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps, c.weight_decay});
    for (int step = 0; step < 3; ++step) {
        const auto batch = first(d, 6);
        const LossReport r = t.train_step(batch);

        Tape tape;
        const BoundModel b = bind(tape, ref, true);
        std::vector<Var> terms;
        for (const Sample* s : batch) {
            Var logits = head_forward(b, ops::global_avg_pool(extract_features(b, tape.constant(s->image))));
            terms.push_back(label_smoothing_ce(logits, static_cast<std::size_t>(s->label), c.label_smoothing));
        }
        Var loss = ops::average(terms);
        tape.backward(loss);
        std::vector<Tensor> grads;
        for (const auto& p : b.parameters()) grads.push_back(p.grad());
        auto params = ref.parameters();
        opt.step(params, grads);
        for (auto* p : params) quantize_to_float(*p);

        CHECK(r.l_cls == loss.value().item());
        CHECK(r.total == r.l_cls);
        CHECK(r.l_ssdt == 0.0);
        for (std::size_t i = 0; i < grads.size(); ++i) CHECK(t.last_gradients()[i] == grads[i]);
        CHECK(parameter_checksum(t.model()) == parameter_checksum(ref));
    }
}

TEST_CASE("zero weights remove a term's gradient contribution") {
    const Dataset d = generate_dataset(tiny_spec());
    const Model init = Model::initialize({4, true}, 2);
    auto grads = [&](double alpha, double beta, bool cls_on_aug) {
        TrainConfig c;
        c.alpha = alpha;
        c.beta = beta;
        c.cls_on_aug = cls_on_aug;
        c.queue_length = 0;
        Trainer t(init, c);
        t.train_step(first(d, 4));
        return t.last_gradients();
    };
    // With alpha = beta = 0 the gradients are those of L_cls alone; turning
    // on either term changes them.
    const auto base = grads(0.0, 0.0, true);
    const auto with_qc = grads(1.0, 0.0, true);
    const auto with_kd = grads(0.0, 0.4, true);
    bool qc_changes = false, kd_changes = false;
    for (std::size_t i = 0; i < base.size(); ++i) {
        qc_changes |= !(base[i] == with_qc[i]);
        kd_changes |= !(base[i] == with_kd[i]);
    }
    CHECK(qc_changes);
    CHECK(kd_changes);
    CHECK(grads(0.0, 0.0, true) == base);
}

TEST_CASE("evaluate") {
    const Dataset d = generate_dataset(tiny_spec());
    SUBCASE("a head rigged to a constant class scores that class's share") {
        Model m = Model::initialize({4, true}, 1);
        m.head.weight = Tensor(m.head.weight.shape(), 0.0);
        m.head.bias = Tensor::vector({0, 0, 5, 0});
        const auto r = evaluate(d.test, m);
        std::size_t twos = 0;
        for (const auto& s : d.test) twos += s.label == 2;
        CHECK(r.accuracy == static_cast<double>(twos) / d.test.size());
        for (auto p : r.predictions) CHECK(p == 2);
    }
    SUBCASE("raw mode never touches the augmented branch") {
        BranchCounters counters;
        const Model m = Model::initialize({4, true}, 4);
        const auto r = evaluate(d.test, m, EvalMode::raw_only, &counters);
        CHECK(counters.raw_forwards == d.test.size());
        CHECK(counters.augment_calls == 0);
        CHECK(counters.aug_forwards == 0);
        CHECK(r.samples == d.test.size());

        BranchCounters dual;
        evaluate(d.test, m, EvalMode::dual_branch, &dual);
        CHECK(dual.aug_forwards == d.test.size());
        CHECK_THROWS_AS(evaluate(d.test, Model::initialize({4, false}, 4), EvalMode::dual_branch),
                        std::invalid_argument);
        CHECK_THROWS_AS(evaluate({}, m), std::invalid_argument);
    }
    SUBCASE("predictions are argmax of Head(pool(refine(X, P)))") {
        const Model m = Model::initialize({4, true}, 6);
        const auto r = evaluate(d.test, m);
        for (std::size_t i = 0; i < d.test.size(); ++i) {
            Tape tape;
            const BoundModel b = bind(tape, m, false);
            Var x = extract_features(b, tape.constant(d.test[i].image));
            Var xs = ssdp::refine(x, ssdp::pattern_scores(x, *b.kernel));
            const Tensor e = ops::global_avg_pool(xs).value();
            CHECK(r.predictions[i] == ssdt::predict(e, m.head));
        }
    }
}

TEST_CASE("a random head lands near chance on two balanced classes") {
    SyntheticSpec s = tiny_spec();
    s.classes = 2;
    s.images_per_class = 10;
    const Dataset d = generate_dataset(s);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) total += evaluate(d.test, Model::initialize({2, true}, seed)).accuracy;
    CHECK(std::abs(total / 40 - 0.5) < 0.1);
}

TEST_CASE("run_training writes one metrics line per step and is deterministic") {
    const Dataset d = generate_dataset(tiny_spec());
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 4;
    c.learning_rate = 3e-3;
    std::ostringstream a, b;
    const RunResult ra = run_training(d, c, &a);
    const RunResult rb = run_training(d, c, &b);
    CHECK(a.str() == b.str());
    CHECK(parameter_checksum(ra.model) == parameter_checksum(rb.model));
    CHECK(ra.reports.size() == 6); // 8 train images, batch 4, 3 epochs

    std::istringstream lines(a.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        ++n;
        CHECK(j.at("step").get<std::size_t>() == n);
        for (const char* key : {"l_cls", "l_qc", "l_ssdt", "total"}) CHECK(j.contains(key));
        CHECK(j.contains("acc") == (n == 6));
    }
    CHECK(n == 6);
    CHECK(ra.final_accuracy == ra.reports.back().accuracy.value());
    CHECK(ra.optimizer.step == 6);

    TrainConfig other = c;
    other.seed = 1;
    CHECK(parameter_checksum(run_training(d, other).model) != parameter_checksum(ra.model));
}

TEST_CASE("fixed-seed run reproduces its recorded result") {
    const Dataset d = generate_dataset(tiny_spec());
    TrainConfig c;
    c.epochs = 4;
    c.batch_size = 4;
    c.learning_rate = 3e-3;
    const RunResult r = run_training(d, c);
    CHECK(r.final_accuracy == doctest::Approx(0.25));
    CHECK(parameter_checksum(r.model) == 12178837540137818816ULL);
}
