#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "csdnet/ddl.hpp"
#include "csdnet/gradcheck.hpp"
#include "support/oracles.hpp"

#include <cmath>

using namespace csdnet;
using namespace csdnet::ddl;
using oracle::random_tensor;

namespace {

EmbeddingBatch batch_of(std::size_t index, std::size_t n = 2, int label = 0) {
    EmbeddingBatch b;
    b.batch_index = index;
    for (std::size_t i = 0; i < n; ++i) {
        b.items.push_back({random_tensor({3}, index * 10 + i), label, Origin::raw});
    }
    return b;
}

// Double loop over ordered pairs, written straight from the loss definition.
double naive_loss(const std::vector<Tensor>& e, const std::vector<int>& labels, double margin) {
    const std::size_t q = e.size();
    std::vector<Tensor> unit;
    for (const auto& v : e) {
        double n = 0.0;
        for (double a : v.data()) n += a * a;
        Tensor u = v;
        for (auto& a : u.data()) a /= std::sqrt(n) + 1e-12;
        unit.push_back(u);
    }
    double total = 0.0;
    for (std::size_t u = 0; u < q; ++u)
        for (std::size_t v = 0; v < q; ++v) {
            if (u == v) continue;
            double sim = 0.0;
            for (std::size_t k = 0; k < unit[u].size(); ++k) sim += unit[u][k] * unit[v][k];
            total += labels[u] == labels[v] ? 1.0 - sim : std::max(sim - margin, 0.0);
        }
    return total / static_cast<double>(q * q);
}

} // namespace

TEST_CASE("queue is FIFO with a capacity in batches") {
    MemoryQueue q(2);
    q = enqueue_dequeue(q, batch_of(1));
    q = enqueue_dequeue(q, batch_of(2));
    q = enqueue_dequeue(q, batch_of(3));
    REQUIRE(q.size() == 2);
    CHECK(q.batches()[0].batch_index == 2);
    CHECK(q.batches()[1].batch_index == 3);
    CHECK(q.embedding_count() == 4);

    MemoryQueue none(0);
    none.push(batch_of(1));
    CHECK(none.empty());

    MemoryQueue one(1);
    one.push(batch_of(1));
    CHECK(one.batches().front().batch_index == 1);
    one.push(batch_of(2));
    CHECK(one.size() == 1);
    CHECK(one.batches().front().batch_index == 2);
}

TEST_CASE("queue contents equal the last min(n, capacity) pushes") {
    for (std::uint64_t trial = 0; trial < 200; ++trial) {
        Rng rng(trial);
        const std::size_t cap = rng.below(5);
        const std::size_t pushes = rng.below(12);
        MemoryQueue q(cap);
        std::vector<EmbeddingBatch> pushed;
        for (std::size_t i = 0; i < pushes; ++i) {
            pushed.push_back(batch_of(trial * 100 + i, 1 + rng.below(3), static_cast<int>(rng.below(4))));
            q.push(pushed.back());
            CHECK(q.size() <= cap);
        }
        const std::size_t keep = std::min(pushes, cap);
        REQUIRE(q.size() == keep);
        for (std::size_t k = 0; k < keep; ++k) {
            const auto& got = q.batches()[k];
            const auto& want = pushed[pushes - keep + k];
            CHECK(got.batch_index == want.batch_index);
            REQUIRE(got.items.size() == want.items.size());
            for (std::size_t i = 0; i < got.items.size(); ++i) {
                CHECK(got.items[i].vector == want.items[i].vector);
                CHECK(got.items[i].label == want.items[i].label);
            }
        }
    }
}

TEST_CASE("pair relation") {
    const std::vector<int> same{4, 4}, diff{1, 2};
    MemoryQueue empty(3);
    auto p = build_pair_mask(same, empty);
    CHECK(p.positive_count() == 2);
    CHECK(p.negative_count() == 0);
    p = build_pair_mask(diff, empty);
    CHECK(p.positive_count() == 0);
    CHECK(p.negative_count() == 2);

    // current {a, a', b} + queue {a''}
    MemoryQueue q(1);
    EmbeddingBatch stored;
    stored.items.push_back({Tensor({2}, 1.0), 0, Origin::aug});
    q.push(stored);
    const std::vector<int> current{0, 0, 1};
    p = build_pair_mask(current, q);
    CHECK(p.entries() == 4);
    CHECK(p.labels() == std::vector<int>{0, 0, 1, 0});
    CHECK(p.positive_count() == 6);
    CHECK(p.negative_count() == 6);
    CHECK_FALSE(p.positive(0, 0));
    CHECK_FALSE(p.negative(2, 2));
}

TEST_CASE("contrastive loss hand values") {
    const ContrastiveOptions hinge{0.5, NegativeSampling::all, 0};
    auto loss = [&](std::vector<Tensor> e, std::vector<int> labels) {
        Tape tape;
        std::vector<Var> vars;
        for (auto& t : e) vars.push_back(tape.leaf(t));
        return contrastive_loss(tape, vars, PairRelation(labels), hinge).loss.value().item();
    };
    CHECK(std::abs(loss({Tensor::vector({0.6, 0.8}), Tensor::vector({0.6, 0.8})}, {1, 1})) < 1e-9);
    CHECK(loss({Tensor::vector({1, 0}), Tensor::vector({0, 1})}, {1, 2}) == 0.0);
    const double expected = 2.0 * (std::sqrt(0.5) - 0.5) / 4.0;
    CHECK(std::abs(loss({Tensor::vector({1, 0}), Tensor::vector({1, 1})}, {0, 1}) - expected) < 1e-12);
    CHECK(std::abs(expected - 0.10355) < 1e-5);
}

TEST_CASE("fewer than two entries is a flagged zero") {
    Tape tape;
    std::vector<Var> one{tape.leaf(Tensor::vector({1, 2}))};
    const auto r = contrastive_loss(tape, one, PairRelation({0}), {});
    CHECK(r.degenerate);
    CHECK(r.loss.value().item() == 0.0);
    CHECK(tape.diagnostics().degenerate_contrastive == 1);
}

TEST_CASE("loss matches the double-loop oracle and stays non-negative") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const std::size_t q = 2 + rng.below(8);
        std::vector<Tensor> e;
        std::vector<int> labels;
        for (std::size_t i = 0; i < q; ++i) {
            e.push_back(random_tensor({4}, seed * 50 + i));
            labels.push_back(static_cast<int>(rng.below(3)));
        }
        const double margin = rng.uniform(-0.5, 1.0);
        Tape tape;
        std::vector<Var> vars;
        for (auto& t : e) vars.push_back(tape.leaf(t));
        const double got =
            contrastive_loss(tape, vars, PairRelation(labels), {margin, NegativeSampling::all, 0})
                .loss.value().item();
        CHECK(got >= 0.0);
        CHECK(std::abs(got - naive_loss(e, labels, margin)) < 1e-12);
    }
}

TEST_CASE("zero loss when positives align and negatives sit below the margin") {
    Tape tape;
    std::vector<Var> e{tape.leaf(Tensor::vector({1, 0, 0})), tape.leaf(Tensor::vector({2, 0, 0})),
                       tape.leaf(Tensor::vector({0, 1, 0})), tape.leaf(Tensor::vector({0, 3, 0}))};
    const auto r = contrastive_loss(tape, e, PairRelation({0, 0, 1, 1}), {0.5, NegativeSampling::all, 0});
    CHECK(std::abs(r.loss.value().item()) < 1e-9);
}

TEST_CASE("queue copies change the loss but receive no gradient") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const std::vector<int> labels{0, 1, 0};
        std::vector<Tensor> cur{random_tensor({4}, seed), random_tensor({4}, seed + 1),
                                random_tensor({4}, seed + 2)};
        Tensor stored = random_tensor({4}, seed + 3);
        auto run = [&](const Tensor& s, Tensor* grad_of_stored) {
            Tape tape;
            std::vector<Var> vars;
            for (auto& t : cur) vars.push_back(tape.leaf(t));
            Var q = tape.constant(s);
            vars.push_back(q);
            const auto r = contrastive_loss(tape, vars, PairRelation({0, 1, 0, 1}), {-1.0, NegativeSampling::all, 0});
            tape.backward(r.loss);
            if (grad_of_stored) *grad_of_stored = q.grad();
            return r.loss.value().item();
        };
        Tensor g;
        const double base = run(stored, &g);
        for (double v : g.data()) CHECK(v == 0.0);
        Tensor moved = stored;
        moved[0] += 0.5;
        CHECK(run(moved, nullptr) != base);
    }
}

TEST_CASE("empty queue reduces to in-batch loss") {
    const std::vector<int> labels{0, 1, 1, 2};
    std::vector<Tensor> cur;
    for (std::uint64_t i = 0; i < 4; ++i) cur.push_back(random_tensor({5}, i + 7));
    const ContrastiveOptions opt{0.3, NegativeSampling::all, 0};
    Tape a, b;
    std::vector<Var> va, vb;
    for (auto& t : cur) {
        va.push_back(a.leaf(t));
        vb.push_back(b.leaf(t));
    }
    const double with_queue = queue_contrastive_loss(a, va, labels, MemoryQueue(0), opt).loss.value().item();
    const double in_batch = contrastive_loss(b, vb, PairRelation(labels), opt).loss.value().item();
    CHECK(with_queue == in_batch);
}

TEST_CASE("gradient through L2 normalization matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::vector<Tensor> cur;
        std::vector<int> labels;
        for (std::size_t i = 0; i < 4; ++i) {
            cur.push_back(random_tensor({3}, seed * 9 + i));
            labels.push_back(static_cast<int>(rng.below(2)));
        }
        MemoryQueue q(2);
        EmbeddingBatch stored;
        stored.items.push_back({random_tensor({3}, seed + 500), 1, Origin::raw});
        q.push(stored);
        for (std::size_t target = 0; target < cur.size(); ++target) {
            ScalarFn f = [&, target](Tape& tape, Var x) {
                std::vector<Var> vars;
                for (std::size_t i = 0; i < cur.size(); ++i)
                    vars.push_back(i == target ? x : tape.constant(cur[i]));
                return queue_contrastive_loss(tape, vars, labels, q, {-0.5, NegativeSampling::all, 0}).loss;
            };
            CHECK(grad_check(f, cur[target]) <= 1e-4);
        }
    }
}

TEST_CASE("random negative sampling is seeded") {
    const std::vector<int> labels{0, 1, 2, 0, 1};
    std::vector<Tensor> cur;
    for (std::uint64_t i = 0; i < 5; ++i) cur.push_back(random_tensor({4}, i + 30));
    auto run = [&](std::uint64_t seed) {
        Tape tape;
        std::vector<Var> vars;
        for (auto& t : cur) vars.push_back(tape.leaf(t));
        return contrastive_loss(tape, vars, PairRelation(labels), {-1.0, NegativeSampling::random, seed})
            .loss.value().item();
    };
    CHECK(run(3) == run(3));
    CHECK(run(3) >= 0.0);
    // One negative per anchor is never more than all of them.
    Tape tape;
    std::vector<Var> vars;
    for (auto& t : cur) vars.push_back(tape.leaf(t));
    const double all = contrastive_loss(tape, vars, PairRelation(labels), {-1.0, NegativeSampling::all, 0})
                           .loss.value().item();
    CHECK(run(3) <= all);
}
