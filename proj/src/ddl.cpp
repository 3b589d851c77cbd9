#include "csdnet/ddl.hpp"

#include "csdnet/ops.hpp"
#include "csdnet/rng.hpp"

#include <stdexcept>

namespace csdnet::ddl {

void MemoryQueue::push(EmbeddingBatch batch) {
    if (capacity_ == 0) {
        return;
    }
    if (batches_.size() == capacity_) {
        batches_.pop_front();
    }
    batches_.push_back(std::move(batch));
}

std::size_t MemoryQueue::embedding_count() const noexcept {
    std::size_t n = 0;
    for (const auto& b : batches_) {
        n += b.items.size();
    }
    return n;
}

MemoryQueue enqueue_dequeue(MemoryQueue queue, EmbeddingBatch batch) {
    queue.push(std::move(batch));
    return queue;
}

std::size_t PairRelation::positive_count() const {
    std::size_t n = 0;
    for (std::size_t u = 0; u < labels_.size(); ++u) {
        for (std::size_t v = 0; v < labels_.size(); ++v) {
            n += positive(u, v);
        }
    }
    return n;
}

std::size_t PairRelation::negative_count() const {
    std::size_t n = 0;
    for (std::size_t u = 0; u < labels_.size(); ++u) {
        for (std::size_t v = 0; v < labels_.size(); ++v) {
            n += negative(u, v);
        }
    }
    return n;
}

PairRelation build_pair_mask(std::span<const int> current_labels, const MemoryQueue& queue) {
    std::vector<int> labels(current_labels.begin(), current_labels.end());
    for (const auto& batch : queue.batches()) {
        for (const auto& e : batch.items) {
            labels.push_back(e.label);
        }
    }
    return PairRelation(std::move(labels));
}

namespace {

// coef(u, v) is d(loss * Q^2)/d(sim(u, v)) for every ordered pair.
Var pairwise_margin_loss(Var normalized, const PairRelation& pairs,
                         const std::vector<std::size_t>& sampled_negative, double margin) {
    const Tensor& z = normalized.value();
    const std::size_t q = z.dim(0), d = z.dim(1);
    const double norm = 1.0 / static_cast<double>(q * q);

    std::vector<double> sim(q * q, 0.0);
    for (std::size_t u = 0; u < q; ++u) {
        for (std::size_t v = u; v < q; ++v) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                acc += z[u * d + j] * z[v * d + j];
            }
            sim[u * q + v] = acc;
            sim[v * q + u] = acc;
        }
    }

    const bool sampled = !sampled_negative.empty();
    std::vector<double> coef(q * q, 0.0);
    double total = 0.0;
    for (std::size_t u = 0; u < q; ++u) {
        for (std::size_t v = 0; v < q; ++v) {
            if (pairs.positive(u, v)) {
                total += 1.0 - sim[u * q + v];
                coef[u * q + v] = -1.0;
            } else if (pairs.negative(u, v) && (!sampled || sampled_negative[u] == v)) {
                const double excess = sim[u * q + v] - margin;
                if (excess > 0.0) {
                    total += excess;
                    coef[u * q + v] = 1.0;
                }
            }
        }
    }

    return normalized.tape().record(
        Tensor::scalar(total * norm), "queue_contrastive", {normalized},
        [normalized, coef = std::move(coef), q, d, norm](const Tensor& g,
                                                          std::vector<Tensor*>& in) {
            const Tensor& z = normalized.value();
            Tensor& gz = *in[0];
            const double scale = g[0] * norm;
            for (std::size_t u = 0; u < q; ++u) {
                for (std::size_t v = 0; v < q; ++v) {
                    // sim(u, v) = z_u . z_v appears in both (u, v) and (v, u).
                    const double c = coef[u * q + v] + coef[v * q + u];
                    if (c == 0.0) continue;
                    for (std::size_t j = 0; j < d; ++j) {
                        gz[u * d + j] += scale * c * z[v * d + j];
                    }
                }
            }
        });
}

} // namespace

ContrastiveResult contrastive_loss(Tape& tape, std::span<const Var> embeddings,
                                   const PairRelation& pairs, const ContrastiveOptions& options) {
    if (embeddings.size() != pairs.entries()) {
        throw std::invalid_argument("contrastive_loss: " + std::to_string(embeddings.size()) +
                                    " embeddings but " + std::to_string(pairs.entries()) +
                                    " labels");
    }
    ContrastiveResult result;
    result.entries = embeddings.size();
    if (embeddings.size() < 2) {
        result.degenerate = true;
        ++tape.diagnostics().degenerate_contrastive;
        result.loss = tape.constant(Tensor::scalar(0.0));
        return result;
    }

    std::vector<Var> normalized;
    normalized.reserve(embeddings.size());
    for (const auto& e : embeddings) {
        normalized.push_back(ops::l2_normalize(e));
    }

    std::vector<std::size_t> sampled;
    if (options.sampling == NegativeSampling::random) {
        const std::size_t q = embeddings.size();
        sampled.assign(q, q); // q marks "no negative available"
        Rng rng(derive_seed(options.seed, {q}));
        std::vector<std::size_t> candidates;
        for (std::size_t u = 0; u < q; ++u) {
            candidates.clear();
            for (std::size_t v = 0; v < q; ++v) {
                if (pairs.negative(u, v)) candidates.push_back(v);
            }
            if (!candidates.empty()) {
                sampled[u] = candidates[rng.below(candidates.size())];
            }
        }
    }

    result.loss = pairwise_margin_loss(ops::stack(normalized), pairs, sampled, options.margin);
    return result;
}

ContrastiveResult queue_contrastive_loss(Tape& tape, std::span<const Var> current,
                                         std::span<const int> labels, const MemoryQueue& queue,
                                         const ContrastiveOptions& options) {
    if (current.size() != labels.size()) {
        throw std::invalid_argument("queue_contrastive_loss: embeddings and labels differ in count");
    }
    std::vector<Var> all(current.begin(), current.end());
    for (const auto& batch : queue.batches()) {
        for (const auto& e : batch.items) {
            all.push_back(tape.constant(e.vector));
        }
    }
    return contrastive_loss(tape, all, build_pair_mask(labels, queue), options);
}

} // namespace csdnet::ddl
