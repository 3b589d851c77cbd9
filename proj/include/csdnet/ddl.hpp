#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

namespace csdnet::ddl {

enum class Origin { raw, aug };

struct Embedding {
    Tensor vector; // length D, stored before L2 normalization
    int label = 0;
    Origin origin = Origin::raw;
};

struct EmbeddingBatch {
    std::vector<Embedding> items;
    std::size_t batch_index = 0;
};

/// FIFO of the last `capacity` embedding batches, oldest first. Stored
/// vectors are plain values, so nothing pushed here can carry a gradient.
class MemoryQueue {
public:
    explicit MemoryQueue(std::size_t capacity = 0) : capacity_(capacity) {}

    /// Dequeues the earliest batch when full, then enqueues `batch`.
    void push(EmbeddingBatch batch);
    void clear() { batches_.clear(); }

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return batches_.size(); }
    bool empty() const noexcept { return batches_.empty(); }
    std::size_t embedding_count() const noexcept;
    const std::deque<EmbeddingBatch>& batches() const noexcept { return batches_; }

private:
    std::size_t capacity_;
    std::deque<EmbeddingBatch> batches_;
};

MemoryQueue enqueue_dequeue(MemoryQueue queue, EmbeddingBatch batch);

/// Labels of M = Cat(current, queue) in order. Ordered pairs (u, v), u != v,
/// are positive when the labels match and negative otherwise.
class PairRelation {
public:
    explicit PairRelation(std::vector<int> labels) : labels_(std::move(labels)) {}

    std::size_t entries() const noexcept { return labels_.size(); }
    const std::vector<int>& labels() const noexcept { return labels_; }
    bool positive(std::size_t u, std::size_t v) const {
        return u != v && labels_[u] == labels_[v];
    }
    bool negative(std::size_t u, std::size_t v) const {
        return u != v && labels_[u] != labels_[v];
    }
    std::size_t positive_count() const;
    std::size_t negative_count() const;

private:
    std::vector<int> labels_;
};

PairRelation build_pair_mask(std::span<const int> current_labels, const MemoryQueue& queue);

enum class NegativeSampling {
    all,    // every cross-label ordered pair
    random, // one random cross-label partner per anchor
};

struct ContrastiveOptions {
    double margin = 1.0;
    NegativeSampling sampling = NegativeSampling::all;
    std::uint64_t seed = 0; // only used by NegativeSampling::random
};

struct ContrastiveResult {
    Var loss;
    std::size_t entries = 0;
    bool degenerate = false; // fewer than two entries; loss is 0
};

/// L = (1/Q^2) sum_{u != v} [pos: 1 - sim(u,v)] + [neg: max(sim(u,v) - margin, 0)]
/// with sim the dot product of L2-normalized embeddings.
ContrastiveResult contrastive_loss(Tape& tape, std::span<const Var> embeddings,
                                   const PairRelation& pairs, const ContrastiveOptions& options);

/// Current embeddings followed by detached copies of the queue contents.
ContrastiveResult queue_contrastive_loss(Tape& tape, std::span<const Var> current,
                                         std::span<const int> labels, const MemoryQueue& queue,
                                         const ContrastiveOptions& options);

} // namespace csdnet::ddl
