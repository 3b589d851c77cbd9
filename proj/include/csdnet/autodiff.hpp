#pragma once

#include "csdnet/tensor.hpp"

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace csdnet {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// tape that created it is alive.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    /// Accumulated gradient. All zeros for nodes that never received one.
    const Tensor& grad() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape& tape() const { return *tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Receives the output gradient and the gradient buffers of every input.
/// A buffer pointer is null when that input does not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::vector<Tensor*>& input_grads)>;

struct TapeDiagnostics {
    std::size_t clamped_norms = 0;
    std::size_t degenerate_contrastive = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order and backward()
/// visits them in exactly the reverse order. Single-threaded.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Trainable input.
    Var leaf(Tensor value);
    /// Detached input: never accumulates gradient.
    Var constant(Tensor value);
    /// Copy of `v` cut from the graph.
    Var detach(Var v);

    /// Records the result of a primitive. The backward function is dropped
    /// when no input requires a gradient.
    Var record(Tensor value, const char* op, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn backward);

    /// Seeds d(root)/d(root) = 1 and propagates. `root` must hold one element.
    void backward(Var root);
    void zero_grad();

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string& op_name(Var v) const { return nodes_.at(v.id()).op; }

    TapeDiagnostics& diagnostics() noexcept { return diagnostics_; }
    const TapeDiagnostics& diagnostics() const noexcept { return diagnostics_; }

private:
    friend class Var;

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::string op;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
    };

    Tensor& grad_buffer(std::size_t id);
    Var push(Node node);

    std::vector<Node> nodes_;
    TapeDiagnostics diagnostics_;
};

} // namespace csdnet
