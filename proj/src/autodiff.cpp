#include "csdnet/autodiff.hpp"

#include <stdexcept>

namespace csdnet {

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

const Tensor& Var::grad() const { return tape_->grad_buffer(id_); }

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    n.op = "leaf";
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = "constant";
    return push(std::move(n));
}

Var Tape::detach(Var v) {
    if (v.tape_ != this) {
        throw std::invalid_argument("detach: variable belongs to another tape");
    }
    Node n;
    n.value = nodes_.at(v.id_).value;
    n.op = "detach";
    return push(std::move(n));
}

Var Tape::record(Tensor value, const char* op, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
    return record(std::move(value), op, std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const char* op, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (in.tape_ != this) {
            throw std::invalid_argument(std::string(op) + ": input belongs to another tape");
        }
        n.inputs.push_back(in.id_);
        n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    return push(std::move(n));
}

Tensor& Tape::grad_buffer(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.empty()) {
        node.grad = Tensor(node.value.shape(), 0.0);
    }
    return node.grad;
}

void Tape::backward(Var root) {
    if (root.tape_ != this) {
        throw std::invalid_argument("backward: root belongs to another tape");
    }
    if (nodes_.at(root.id_).value.size() != 1) {
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_to_string(nodes_[root.id_].value.shape()));
    }
    grad_buffer(root.id_)[0] += 1.0;

    std::vector<Tensor*> input_grads;
    for (std::size_t id = root.id_ + 1; id-- > 0;) {
        Node& node = nodes_[id];
        if (!node.backward || node.grad.empty()) {
            continue;
        }
        input_grads.clear();
        for (auto in : node.inputs) {
            input_grads.push_back(nodes_[in].requires_grad ? &grad_buffer(in) : nullptr);
        }
        // grad_buffer may have grown other nodes' buffers but never reallocates nodes_.
        node.backward(node.grad, input_grads);
    }
}

void Tape::zero_grad() {
    for (auto& n : nodes_) {
        if (!n.grad.empty()) {
            n.grad.fill(0.0);
        }
    }
}

} // namespace csdnet
