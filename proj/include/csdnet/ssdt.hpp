#pragma once

#include "csdnet/autodiff.hpp"
#include "csdnet/backbone.hpp"
#include "csdnet/tensor.hpp"

#include <cstddef>

namespace csdnet::ssdt {

/// Which branch's distribution is the (detached) target.
enum class Teacher { aug, raw };

struct LogitPair {
    Var y_raw;
    Var y_aug;
    double temperature = 1.0;
};

struct DistillOptions {
    Teacher teacher = Teacher::aug;
    bool detach_teacher = true;
};

/// KL(p || q) with p = softmax(teacher / T) and q = softmax(student / T),
/// computed from log-softmax on both sides.
Var ssdt_loss(const LogitPair& pair, const DistillOptions& options = {});

/// Index of the largest logit; the smallest index wins ties.
std::size_t argmax(const Tensor& logits);

/// Raw-branch prediction: argmax of Head(e_raw).
std::size_t predict(const Tensor& raw_embedding, const Head& head);

} // namespace csdnet::ssdt
