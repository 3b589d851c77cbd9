#include "csdnet/ssdt.hpp"

#include "csdnet/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace csdnet::ssdt {

Var ssdt_loss(const LogitPair& pair, const DistillOptions& options) {
    if (!(pair.temperature > 0.0) || !std::isfinite(pair.temperature)) {
        throw std::invalid_argument("ssdt_loss: temperature must be finite and positive");
    }
    require_same_shape(pair.y_raw.value(), pair.y_aug.value(), "ssdt_loss");
    Tape& tape = pair.y_raw.tape();

    Var teacher = options.teacher == Teacher::aug ? pair.y_aug : pair.y_raw;
    Var student = options.teacher == Teacher::aug ? pair.y_raw : pair.y_aug;
    if (options.detach_teacher) {
        teacher = tape.detach(teacher);
    }
    const double inv_t = 1.0 / pair.temperature;
    Var log_p = ops::log_softmax(ops::scale(teacher, inv_t));
    Var log_q = ops::log_softmax(ops::scale(student, inv_t));
    Var p = ops::exp(log_p);
    return ops::sum(ops::mul(p, ops::sub(log_p, log_q)));
}

std::size_t argmax(const Tensor& logits) {
    if (logits.empty()) {
        throw std::invalid_argument("argmax of an empty tensor");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return best;
}

std::size_t predict(const Tensor& raw_embedding, const Head& head) {
    return argmax(head_forward(head, raw_embedding));
}

} // namespace csdnet::ssdt
