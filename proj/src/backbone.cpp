#include "csdnet/backbone.hpp"

#include "csdnet/ops.hpp"
#include "csdnet/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace csdnet {

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::uint64_t seed) {
    Tensor t(std::move(shape), 0.0);
    Rng rng(seed);
    for (auto& v : t.data()) {
        v = rng.uniform(-bound, bound);
    }
    quantize_to_float(t);
    return t;
}

} // namespace

void quantize_to_float(Tensor& t) noexcept {
    for (auto& v : t.data()) {
        v = static_cast<double>(static_cast<float>(v));
    }
}

void validate_image_shape(const Shape& shape) {
    if (shape.size() != 3 || shape[0] != 3) {
        throw std::invalid_argument("image must be 3 x H x W, got " + shape_to_string(shape));
    }
    if (shape[1] % kFeatureStride != 0 || shape[2] % kFeatureStride != 0) {
        throw std::invalid_argument("image extents must be multiples of " +
                                    std::to_string(kFeatureStride) + ", got " +
                                    shape_to_string(shape));
    }
}

TinyBackbone TinyBackbone::initialize(std::uint64_t seed) {
    TinyBackbone b;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t cin = kBackboneChannels[i];
        const std::size_t cout = kBackboneChannels[i + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(cin * 9));
        b.weights[i] = uniform_tensor({cout, cin, 3, 3}, bound, derive_seed(seed, {1, i}));
        b.biases[i] = Tensor({cout}, 0.0);
    }
    return b;
}

Head Head::initialize(std::size_t classes, std::size_t width, std::uint64_t seed) {
    if (classes == 0 || width == 0) {
        throw std::invalid_argument("head needs at least one class and one input");
    }
    Head h;
    h.weight = uniform_tensor({classes, width}, 1.0 / std::sqrt(static_cast<double>(width)),
                              derive_seed(seed, {2}));
    h.bias = Tensor({classes}, 0.0);
    return h;
}

Model Model::initialize(const ModelOptions& options, std::uint64_t seed) {
    if (options.classes < 2) {
        throw std::invalid_argument("model needs at least two classes");
    }
    Model m;
    m.backbone = TinyBackbone::initialize(seed);
    m.head = Head::initialize(options.classes, kEmbeddingWidth, seed);
    if (options.discrepancy_kernel) {
        m.kernel = uniform_tensor({kEmbeddingWidth},
                                  1.0 / std::sqrt(static_cast<double>(kEmbeddingWidth)),
                                  derive_seed(seed, {3}));
    }
    return m;
}

std::vector<std::string> Model::parameter_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < 3; ++i) {
        names.push_back("backbone.conv" + std::to_string(i + 1) + ".weight");
        names.push_back("backbone.conv" + std::to_string(i + 1) + ".bias");
    }
    names.emplace_back("head.weight");
    names.emplace_back("head.bias");
    if (kernel) {
        names.emplace_back("ssdp.kernel");
    }
    return names;
}

std::vector<Tensor*> Model::parameters() {
    std::vector<Tensor*> out;
    for (std::size_t i = 0; i < 3; ++i) {
        out.push_back(&backbone.weights[i]);
        out.push_back(&backbone.biases[i]);
    }
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    if (kernel) {
        out.push_back(&*kernel);
    }
    return out;
}

std::vector<const Tensor*> Model::parameters() const {
    auto mut = const_cast<Model*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<Var> BoundModel::parameters() const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < 3; ++i) {
        out.push_back(weights[i]);
        out.push_back(biases[i]);
    }
    out.push_back(head_weight);
    out.push_back(head_bias);
    if (kernel) {
        out.push_back(*kernel);
    }
    return out;
}

BoundModel bind(Tape& tape, const Model& model, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
    BoundModel b;
    for (std::size_t i = 0; i < 3; ++i) {
        b.weights[i] = put(model.backbone.weights[i]);
        b.biases[i] = put(model.backbone.biases[i]);
    }
    b.head_weight = put(model.head.weight);
    b.head_bias = put(model.head.bias);
    if (model.kernel) {
        b.kernel = put(*model.kernel);
    }
    return b;
}

Var extract_features(const BoundModel& model, Var image) {
    validate_image_shape(image.shape());
    // Centre pixel values around zero.
    Var x = ops::sub(image, image.tape().constant(Tensor(image.shape(), 0.5)));
    for (std::size_t i = 0; i < 3; ++i) {
        x = ops::conv2d_3x3(x, model.weights[i], 2);
        x = ops::add_channel_bias(x, model.biases[i]);
        x = ops::relu(x);
    }
    return x;
}

Var head_forward(const BoundModel& model, Var embedding) {
    return ops::linear(model.head_weight, model.head_bias, embedding);
}

Tensor head_forward(const Head& head, const Tensor& embedding) {
    if (embedding.rank() != 1 || embedding.size() != head.width()) {
        throw std::invalid_argument("head_forward: expected embedding of length " +
                                    std::to_string(head.width()) + ", got " +
                                    shape_to_string(embedding.shape()));
    }
    Tensor out = head.bias;
    const std::size_t d = head.width();
    for (std::size_t k = 0; k < head.classes(); ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            acc += head.weight[k * d + j] * embedding[j];
        }
        out[k] += acc;
    }
    return out;
}

} // namespace csdnet
