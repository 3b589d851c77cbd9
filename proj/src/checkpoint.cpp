#include "csdnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace csdnet {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'D', '1'};

class Writer {
public:
    template <typename T>
    void put(T v) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        const U bits = std::bit_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            out_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    }
    void bytes(std::string_view s) { out_.append(s); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view in) : in_(in) {}

    template <typename T>
    T get(const char* what) {
        using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                     std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
        need(sizeof(U), what);
        U bits = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            bits |= static_cast<U>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return std::bit_cast<T>(bits);
    }
    std::string_view take(std::size_t n, const char* what) {
        need(n, what);
        auto s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (in_.size() - pos_ < n) {
            throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
        }
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

void fnv1a(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
}

} // namespace

Checkpoint make_checkpoint(const Model& model, std::uint64_t config_digest,
                           std::optional<OptimizerSnapshot> optimizer) {
    Checkpoint ck;
    ck.config_digest = config_digest;
    const auto names = model.parameter_names();
    const auto params = model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
        ck.tensors.push_back({names[i], *params[i]});
    }
    ck.optimizer = std::move(optimizer);
    return ck;
}

std::string encode_checkpoint(const Checkpoint& ck) {
    Writer w;
    w.bytes(std::string_view(kMagic, 4));
    w.put<std::uint64_t>(ck.config_digest);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
        w.bytes(t.name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
        for (auto d : t.value.shape()) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        }
        for (double v : t.value.data()) {
            w.put<float>(static_cast<float>(v));
        }
    }
    w.put<std::uint8_t>(ck.optimizer ? 1 : 0);
    if (ck.optimizer) {
        const auto& opt = *ck.optimizer;
        if (opt.first_moment.size() != ck.tensors.size() ||
            opt.second_moment.size() != ck.tensors.size()) {
            throw CheckpointError("optimizer state does not match the tensor list");
        }
        w.put<std::uint64_t>(opt.step);
        for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
            for (const auto* m : {&opt.first_moment[i], &opt.second_moment[i]}) {
                if (m->shape() != ck.tensors[i].value.shape()) {
                    throw CheckpointError("optimizer moment shape mismatch for " +
                                          ck.tensors[i].name);
                }
                for (double v : m->data()) {
                    w.put<double>(v);
                }
            }
        }
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.take(4, "magic") != std::string_view(kMagic, 4)) {
        throw CheckpointError("bad checkpoint magic (expected CSD1)");
    }
    Checkpoint ck;
    ck.config_digest = r.get<std::uint64_t>("config digest");
    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto name_len = r.get<std::uint32_t>("name length");
        t.name = std::string(r.take(name_len, "name"));
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank == 0 || rank > 8) {
            throw CheckpointError("tensor " + t.name + " has invalid rank " + std::to_string(rank));
        }
        Shape shape;
        for (std::uint32_t a = 0; a < rank; ++a) {
            const auto d = r.get<std::uint32_t>("extent");
            if (d == 0) throw CheckpointError("tensor " + t.name + " has a zero extent");
            shape.push_back(d);
        }
        const std::size_t n = shape_numel(shape);
        // Bound the allocation by what the file can actually hold.
        if (n > bytes.size()) throw CheckpointError("truncated checkpoint in tensor " + t.name);
        std::vector<double> data(n);
        for (auto& v : data) {
            v = static_cast<double>(r.get<float>("payload"));
        }
        t.value = Tensor(std::move(shape), std::move(data));
        ck.tensors.push_back(std::move(t));
    }
    const auto has_opt = r.get<std::uint8_t>("optimizer flag");
    if (has_opt > 1) throw CheckpointError("bad optimizer flag");
    if (has_opt) {
        OptimizerSnapshot opt;
        opt.step = r.get<std::uint64_t>("optimizer step");
        for (const auto& t : ck.tensors) {
            for (auto* dst : {&opt.first_moment, &opt.second_moment}) {
                Tensor m(t.value.shape(), 0.0);
                for (auto& v : m.data()) v = r.get<double>("optimizer moment");
                dst->push_back(std::move(m));
            }
        }
        ck.optimizer = std::move(opt);
    }
    if (!r.done()) {
        throw CheckpointError("trailing bytes after checkpoint payload");
    }
    return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(checkpoint);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

ApplyResult apply_checkpoint(const Checkpoint& ck, Model& model,
                             std::optional<std::uint64_t> expected_digest) {
    const auto names = model.parameter_names();
    auto params = model.parameters();
    if (ck.tensors.size() != names.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(ck.tensors.size()) +
                              " tensors, model expects " + std::to_string(names.size()));
    }
    std::vector<const Tensor*> sources(names.size(), nullptr);
    for (std::size_t i = 0; i < names.size(); ++i) {
        for (const auto& t : ck.tensors) {
            if (t.name == names[i]) sources[i] = &t.value;
        }
        if (!sources[i]) throw CheckpointError("checkpoint lacks tensor " + names[i]);
        if (sources[i]->shape() != params[i]->shape()) {
            throw CheckpointError("shape mismatch for " + names[i] + ": checkpoint " +
                                  shape_to_string(sources[i]->shape()) + ", model " +
                                  shape_to_string(params[i]->shape()));
        }
    }
    ApplyResult result;
    if (expected_digest && *expected_digest != ck.config_digest) {
        result.digest_matched = false;
        result.warnings.push_back("config digest differs from checkpoint; shapes agree, loading anyway");
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        *params[i] = *sources[i];
    }
    return result;
}

Model model_from_checkpoint(const Checkpoint& ck) {
    ModelOptions options;
    bool have_head = false;
    options.discrepancy_kernel = false;
    for (const auto& t : ck.tensors) {
        if (t.name == "head.weight" && t.value.rank() == 2) {
            options.classes = t.value.dim(0);
            have_head = true;
        }
        if (t.name == "ssdp.kernel") options.discrepancy_kernel = true;
    }
    if (!have_head) throw CheckpointError("checkpoint lacks head.weight");
    Model model = Model::initialize(options, 0);
    apply_checkpoint(ck, model);
    return model;
}

std::uint64_t parameter_checksum(const Model& model) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    const auto names = model.parameter_names();
    const auto params = model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
        fnv1a(h, names[i].data(), names[i].size());
        for (auto d : params[i]->shape()) {
            const auto e = static_cast<std::uint32_t>(d);
            fnv1a(h, &e, sizeof e);
        }
        for (double v : params[i]->data()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            fnv1a(h, &bits, sizeof bits);
        }
    }
    return h;
}

} // namespace csdnet
