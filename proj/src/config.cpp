#include "csdnet/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>

namespace csdnet {

namespace {

using nlohmann::json;

const std::set<std::string> kSections = {"data", "model", "ssdp", "ddl", "ssdt", "trainer", "io"};

class SectionReader {
public:
    SectionReader(const json& doc, std::string name) : name_(std::move(name)) {
        if (doc.contains(name_)) {
            section_ = &doc.at(name_);
            if (!section_->is_object()) {
                throw ConfigError(name_, "section must be a JSON object");
            }
        }
    }

    void number(const std::string& key, double& out,
                const std::function<bool(double)>& ok = nullptr, const char* rule = "") {
        const json* v = take(key);
        if (!v) return;
        if (!v->is_number()) throw ConfigError(path(key), "expected a number");
        const double x = v->get<double>();
        if (!std::isfinite(x) || (ok && !ok(x))) {
            throw ConfigError(path(key), std::string(rule) + " (got " + v->dump() + ")");
        }
        out = x;
    }

    template <typename Int>
    void integer(const std::string& key, Int& out, std::uint64_t min = 0,
                 std::uint64_t max = std::numeric_limits<std::uint64_t>::max()) {
        const json* v = take(key);
        if (!v) return;
        if (!v->is_number_integer()) throw ConfigError(path(key), "expected an integer");
        if (v->is_number_unsigned() || v->get<std::int64_t>() >= 0) {
            const auto x = v->get<std::uint64_t>();
            if (x >= min && x <= max) {
                out = static_cast<Int>(x);
                return;
            }
        }
        throw ConfigError(path(key), "must be an integer in [" + std::to_string(min) + ", " +
                                         std::to_string(max) + "] (got " + v->dump() + ")");
    }

    void boolean(const std::string& key, bool& out) {
        const json* v = take(key);
        if (!v) return;
        if (!v->is_boolean()) throw ConfigError(path(key), "expected true or false");
        out = v->get<bool>();
    }

    void string(const std::string& key, std::string& out) {
        const json* v = take(key);
        if (!v) return;
        if (!v->is_string()) throw ConfigError(path(key), "expected a string");
        out = v->get<std::string>();
    }

    template <typename Enum>
    void choice(const std::string& key, Enum& out,
                std::initializer_list<std::pair<const char*, Enum>> options) {
        std::string text;
        const json* v = take(key);
        if (!v) return;
        if (!v->is_string()) throw ConfigError(path(key), "expected a string");
        text = v->get<std::string>();
        std::string allowed;
        for (const auto& [name, value] : options) {
            if (text == name) {
                out = value;
                return;
            }
            allowed += allowed.empty() ? name : std::string(", ") + name;
        }
        throw ConfigError(path(key), "must be one of " + allowed + " (got \"" + text + "\")");
    }

    void finish() const {
        if (!section_) return;
        for (const auto& [key, _] : section_->items()) {
            if (!seen_.count(key)) throw ConfigError(path(key), "unknown key");
        }
    }

private:
    const json* take(const std::string& key) {
        seen_.insert(key);
        if (!section_ || !section_->contains(key)) return nullptr;
        return &section_->at(key);
    }
    std::string path(const std::string& key) const { return name_ + "." + key; }

    std::string name_;
    const json* section_ = nullptr;
    std::set<std::string> seen_;
};

auto at_least(double lo) {
    return [lo](double x) { return x >= lo; };
}

} // namespace

RunConfig parse_run_config(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("<root>", "config must be a JSON object");
    }
    for (const auto& [key, _] : doc.items()) {
        if (!kSections.count(key)) throw ConfigError(key, "unknown section");
    }
    RunConfig cfg;

    SectionReader data(doc, "data");
    auto& d = cfg.data;
    data.integer("classes", d.classes, 2, 100000);
    data.integer("images_per_class", d.images_per_class, 2, 100000);
    data.integer("test_per_class", d.test_per_class, 0, 100000);
    data.integer("image_size", d.image_size, 8, 4096);
    data.integer("patch_size", d.patch_size, 1, 4096);
    data.integer("jitter", d.jitter, 0, 4096);
    data.number("noise", d.noise, [](double x) { return x >= 0.0 && x <= 0.5; }, "must be in [0, 0.5]");
    data.integer("seed", d.seed);
    data.integer("min_images_per_class", d.min_images_per_class, 2, 100000);
    data.integer("max_images_per_class", d.max_images_per_class, 2, 100000);
    data.finish();
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("data", e.what());
    }

    SectionReader model(doc, "model");
    std::string backbone = "tiny";
    model.string("backbone", backbone);
    if (backbone != "tiny") throw ConfigError("model.backbone", "only \"tiny\" is available");
    model.finish();

    auto& t = cfg.trainer;
    SectionReader ssdp(doc, "ssdp");
    ssdp.boolean("enabled", t.ssdp_enabled);
    ssdp.boolean("square_mask", t.square_mask);
    ssdp.finish();

    SectionReader ddl(doc, "ddl");
    ddl.number("alpha", t.alpha, at_least(0.0), "must be >= 0");
    ddl.integer("queue_length", t.queue_length, 0, 1024);
    ddl.number("margin", t.margin);
    ddl.choice("negative_sampling", t.negative_sampling,
               {{"all", ddl::NegativeSampling::all}, {"random", ddl::NegativeSampling::random}});
    ddl.finish();

    SectionReader ssdt(doc, "ssdt");
    ssdt.number("beta", t.beta, at_least(0.0), "must be >= 0");
    ssdt.number("temperature", t.temperature, [](double x) { return x > 0.0; }, "must be > 0");
    ssdt.choice("teacher", t.teacher, {{"aug", ssdt::Teacher::aug}, {"raw", ssdt::Teacher::raw}});
    ssdt.boolean("detach_teacher", t.detach_teacher);
    ssdt.finish();

    SectionReader tr(doc, "trainer");
    tr.number("learning_rate", t.learning_rate, at_least(0.0), "must be >= 0");
    tr.integer("batch_size", t.batch_size, 2, 100000);
    tr.integer("epochs", t.epochs, 1, 1000000);
    tr.integer("seed", t.seed);
    tr.number("label_smoothing", t.label_smoothing,
              [](double x) { return x >= 0.0 && x < 1.0; }, "must be in [0, 1)");
    tr.number("adam_beta1", t.adam_beta1, [](double x) { return x >= 0.0 && x < 1.0; },
              "must be in [0, 1)");
    tr.number("adam_beta2", t.adam_beta2, [](double x) { return x >= 0.0 && x < 1.0; },
              "must be in [0, 1)");
    tr.number("adam_eps", t.adam_eps, [](double x) { return x > 0.0; }, "must be > 0");
    tr.number("weight_decay", t.weight_decay, at_least(0.0), "must be >= 0");
    tr.integer("eval_every", t.eval_every);
    tr.boolean("cls_on_aug", t.cls_on_aug);
    tr.finish();
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("trainer", e.what());
    }

    SectionReader io(doc, "io");
    io.string("data_dir", cfg.io.data_dir);
    io.string("metrics_file", cfg.io.metrics_file);
    io.string("checkpoint_file", cfg.io.checkpoint_file);
    io.finish();
    if (cfg.io.metrics_file.empty()) throw ConfigError("io.metrics_file", "must not be empty");
    if (cfg.io.checkpoint_file.empty()) throw ConfigError("io.checkpoint_file", "must not be empty");
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) {
        throw ConfigError("<file>", "cannot open " + path.string());
    }
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", path.string() + " is not valid JSON: " + e.what());
    }
    return parse_run_config(doc);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    const auto& d = c.data;
    j["data"] = {{"classes", d.classes},
                 {"images_per_class", d.images_per_class},
                 {"test_per_class", d.test_per_class},
                 {"image_size", d.image_size},
                 {"patch_size", d.patch_size},
                 {"jitter", d.jitter},
                 {"noise", d.noise},
                 {"seed", d.seed},
                 {"min_images_per_class", d.min_images_per_class},
                 {"max_images_per_class", d.max_images_per_class}};
    j["model"] = {{"backbone", "tiny"}};
    const auto& t = c.trainer;
    j["ssdp"] = {{"enabled", t.ssdp_enabled}, {"square_mask", t.square_mask}};
    j["ddl"] = {{"alpha", t.alpha},
                {"queue_length", t.queue_length},
                {"margin", t.margin},
                {"negative_sampling",
                 t.negative_sampling == ddl::NegativeSampling::all ? "all" : "random"}};
    j["ssdt"] = {{"beta", t.beta},
                 {"temperature", t.temperature},
                 {"teacher", t.teacher == ssdt::Teacher::aug ? "aug" : "raw"},
                 {"detach_teacher", t.detach_teacher}};
    j["trainer"] = {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
                    {"epochs", t.epochs},               {"seed", t.seed},
                    {"label_smoothing", t.label_smoothing}, {"adam_beta1", t.adam_beta1},
                    {"adam_beta2", t.adam_beta2},       {"adam_eps", t.adam_eps},
                    {"weight_decay", t.weight_decay},   {"eval_every", t.eval_every},
                    {"cls_on_aug", t.cls_on_aug}};
    j["io"] = {{"data_dir", c.io.data_dir},
               {"metrics_file", c.io.metrics_file},
               {"checkpoint_file", c.io.checkpoint_file}};
    return j;
}

std::uint64_t config_digest(const RunConfig& config) {
    const std::string text = to_json(config).dump();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace csdnet
