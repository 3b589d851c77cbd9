#include "csdnet/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace csdnet {

namespace {

unsigned char to_byte(double v) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

class HeaderReader {
public:
    explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            const char c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
            value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
            if (value > (1u << 24)) {
                throw FormatError(std::string("PPM ") + what + " is too large");
            }
            ++pos_;
        }
        if (pos_ == start) {
            throw FormatError(std::string("PPM header: expected ") + what);
        }
        return value;
    }

    std::size_t& pos() { return pos_; }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

} // namespace

void quantize_to_bytes(Tensor& image) noexcept {
    for (auto& v : image.data()) {
        v = static_cast<double>(to_byte(v)) / 255.0;
    }
}

std::string encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw std::invalid_argument("write_ppm: expected 3 x H x W image, got " +
                                    shape_to_string(image.shape()));
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + 3 * h * w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                out.push_back(static_cast<char>(to_byte(image.at(c, y, x))));
            }
        }
    }
    return out;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
    const std::string bytes = encode_ppm(image);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

Tensor decode_ppm(std::string_view bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') {
        throw FormatError("not a PPM file (missing P6 magic)");
    }
    if (bytes[1] != '6') {
        throw FormatError(std::string("unsupported PPM variant P") + bytes[1] +
                          "; only binary P6 is accepted");
    }
    HeaderReader reader(bytes);
    reader.pos() = 2;
    const std::size_t w = reader.number("width");
    const std::size_t h = reader.number("height");
    const std::size_t maxval = reader.number("maxval");
    if (w == 0 || h == 0) {
        throw FormatError("PPM extents must be positive");
    }
    if (maxval == 0 || maxval > 255) {
        throw FormatError("PPM maxval must be in 1..255, got " + std::to_string(maxval));
    }
    std::size_t& pos = reader.pos();
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw FormatError("PPM header must end with a single whitespace byte");
    }
    ++pos;
    const std::size_t need = 3 * w * h;
    if (bytes.size() - pos < need) {
        throw FormatError("truncated PPM payload: expected " + std::to_string(need) +
                          " bytes, found " + std::to_string(bytes.size() - pos));
    }
    Tensor image({3, h, w}, 0.0);
    const auto denom = static_cast<double>(maxval);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const auto byte = static_cast<unsigned char>(bytes[pos++]);
                image.at(c, y, x) = static_cast<double>(std::min<std::size_t>(byte, maxval)) / denom;
            }
        }
    }
    return image;
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open " + path.string());
    }
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_ppm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

} // namespace csdnet
