#include "csdnet/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace csdnet::ops {

namespace {

std::atomic<Fault> g_fault{Fault::none};

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_to_string(t.shape()));
    }
}

void accumulate(Tensor* dst, const Tensor& src) {
    if (!dst) {
        return;
    }
    auto d = dst->data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

void inject_fault(Fault fault) noexcept { g_fault.store(fault); }
Fault active_fault() noexcept { return g_fault.load(); }

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    accumulate(&out, b.value());
    return a.tape().record(std::move(out), "add", {a, b},
                           [](const Tensor& g, std::vector<Tensor*>& in) {
                               accumulate(in[0], g);
                               accumulate(in[1], g);
                           });
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= b.value()[i];
    }
    return a.tape().record(std::move(out), "sub", {a, b},
                           [](const Tensor& g, std::vector<Tensor*>& in) {
                               accumulate(in[0], g);
                               if (in[1]) {
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       (*in[1])[i] -= g[i];
                                   }
                               }
                           });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b.value()[i];
    }
    return a.tape().record(std::move(out), "mul", {a, b},
                           [a, b](const Tensor& g, std::vector<Tensor*>& in) {
                               const auto& av = a.value();
                               const auto& bv = b.value();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   if (in[0]) (*in[0])[i] += g[i] * bv[i];
                                   if (in[1]) (*in[1])[i] += g[i] * av[i];
                               }
                           });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v *= factor;
    }
    return a.tape().record(std::move(out), "scale", {a},
                           [factor](const Tensor& g, std::vector<Tensor*>& in) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   (*in[0])[i] += g[i] * factor;
                               }
                           });
}

Var exp(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v = std::exp(v);
    }
    Tensor saved = out;
    return a.tape().record(std::move(out), "exp", {a},
                           [saved = std::move(saved)](const Tensor& g, std::vector<Tensor*>& in) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   (*in[0])[i] += g[i] * saved[i];
                               }
                           });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return a.tape().record(std::move(out), "relu", {a},
                           [a](const Tensor& g, std::vector<Tensor*>& in) {
                               const auto& x = a.value();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   if (x[i] > 0.0) {
                                       (*in[0])[i] += g[i];
                                   }
                               }
                           });
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.data()) {
        v = sigmoid_scalar(v);
    }
    return out;
}

Var sigmoid(Var a) {
    Tensor out = sigmoid(a.value());
    Tensor saved = out;
    return a.tape().record(std::move(out), "sigmoid", {a},
                           [saved = std::move(saved)](const Tensor& g, std::vector<Tensor*>& in) {
                               const double sign =
                                   active_fault() == Fault::sigmoid_backward_sign ? -1.0 : 1.0;
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   const double s = saved[i];
                                   (*in[0])[i] += sign * g[i] * s * (1.0 - s);
                               }
                           });
}

Var sum(Var a) {
    return a.tape().record(Tensor::scalar(a.value().sum()), "sum", {a},
                           [](const Tensor& g, std::vector<Tensor*>& in) {
                               for (auto& v : in[0]->data()) {
                                   v += g[0];
                               }
                           });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return a.tape().record(Tensor::scalar(a.value().sum() / n), "mean", {a},
                           [n](const Tensor& g, std::vector<Tensor*>& in) {
                               for (auto& v : in[0]->data()) {
                                   v += g[0] / n;
                               }
                           });
}

Var average(std::span<const Var> terms) {
    if (terms.empty()) {
        throw std::invalid_argument("average: no terms");
    }
    Tensor out(terms[0].shape(), 0.0);
    for (const auto& t : terms) {
        require_same_shape(out, t.value(), "average");
        accumulate(&out, t.value());
    }
    const double n = static_cast<double>(terms.size());
    for (auto& v : out.data()) {
        v /= n;
    }
    return terms[0].tape().record(std::move(out), "average",
                                  std::vector<Var>(terms.begin(), terms.end()),
                                  [n](const Tensor& g, std::vector<Tensor*>& in) {
                                      for (auto* dst : in) {
                                          if (!dst) continue;
                                          for (std::size_t i = 0; i < g.size(); ++i) {
                                              (*dst)[i] += g[i] / n;
                                          }
                                      }
                                  });
}

Var conv2d_1x1(Var features, Var kernel) {
    const auto& x = features.value();
    const auto& k = kernel.value();
    require_rank(x, 3, "conv2d_1x1");
    require_rank(k, 1, "conv2d_1x1 kernel");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (k.dim(0) != c) {
        throw std::invalid_argument("conv2d_1x1: kernel length " + std::to_string(k.dim(0)) +
                                    " does not match " + std::to_string(c) + " channels");
    }
    const std::size_t plane = h * w;
    Tensor out({h, w}, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
        const double ki = k[i];
        const double* src = x.data().data() + i * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            out[p] += ki * src[p];
        }
    }
    return features.tape().record(
        std::move(out), "conv2d_1x1", {features, kernel},
        [features, kernel, c, plane](const Tensor& g, std::vector<Tensor*>& in) {
            const auto& x = features.value();
            const auto& k = kernel.value();
            for (std::size_t i = 0; i < c; ++i) {
                if (in[0]) {
                    double* dst = in[0]->data().data() + i * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        dst[p] += k[i] * g[p];
                    }
                }
                if (in[1]) {
                    const double* src = x.data().data() + i * plane;
                    double acc = 0.0;
                    for (std::size_t p = 0; p < plane; ++p) {
                        acc += src[p] * g[p];
                    }
                    (*in[1])[i] += acc;
                }
            }
        });
}

namespace {

struct ConvGeometry {
    std::size_t cin, cout, h, w, oh, ow, stride;
};

// Valid output-column range [lo, hi) for kernel column kx.
inline void column_range(const ConvGeometry& geo, std::size_t kx, std::size_t& lo, std::size_t& hi) {
    // ix = ox * stride + kx - 1 must lie in [0, w).
    lo = (kx == 0) ? 1 : 0;
    const std::size_t limit = geo.w + 1 - kx; // ox * stride < limit
    hi = std::min(geo.ow, (limit + geo.stride - 1) / geo.stride);
}

} // namespace

Var conv2d_3x3(Var input, Var weights, std::size_t stride) {
    if (stride != 1 && stride != 2) {
        throw std::invalid_argument("conv2d_3x3: stride must be 1 or 2, got " +
                                    std::to_string(stride));
    }
    const auto& x = input.value();
    const auto& wt = weights.value();
    require_rank(x, 3, "conv2d_3x3");
    require_rank(wt, 4, "conv2d_3x3 weights");
    if (wt.dim(1) != x.dim(0) || wt.dim(2) != 3 || wt.dim(3) != 3) {
        throw std::invalid_argument("conv2d_3x3: weights " + shape_to_string(wt.shape()) +
                                    " incompatible with input " + shape_to_string(x.shape()));
    }
    ConvGeometry geo{x.dim(0), wt.dim(0), x.dim(1), x.dim(2), 0, 0, stride};
    geo.oh = (geo.h - 1) / stride + 1;
    geo.ow = (geo.w - 1) / stride + 1;

    Tensor out({geo.cout, geo.oh, geo.ow}, 0.0);
    const double* xin = x.data().data();
    const double* wdata = wt.data().data();
    double* odata = out.data().data();
    for (std::size_t co = 0; co < geo.cout; ++co) {
        double* oplane = odata + co * geo.oh * geo.ow;
        for (std::size_t ci = 0; ci < geo.cin; ++ci) {
            const double* iplane = xin + ci * geo.h * geo.w;
            const double* wk = wdata + (co * geo.cin + ci) * 9;
            for (std::size_t ky = 0; ky < 3; ++ky) {
                for (std::size_t kx = 0; kx < 3; ++kx) {
                    const double wv = wk[ky * 3 + kx];
                    std::size_t lo, hi;
                    column_range(geo, kx, lo, hi);
                    for (std::size_t oy = 0; oy < geo.oh; ++oy) {
                        const std::size_t iy = oy * stride + ky;
                        if (iy == 0 || iy > geo.h) continue;
                        const double* irow = iplane + (iy - 1) * geo.w;
                        double* orow = oplane + oy * geo.ow;
                        for (std::size_t ox = lo; ox < hi; ++ox) {
                            orow[ox] += wv * irow[ox * stride + kx - 1];
                        }
                    }
                }
            }
        }
    }

    return input.tape().record(
        std::move(out), "conv2d_3x3", {input, weights},
        [input, weights, geo](const Tensor& g, std::vector<Tensor*>& in) {
            const double* xin = input.value().data().data();
            const double* wdata = weights.value().data().data();
            double* gx = in[0] ? in[0]->data().data() : nullptr;
            double* gw = in[1] ? in[1]->data().data() : nullptr;
            const double* gdata = g.data().data();
            const std::size_t s = geo.stride;
            for (std::size_t co = 0; co < geo.cout; ++co) {
                const double* gplane = gdata + co * geo.oh * geo.ow;
                for (std::size_t ci = 0; ci < geo.cin; ++ci) {
                    const std::size_t ioff = ci * geo.h * geo.w;
                    const std::size_t woff = (co * geo.cin + ci) * 9;
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const double wv = wdata[woff + ky * 3 + kx];
                            std::size_t lo, hi;
                            column_range(geo, kx, lo, hi);
                            double wacc = 0.0;
                            for (std::size_t oy = 0; oy < geo.oh; ++oy) {
                                const std::size_t iy = oy * s + ky;
                                if (iy == 0 || iy > geo.h) continue;
                                const std::size_t rowoff = ioff + (iy - 1) * geo.w + kx - 1;
                                const double* grow = gplane + oy * geo.ow;
                                if (gx) {
                                    for (std::size_t ox = lo; ox < hi; ++ox) {
                                        gx[rowoff + ox * s] += wv * grow[ox];
                                    }
                                }
                                if (gw) {
                                    for (std::size_t ox = lo; ox < hi; ++ox) {
                                        wacc += grow[ox] * xin[rowoff + ox * s];
                                    }
                                }
                            }
                            if (gw) {
                                gw[woff + ky * 3 + kx] += wacc;
                            }
                        }
                    }
                }
            }
        });
}

Var add_channel_bias(Var input, Var bias) {
    const auto& x = input.value();
    const auto& b = bias.value();
    require_rank(x, 3, "add_channel_bias");
    require_rank(b, 1, "add_channel_bias bias");
    if (b.dim(0) != x.dim(0)) {
        throw std::invalid_argument("add_channel_bias: bias length does not match channels");
    }
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    Tensor out = x;
    for (std::size_t i = 0; i < c; ++i) {
        double* p = out.data().data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) {
            p[j] += b[i];
        }
    }
    return input.tape().record(std::move(out), "add_channel_bias", {input, bias},
                               [c, plane](const Tensor& g, std::vector<Tensor*>& in) {
                                   accumulate(in[0], g);
                                   if (in[1]) {
                                       for (std::size_t i = 0; i < c; ++i) {
                                           double acc = 0.0;
                                           for (std::size_t j = 0; j < plane; ++j) {
                                               acc += g[i * plane + j];
                                           }
                                           (*in[1])[i] += acc;
                                       }
                                   }
                               });
}

Var channel_gate(Var input, Var gate) {
    const auto& x = input.value();
    const auto& m = gate.value();
    require_rank(x, 3, "channel_gate");
    require_rank(m, 2, "channel_gate gate");
    if (m.dim(0) != x.dim(1) || m.dim(1) != x.dim(2)) {
        throw std::invalid_argument("channel_gate: gate " + shape_to_string(m.shape()) +
                                    " does not match features " + shape_to_string(x.shape()));
    }
    const std::size_t c = x.dim(0), plane = m.size();
    Tensor out = x;
    for (std::size_t i = 0; i < c; ++i) {
        double* p = out.data().data() + i * plane;
        for (std::size_t j = 0; j < plane; ++j) {
            p[j] *= m[j];
        }
    }
    return input.tape().record(
        std::move(out), "channel_gate", {input, gate},
        [input, gate, c, plane](const Tensor& g, std::vector<Tensor*>& in) {
            const auto& x = input.value();
            const auto& m = gate.value();
            for (std::size_t i = 0; i < c; ++i) {
                for (std::size_t j = 0; j < plane; ++j) {
                    const double gi = g[i * plane + j];
                    if (in[0]) (*in[0])[i * plane + j] += gi * m[j];
                    if (in[1]) (*in[1])[j] += gi * x[i * plane + j];
                }
            }
        });
}

Var global_avg_pool(Var input) {
    const auto& x = input.value();
    require_rank(x, 3, "global_avg_pool");
    const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
    Tensor out({c}, 0.0);
    for (std::size_t i = 0; i < c; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < plane; ++j) {
            acc += x[i * plane + j];
        }
        out[i] = acc / static_cast<double>(plane);
    }
    return input.tape().record(std::move(out), "global_avg_pool", {input},
                               [c, plane](const Tensor& g, std::vector<Tensor*>& in) {
                                   const double inv = 1.0 / static_cast<double>(plane);
                                   for (std::size_t i = 0; i < c; ++i) {
                                       for (std::size_t j = 0; j < plane; ++j) {
                                           (*in[0])[i * plane + j] += g[i] * inv;
                                       }
                                   }
                               });
}

Var linear(Var weight, Var bias, Var input) {
    const auto& w = weight.value();
    const auto& b = bias.value();
    const auto& e = input.value();
    require_rank(w, 2, "linear weight");
    require_rank(b, 1, "linear bias");
    require_rank(e, 1, "linear input");
    const std::size_t k = w.dim(0), d = w.dim(1);
    if (e.dim(0) != d || b.dim(0) != k) {
        throw std::invalid_argument("linear: weight " + shape_to_string(w.shape()) + ", bias " +
                                    shape_to_string(b.shape()) + " and input " +
                                    shape_to_string(e.shape()) + " do not agree");
    }
    Tensor out = b;
    for (std::size_t r = 0; r < k; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            acc += w[r * d + j] * e[j];
        }
        out[r] += acc;
    }
    return weight.tape().record(
        std::move(out), "linear", {weight, bias, input},
        [weight, input, k, d](const Tensor& g, std::vector<Tensor*>& in) {
            const auto& w = weight.value();
            const auto& e = input.value();
            for (std::size_t r = 0; r < k; ++r) {
                if (in[0]) {
                    for (std::size_t j = 0; j < d; ++j) {
                        (*in[0])[r * d + j] += g[r] * e[j];
                    }
                }
                if (in[1]) (*in[1])[r] += g[r];
                if (in[2]) {
                    for (std::size_t j = 0; j < d; ++j) {
                        (*in[2])[j] += g[r] * w[r * d + j];
                    }
                }
            }
        });
}

Tensor log_softmax(const Tensor& logits) {
    require_rank(logits, 1, "log_softmax");
    const double mx = *std::max_element(logits.data().begin(), logits.data().end());
    double z = 0.0;
    for (double v : logits.data()) {
        z += std::exp(v - mx);
    }
    const double lz = std::log(z) + mx;
    Tensor out = logits;
    for (auto& v : out.data()) {
        v -= lz;
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    require_rank(logits, 1, "softmax");
    const double mx = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor out = logits;
    double z = 0.0;
    for (auto& v : out.data()) {
        v = std::exp(v - mx);
        z += v;
    }
    for (auto& v : out.data()) {
        v /= z;
    }
    return out;
}

Var softmax(Var logits) {
    Tensor out = softmax(logits.value());
    Tensor p = out;
    return logits.tape().record(std::move(out), "softmax", {logits},
                                [p = std::move(p)](const Tensor& g, std::vector<Tensor*>& in) {
                                    double dot = 0.0;
                                    for (std::size_t i = 0; i < g.size(); ++i) {
                                        dot += g[i] * p[i];
                                    }
                                    for (std::size_t i = 0; i < g.size(); ++i) {
                                        (*in[0])[i] += p[i] * (g[i] - dot);
                                    }
                                });
}

Var log_softmax(Var logits) {
    Tensor out = log_softmax(logits.value());
    Tensor p = softmax(logits.value());
    return logits.tape().record(std::move(out), "log_softmax", {logits},
                                [p = std::move(p)](const Tensor& g, std::vector<Tensor*>& in) {
                                    const double total = g.sum();
                                    for (std::size_t i = 0; i < g.size(); ++i) {
                                        (*in[0])[i] += g[i] - p[i] * total;
                                    }
                                });
}

Var l2_normalize(Var v) {
    const auto& x = v.value();
    require_rank(x, 1, "l2_normalize");
    double sq = 0.0;
    for (double a : x.data()) {
        sq += a * a;
    }
    const double norm = std::sqrt(sq);
    if (norm <= kNormEpsilon) {
        ++v.tape().diagnostics().clamped_norms;
    }
    const double denom = norm + kNormEpsilon;
    Tensor out = x;
    for (auto& a : out.data()) {
        a /= denom;
    }
    Tensor y = out;
    return v.tape().record(
        std::move(out), "l2_normalize", {v},
        [y = std::move(y), norm, denom](const Tensor& g, std::vector<Tensor*>& in) {
            // y = x / (|x| + eps)  =>  dx = g / denom - y (g . y) / |x|
            double gy = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                gy += g[i] * y[i];
            }
            const double coupling = norm > 0.0 ? gy / norm : 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*in[0])[i] += g[i] / denom - coupling * y[i];
            }
        });
}

Var stack(std::span<const Var> rows) {
    if (rows.empty()) {
        throw std::invalid_argument("stack: no rows");
    }
    const std::size_t d = rows[0].value().size();
    Tensor out({rows.size(), d}, 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& v = rows[r].value();
        if (v.rank() != 1 || v.size() != d) {
            throw std::invalid_argument("stack: row " + std::to_string(r) + " has shape " +
                                        shape_to_string(v.shape()));
        }
        std::copy(v.data().begin(), v.data().end(), out.data().begin() + r * d);
    }
    return rows[0].tape().record(std::move(out), "stack",
                                 std::vector<Var>(rows.begin(), rows.end()),
                                 [d](const Tensor& g, std::vector<Tensor*>& in) {
                                     for (std::size_t r = 0; r < in.size(); ++r) {
                                         if (!in[r]) continue;
                                         for (std::size_t j = 0; j < d; ++j) {
                                             (*in[r])[j] += g[r * d + j];
                                         }
                                     }
                                 });
}

Tensor bilinear_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
    if (out_h == 0 || out_w == 0) {
        throw std::invalid_argument("bilinear_resize: target extents must be positive");
    }
    if (map.rank() != 2 && map.rank() != 3) {
        throw std::invalid_argument("bilinear_resize: expected H x W or C x H x W, got " +
                                    shape_to_string(map.shape()));
    }
    const bool planar = map.rank() == 2;
    const std::size_t c = planar ? 1 : map.dim(0);
    const std::size_t in_h = map.dim(planar ? 0 : 1);
    const std::size_t in_w = map.dim(planar ? 1 : 2);

    struct Tap {
        std::size_t i0, i1;
        double frac;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double ratio = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(src));
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, src - static_cast<double>(i0)};
        }
        return t;
    };
    const auto ty = taps(in_h, out_h);
    const auto tx = taps(in_w, out_w);

    Tensor out(planar ? Shape{out_h, out_w} : Shape{c, out_h, out_w}, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = map.data().data() + ch * in_h * in_w;
        double* dst = out.data().data() + ch * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y) {
            const double* r0 = src + ty[y].i0 * in_w;
            const double* r1 = src + ty[y].i1 * in_w;
            for (std::size_t x = 0; x < out_w; ++x) {
                const auto& t = tx[x];
                // Difference form keeps constant regions exactly constant.
                const double top = r0[t.i0] + t.frac * (r0[t.i1] - r0[t.i0]);
                const double bot = r1[t.i0] + t.frac * (r1[t.i1] - r1[t.i0]);
                dst[y * out_w + x] = top + ty[y].frac * (bot - top);
            }
        }
    }
    return out;
}

} // namespace csdnet::ops
