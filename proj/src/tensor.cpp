#include "fpan/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace fpan {

std::string Shape4::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + "]";
}

namespace {

// Integer division rounding toward -inf / +inf for possibly negative a, s > 0.
inline int floor_div(int a, int s) { return a >= 0 ? a / s : -((-a + s - 1) / s); }
inline int ceil_div(int a, int s) { return a > 0 ? (a + s - 1) / s : -(-a / s); }

// Output rows oh for which ih = oh*stride - pad + u lands inside [0, extent).
struct OutRange {
    int lo, hi;  // half-open
};
inline OutRange valid_out_range(int extent, int out_extent, int stride, int pad, int u) {
    int lo = std::max(0, ceil_div(pad - u, stride));
    int hi = std::min(out_extent, floor_div(extent - 1 + pad - u, stride) + 1);
    return {lo, std::max(lo, hi)};
}

template <typename T>
bool any_requires_grad(std::span<const Tensor<T>> xs) {
    for (const auto& x : xs)
        if (x.requires_grad()) return true;
    return false;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int pad) {
    const Shape4 xs = input.shape();
    const Shape4 ws = weight.shape();
    if (xs.c != ws.c) {
        throw ShapeError("conv2d: input channels " + std::to_string(xs.c) +
                         " != weight Cin " + std::to_string(ws.c));
    }
    if (bias.shape() != Shape4{ws.n, 1, 1, 1}) {
        throw ShapeError("conv2d: bias shape " + bias.shape().str() +
                         " does not match Cout " + std::to_string(ws.n));
    }
    if (stride < 1) throw UsageError("conv2d: stride must be >= 1");
    if (pad < 0) throw UsageError("conv2d: pad must be >= 0");
    if (ws.h > xs.h + 2 * pad || ws.w > xs.w + 2 * pad) {
        throw ShapeError("conv2d: kernel " + ws.str() + " exceeds padded input " +
                         xs.str() + " with pad " + std::to_string(pad));
    }

    const int N = xs.n, Cin = xs.c, H = xs.h, W = xs.w;
    const int Cout = ws.n, kh = ws.h, kw = ws.w;
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;

    Tensor<T> out(Shape4{N, Cout, Ho, Wo},
                  input.requires_grad() || weight.requires_grad() || bias.requires_grad());
    const T* xd = input.data().data();
    const T* wd = weight.data().data();
    const T* bd = bias.data().data();
    T* od = out.data().data();

    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            T* out_map = od + flat_index(out.shape(), n, co, 0, 0);
            std::fill(out_map, out_map + static_cast<std::size_t>(Ho) * Wo, bd[co]);
            for (int ci = 0; ci < Cin; ++ci) {
                const T* in_map = xd + flat_index(xs, n, ci, 0, 0);
                for (int u = 0; u < kh; ++u) {
                    const auto [oh_lo, oh_hi] = valid_out_range(H, Ho, stride, pad, u);
                    for (int v = 0; v < kw; ++v) {
                        const T wv = wd[flat_index(ws, co, ci, u, v)];
                        if (wv == T(0)) continue;
                        const auto [ow_lo, ow_hi] = valid_out_range(W, Wo, stride, pad, v);
                        for (int oh = oh_lo; oh < oh_hi; ++oh) {
                            const int ih = oh * stride - pad + u;
                            const T* in_row = in_map + static_cast<std::size_t>(ih) * W;
                            T* out_row = out_map + static_cast<std::size_t>(oh) * Wo;
                            for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                out_row[ow] += wv * in_row[ow * stride - pad + v];
                            }
                        }
                    }
                }
            }
        }
    }

    if (tape && out.requires_grad()) {
        Tensor<T> x = input, w = weight, b = bias;
        Tensor<T> o = out;
        tape->record(out, [x, w, b, o, stride, pad]() mutable {
            const Shape4 xs = x.shape(), ws = w.shape(), os = o.shape();
            const int N = xs.n, Cin = xs.c, H = xs.h, W = xs.w;
            const int Cout = ws.n, kh = ws.h, kw = ws.w;
            const int Ho = os.h, Wo = os.w;
            const T* go = o.grad().data();
            const bool need_x = x.requires_grad();
            const bool need_w = w.requires_grad();
            const bool need_b = b.requires_grad();
            if (need_x) x.ensure_grad();
            if (need_w) w.ensure_grad();
            if (need_b) b.ensure_grad();
            T* gx = need_x ? x.grad().data() : nullptr;
            T* gw = need_w ? w.grad().data() : nullptr;
            T* gb = need_b ? b.grad().data() : nullptr;
            const T* xd = x.data().data();
            const T* wd = w.data().data();

            for (int n = 0; n < N; ++n) {
                for (int co = 0; co < Cout; ++co) {
                    const T* go_map = go + flat_index(os, n, co, 0, 0);
                    if (need_b) {
                        T acc = T(0);
                        for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i)
                            acc += go_map[i];
                        gb[co] += acc;
                    }
                    for (int ci = 0; ci < Cin; ++ci) {
                        const T* in_map = xd + flat_index(xs, n, ci, 0, 0);
                        T* gx_map = need_x ? gx + flat_index(xs, n, ci, 0, 0) : nullptr;
                        for (int u = 0; u < kh; ++u) {
                            const auto [oh_lo, oh_hi] = valid_out_range(H, Ho, stride, pad, u);
                            for (int v = 0; v < kw; ++v) {
                                const auto [ow_lo, ow_hi] = valid_out_range(W, Wo, stride, pad, v);
                                const std::size_t widx = flat_index(ws, co, ci, u, v);
                                const T wv = wd[widx];
                                T wacc = T(0);
                                for (int oh = oh_lo; oh < oh_hi; ++oh) {
                                    const int ih = oh * stride - pad + u;
                                    const T* go_row = go_map + static_cast<std::size_t>(oh) * Wo;
                                    const T* in_row = in_map + static_cast<std::size_t>(ih) * W;
                                    T* gx_row = need_x ? gx_map + static_cast<std::size_t>(ih) * W : nullptr;
                                    for (int ow = ow_lo; ow < ow_hi; ++ow) {
                                        const int iw = ow * stride - pad + v;
                                        const T g = go_row[ow];
                                        if (need_w) wacc += g * in_row[iw];
                                        if (need_x) gx_row[iw] += g * wv;
                                    }
                                }
                                if (need_w) gw[widx] += wacc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(x.shape(), x.requires_grad());
    const auto& xd = x.data();
    auto& od = out.data();
    for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);

    if (tape && out.requires_grad()) {
        Tensor<T> in = x, o = out;
        tape->record(out, [in, o]() mutable {
            const auto& go = o.grad();
            const auto& xd = in.data();
            auto& gx = in.grad();
            for (std::size_t i = 0; i < xd.size(); ++i)
                if (xd[i] > T(0)) gx[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError("add: shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    }
    Tensor<T> out(a.shape(), a.requires_grad() || b.requires_grad());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + bd[i];

    if (tape && out.requires_grad()) {
        Tensor<T> ta = a, tb = b, o = out;
        tape->record(out, [ta, tb, o]() mutable {
            const auto& go = o.grad();
            if (ta.requires_grad()) {
                auto& ga = ta.grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError("mul: shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
    }
    Tensor<T> out(a.shape(), a.requires_grad() || b.requires_grad());
    const auto& ad = a.data();
    const auto& bd = b.data();
    auto& od = out.data();
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * bd[i];

    if (tape && out.requires_grad()) {
        Tensor<T> ta = a, tb = b, o = out;
        tape->record(out, [ta, tb, o]() mutable {
            const auto& go = o.grad();
            if (ta.requires_grad()) {
                auto& ga = ta.grad();
                const auto& bd = tb.data();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bd[i];
            }
            if (tb.requires_grad()) {
                auto& gb = tb.grad();
                const auto& ad = ta.data();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * ad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> broadcast_add(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& v) {
    const Shape4 xs = x.shape(), vs = v.shape();
    if (vs.n != xs.n || vs.c != xs.c || vs.h != 1 || vs.w != 1) {
        throw ShapeError("broadcast_add: v " + vs.str() + " incompatible with x " +
                         xs.str());
    }
    Tensor<T> out(xs, x.requires_grad() || v.requires_grad());
    const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
    const auto& xd = x.data();
    const auto& vd = v.data();
    auto& od = out.data();
    for (int n = 0; n < xs.n; ++n) {
        for (int c = 0; c < xs.c; ++c) {
            const T vv = vd[static_cast<std::size_t>(n) * xs.c + c];
            const std::size_t base = flat_index(xs, n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) od[base + i] = xd[base + i] + vv;
        }
    }

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, tv = v, o = out;
        tape->record(out, [tx, tv, o]() mutable {
            const Shape4 xs = tx.shape();
            const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
            const auto& go = o.grad();
            if (tx.requires_grad()) {
                auto& gx = tx.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (tv.requires_grad()) {
                auto& gv = tv.grad();
                for (int n = 0; n < xs.n; ++n) {
                    for (int c = 0; c < xs.c; ++c) {
                        const std::size_t base = flat_index(xs, n, c, 0, 0);
                        T acc = T(0);
                        for (std::size_t i = 0; i < plane; ++i) acc += go[base + i];
                        gv[static_cast<std::size_t>(n) * xs.c + c] += acc;
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, std::span<const Tensor<T>> xs) {
    if (xs.empty()) throw UsageError("concat_channels: no inputs");
    const Shape4 first = xs[0].shape();
    int total_c = 0;
    for (const auto& x : xs) {
        const Shape4 s = x.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w) {
            throw ShapeError("concat_channels: mismatched dims " + s.str() + " vs " +
                             first.str());
        }
        total_c += s.c;
    }
    const Shape4 os{first.n, total_c, first.h, first.w};
    Tensor<T> out(os, any_requires_grad(xs));
    const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
    auto& od = out.data();
    int c_off = 0;
    for (const auto& x : xs) {
        const auto& xd = x.data();
        const int xc = x.shape().c;
        for (int n = 0; n < first.n; ++n) {
            std::copy(xd.begin() + flat_index(x.shape(), n, 0, 0, 0),
                      xd.begin() + flat_index(x.shape(), n, 0, 0, 0) + plane * xc,
                      od.begin() + flat_index(os, n, c_off, 0, 0));
        }
        c_off += xc;
    }

    if (tape && out.requires_grad()) {
        std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
        Tensor<T> o = out;
        tape->record(out, [inputs, o]() mutable {
            const Shape4 os = o.shape();
            const std::size_t plane = static_cast<std::size_t>(os.h) * os.w;
            const auto& go = o.grad();
            int c_off = 0;
            for (auto& x : inputs) {
                const int xc = x.shape().c;
                if (x.requires_grad()) {
                    auto& gx = x.grad();
                    for (int n = 0; n < os.n; ++n) {
                        const std::size_t src = flat_index(os, n, c_off, 0, 0);
                        const std::size_t dst = flat_index(x.shape(), n, 0, 0, 0);
                        for (std::size_t i = 0; i < plane * xc; ++i)
                            gx[dst + i] += go[src + i];
                    }
                }
                c_off += xc;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_batch(Tape<T>* tape, std::span<const Tensor<T>> xs) {
    if (xs.empty()) throw UsageError("concat_batch: no inputs");
    const Shape4 first = xs[0].shape();
    int total_n = 0;
    for (const auto& x : xs) {
        const Shape4 s = x.shape();
        if (s.c != first.c || s.h != first.h || s.w != first.w) {
            throw ShapeError("concat_batch: mismatched dims " + s.str() + " vs " +
                             first.str());
        }
        total_n += s.n;
    }
    const Shape4 os{total_n, first.c, first.h, first.w};
    Tensor<T> out(os, any_requires_grad(xs));
    auto& od = out.data();
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x.data().begin(), x.data().end(), od.begin() + off);
        off += x.numel();
    }

    if (tape && out.requires_grad()) {
        std::vector<Tensor<T>> inputs(xs.begin(), xs.end());
        Tensor<T> o = out;
        tape->record(out, [inputs, o]() mutable {
            const auto& go = o.grad();
            std::size_t off = 0;
            for (auto& x : inputs) {
                if (x.requires_grad()) {
                    auto& gx = x.grad();
                    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go[off + i];
                }
                off += x.numel();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_sample(Tape<T>* tape, const Tensor<T>& x, int n) {
    const Shape4 xs = x.shape();
    if (n < 0 || n >= xs.n) {
        throw UsageError("slice_sample: index " + std::to_string(n) + " out of " +
                         std::to_string(xs.n));
    }
    const Shape4 os{1, xs.c, xs.h, xs.w};
    Tensor<T> out(os, x.requires_grad());
    const std::size_t sample = os.numel();
    std::copy(x.data().begin() + sample * n, x.data().begin() + sample * (n + 1),
              out.data().begin());

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, o = out;
        tape->record(out, [tx, o, n]() mutable {
            const auto& go = o.grad();
            auto& gx = tx.grad();
            const std::size_t sample = o.numel();
            for (std::size_t i = 0; i < sample; ++i) gx[sample * n + i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax_positions(Tape<T>* tape, const Tensor<T>& x) {
    const Shape4 xs = x.shape();
    if (xs.c != 1) {
        throw ShapeError("softmax_positions: expected single channel, got " + xs.str());
    }
    Tensor<T> out(xs, x.requires_grad());
    const std::size_t P = static_cast<std::size_t>(xs.h) * xs.w;
    const auto& xd = x.data();
    auto& od = out.data();
    for (int n = 0; n < xs.n; ++n) {
        const std::size_t base = P * n;
        T m = xd[base];
        for (std::size_t j = 1; j < P; ++j) m = std::max(m, xd[base + j]);
        T sum = T(0);
        for (std::size_t j = 0; j < P; ++j) {
            od[base + j] = std::exp(xd[base + j] - m);
            sum += od[base + j];
        }
        for (std::size_t j = 0; j < P; ++j) od[base + j] /= sum;
    }

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, o = out;
        tape->record(out, [tx, o]() mutable {
            const Shape4 xs = tx.shape();
            const std::size_t P = static_cast<std::size_t>(xs.h) * xs.w;
            const auto& go = o.grad();
            const auto& od = o.data();
            auto& gx = tx.grad();
            for (int n = 0; n < xs.n; ++n) {
                const std::size_t base = P * n;
                T dot = T(0);
                for (std::size_t j = 0; j < P; ++j) dot += go[base + j] * od[base + j];
                for (std::size_t j = 0; j < P; ++j)
                    gx[base + j] += od[base + j] * (go[base + j] - dot);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
    const Shape4 xs = x.shape();
    if (xs.h != 1 || xs.w != 1) {
        throw ShapeError("layer_norm: expected [N,C,1,1], got " + xs.str());
    }
    const Shape4 affine{xs.c, 1, 1, 1};
    if (!(gamma.shape() == affine) || !(beta.shape() == affine)) {
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(xs.c) +
                         ",1,1,1]");
    }
    if (!(eps > T(0))) throw UsageError("layer_norm: eps must be positive");

    const int C = xs.c;
    Tensor<T> out(xs, x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    auto& od = out.data();
    for (int n = 0; n < xs.n; ++n) {
        const std::size_t base = static_cast<std::size_t>(n) * C;
        T mean = T(0);
        for (int c = 0; c < C; ++c) mean += xd[base + c];
        mean /= T(C);
        T var = T(0);
        for (int c = 0; c < C; ++c) {
            const T d = xd[base + c] - mean;
            var += d * d;
        }
        var /= T(C);
        const T inv = T(1) / std::sqrt(var + eps);
        for (int c = 0; c < C; ++c)
            od[base + c] = gd[c] * (xd[base + c] - mean) * inv + bd[c];
    }

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, tg = gamma, tb = beta, o = out;
        tape->record(out, [tx, tg, tb, o, eps]() mutable {
            const Shape4 xs = tx.shape();
            const int C = xs.c;
            const auto& xd = tx.data();
            const auto& gd = tg.data();
            const auto& go = o.grad();
            for (int n = 0; n < xs.n; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * C;
                T mean = T(0);
                for (int c = 0; c < C; ++c) mean += xd[base + c];
                mean /= T(C);
                T var = T(0);
                for (int c = 0; c < C; ++c) {
                    const T d = xd[base + c] - mean;
                    var += d * d;
                }
                var /= T(C);
                const T inv = T(1) / std::sqrt(var + eps);

                // dxhat = go*gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                for (int c = 0; c < C; ++c) {
                    const T xhat = (xd[base + c] - mean) * inv;
                    const T dxhat = go[base + c] * gd[c];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
                if (tx.requires_grad()) {
                    auto& gx = tx.grad();
                    for (int c = 0; c < C; ++c) {
                        const T xhat = (xd[base + c] - mean) * inv;
                        const T dxhat = go[base + c] * gd[c];
                        gx[base + c] +=
                            inv * (dxhat - sum_dxhat / T(C) - xhat * sum_dxhat_xhat / T(C));
                    }
                }
                if (tg.requires_grad()) {
                    auto& gg = tg.grad();
                    for (int c = 0; c < C; ++c)
                        gg[c] += go[base + c] * (xd[base + c] - mean) * inv;
                }
                if (tb.requires_grad()) {
                    auto& gb = tb.grad();
                    for (int c = 0; c < C; ++c) gb[c] += go[base + c];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> pixel_shuffle(Tape<T>* tape, const Tensor<T>& x, int r) {
    const Shape4 xs = x.shape();
    if (r < 1) throw UsageError("pixel_shuffle: r must be >= 1");
    if (xs.c % (r * r) != 0) {
        throw ShapeError("pixel_shuffle: channels " + std::to_string(xs.c) +
                         " not divisible by r^2 = " + std::to_string(r * r));
    }
    const Shape4 os{xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
    Tensor<T> out(os, x.requires_grad());
    const auto& xd = x.data();
    auto& od = out.data();
    for (int n = 0; n < os.n; ++n) {
        for (int c = 0; c < os.c; ++c) {
            for (int h = 0; h < os.h; ++h) {
                for (int w = 0; w < os.w; ++w) {
                    const int ci = c * r * r + (h % r) * r + (w % r);
                    od[flat_index(os, n, c, h, w)] =
                        xd[flat_index(xs, n, ci, h / r, w / r)];
                }
            }
        }
    }

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, o = out;
        tape->record(out, [tx, o, r]() mutable {
            const Shape4 xs = tx.shape(), os = o.shape();
            const auto& go = o.grad();
            auto& gx = tx.grad();
            for (int n = 0; n < os.n; ++n)
                for (int c = 0; c < os.c; ++c)
                    for (int h = 0; h < os.h; ++h)
                        for (int w = 0; w < os.w; ++w) {
                            const int ci = c * r * r + (h % r) * r + (w % r);
                            gx[flat_index(xs, n, ci, h / r, w / r)] +=
                                go[flat_index(os, n, c, h, w)];
                        }
        });
    }
    return out;
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& a, const char* who) {
    const Shape4 s = a.shape();
    if (s.n != 1 || s.c != 1) {
        throw ShapeError(std::string(who) + ": expected [1,1,M,K] matrix, got " + s.str());
    }
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const int M = a.shape().h, K = a.shape().w;
    const int K2 = b.shape().h, P = b.shape().w;
    if (K != K2) {
        throw ShapeError("matmul: inner dims " + std::to_string(K) + " vs " +
                         std::to_string(K2));
    }
    Tensor<T> out(Shape4{1, 1, M, P}, a.requires_grad() || b.requires_grad());
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    for (int i = 0; i < M; ++i) {
        T* orow = od + static_cast<std::size_t>(i) * P;
        for (int k = 0; k < K; ++k) {
            const T av = ad[static_cast<std::size_t>(i) * K + k];
            if (av == T(0)) continue;
            const T* brow = bd + static_cast<std::size_t>(k) * P;
            for (int j = 0; j < P; ++j) orow[j] += av * brow[j];
        }
    }

    if (tape && out.requires_grad()) {
        Tensor<T> ta = a, tb = b, o = out;
        tape->record(out, [ta, tb, o]() mutable {
            const int M = ta.shape().h, K = ta.shape().w, P = tb.shape().w;
            const T* go = o.grad().data();
            if (ta.requires_grad()) {  // ga += go . b^T
                ta.ensure_grad();
                T* ga = ta.grad().data();
                const T* bd = tb.data().data();
                for (int i = 0; i < M; ++i)
                    for (int k = 0; k < K; ++k) {
                        T acc = T(0);
                        for (int j = 0; j < P; ++j)
                            acc += go[static_cast<std::size_t>(i) * P + j] *
                                   bd[static_cast<std::size_t>(k) * P + j];
                        ga[static_cast<std::size_t>(i) * K + k] += acc;
                    }
            }
            if (tb.requires_grad()) {  // gb += a^T . go
                tb.ensure_grad();
                T* gb = tb.grad().data();
                const T* ad = ta.data().data();
                for (int k = 0; k < K; ++k)
                    for (int j = 0; j < P; ++j) {
                        T acc = T(0);
                        for (int i = 0; i < M; ++i)
                            acc += ad[static_cast<std::size_t>(i) * K + k] *
                                   go[static_cast<std::size_t>(i) * P + j];
                        gb[static_cast<std::size_t>(k) * P + j] += acc;
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose2d(Tape<T>* tape, const Tensor<T>& a) {
    require_matrix(a, "transpose2d");
    const int M = a.shape().h, K = a.shape().w;
    Tensor<T> out(Shape4{1, 1, K, M}, a.requires_grad());
    const auto& ad = a.data();
    auto& od = out.data();
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k)
            od[static_cast<std::size_t>(k) * M + i] = ad[static_cast<std::size_t>(i) * K + k];

    if (tape && out.requires_grad()) {
        Tensor<T> ta = a, o = out;
        tape->record(out, [ta, o]() mutable {
            const int M = ta.shape().h, K = ta.shape().w;
            const auto& go = o.grad();
            auto& ga = ta.grad();
            for (int i = 0; i < M; ++i)
                for (int k = 0; k < K; ++k)
                    ga[static_cast<std::size_t>(i) * K + k] +=
                        go[static_cast<std::size_t>(k) * M + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape4 new_shape) {
    if (new_shape.numel() != x.numel()) {
        throw ShapeError("reshape: element count " + std::to_string(x.numel()) +
                         " cannot fill " + new_shape.str());
    }
    Tensor<T> out(new_shape, x.requires_grad());
    out.data() = x.data();

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, o = out;
        tape->record(out, [tx, o]() mutable {
            const auto& go = o.grad();
            auto& gx = tx.grad();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> attention_pool(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& alpha) {
    const Shape4 xs = x.shape(), as = alpha.shape();
    if (as.n != xs.n || as.c != 1 || as.h != xs.h || as.w != xs.w) {
        throw ShapeError("attention_pool: alpha " + as.str() + " incompatible with x " +
                         xs.str());
    }
    const std::size_t P = static_cast<std::size_t>(xs.h) * xs.w;
    Tensor<T> out(Shape4{xs.n, xs.c, 1, 1}, x.requires_grad() || alpha.requires_grad());
    const auto& xd = x.data();
    const auto& ad = alpha.data();
    auto& od = out.data();
    for (int n = 0; n < xs.n; ++n) {
        const T* amap = ad.data() + P * n;
        for (int c = 0; c < xs.c; ++c) {
            const T* xmap = xd.data() + flat_index(xs, n, c, 0, 0);
            T acc = T(0);
            for (std::size_t j = 0; j < P; ++j) acc += amap[j] * xmap[j];
            od[static_cast<std::size_t>(n) * xs.c + c] = acc;
        }
    }

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, ta = alpha, o = out;
        tape->record(out, [tx, ta, o]() mutable {
            const Shape4 xs = tx.shape();
            const std::size_t P = static_cast<std::size_t>(xs.h) * xs.w;
            const auto& go = o.grad();
            const auto& xd = tx.data();
            const auto& ad = ta.data();
            for (int n = 0; n < xs.n; ++n) {
                const T* amap = ad.data() + P * n;
                for (int c = 0; c < xs.c; ++c) {
                    const T g = go[static_cast<std::size_t>(n) * xs.c + c];
                    const std::size_t xbase = flat_index(xs, n, c, 0, 0);
                    if (tx.requires_grad()) {
                        auto& gx = tx.grad();
                        for (std::size_t j = 0; j < P; ++j) gx[xbase + j] += g * amap[j];
                    }
                    if (ta.requires_grad()) {
                        auto& ga = ta.grad();
                        for (std::size_t j = 0; j < P; ++j)
                            ga[P * n + j] += g * xd[xbase + j];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out(Shape4{1, 1, 1, 1}, x.requires_grad());
    T acc = T(0);
    for (const T v : x.data()) acc += v;
    out.data()[0] = acc;

    if (tape && out.requires_grad()) {
        Tensor<T> tx = x, o = out;
        tape->record(out, [tx, o]() mutable {
            const T g = o.grad()[0];
            auto& gx = tx.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

#define FPAN_INSTANTIATE_OPS(T)                                                        \
    template Tensor<T> conv2d<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,        \
                                 const Tensor<T>&, int, int);                          \
    template Tensor<T> relu<T>(Tape<T>*, const Tensor<T>&);                           \
    template Tensor<T> add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> mul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);          \
    template Tensor<T> broadcast_add<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> concat_channels<T>(Tape<T>*, std::span<const Tensor<T>>);      \
    template Tensor<T> concat_batch<T>(Tape<T>*, std::span<const Tensor<T>>);         \
    template Tensor<T> slice_sample<T>(Tape<T>*, const Tensor<T>&, int);              \
    template Tensor<T> softmax_positions<T>(Tape<T>*, const Tensor<T>&);              \
    template Tensor<T> layer_norm<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&,    \
                                     const Tensor<T>&, T);                             \
    template Tensor<T> pixel_shuffle<T>(Tape<T>*, const Tensor<T>&, int);             \
    template Tensor<T> matmul<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> transpose2d<T>(Tape<T>*, const Tensor<T>&);                    \
    template Tensor<T> reshape<T>(Tape<T>*, const Tensor<T>&, Shape4);                \
    template Tensor<T> attention_pool<T>(Tape<T>*, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> sum_all<T>(Tape<T>*, const Tensor<T>&);

FPAN_INSTANTIATE_OPS(float)
FPAN_INSTANTIATE_OPS(double)

#undef FPAN_INSTANTIATE_OPS

}  // namespace fpan
