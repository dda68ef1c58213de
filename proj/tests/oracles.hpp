#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive (nested loops, direct formulas) and share no code with
// the library paths they check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "fpan/imaging.hpp"
#include "fpan/tensor.hpp"

namespace oracles {

// Direct six-loop cross-correlation with explicit zero padding.
template <typename T>
fpan::Tensor<T> conv2d_direct(const fpan::Tensor<T>& x, const fpan::Tensor<T>& w,
                              const std::vector<T>& bias, int stride, int pad) {
    const auto xs = x.shape();
    const auto ws = w.shape();
    const int ho = (xs.h + 2 * pad - ws.h) / stride + 1;
    const int wo = (xs.w + 2 * pad - ws.w) / stride + 1;
    fpan::Tensor<T> out(fpan::Shape4{xs.n, ws.n, ho, wo});
    for (int n = 0; n < xs.n; ++n)
        for (int co = 0; co < ws.n; ++co)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    double acc = bias[co];
                    for (int ci = 0; ci < xs.c; ++ci)
                        for (int u = 0; u < ws.h; ++u)
                            for (int v = 0; v < ws.w; ++v) {
                                const int ih = oh * stride - pad + u;
                                const int iw = ow * stride - pad + v;
                                if (ih < 0 || ih >= xs.h || iw < 0 || iw >= xs.w)
                                    continue;
                                acc += static_cast<double>(x.at(n, ci, ih, iw)) *
                                       w.at(co, ci, u, v);
                            }
                    out.at(n, co, oh, ow) = static_cast<T>(acc);
                }
    return out;
}

// Per-sample softmax over positions, direct exp / sum(exp).
template <typename T>
fpan::Tensor<T> softmax_positions_direct(const fpan::Tensor<T>& x) {
    const auto xs = x.shape();
    fpan::Tensor<T> out(xs);
    const std::size_t p = static_cast<std::size_t>(xs.h) * xs.w;
    for (int n = 0; n < xs.n; ++n) {
        double sum = 0.0;
        for (std::size_t j = 0; j < p; ++j)
            sum += std::exp(static_cast<double>(x.data()[p * n + j]));
        for (std::size_t j = 0; j < p; ++j)
            out.data()[p * n + j] =
                static_cast<T>(std::exp(static_cast<double>(x.data()[p * n + j])) / sum);
    }
    return out;
}

// Direct per-sample layer norm over channels of an [N,C,1,1] tensor.
template <typename T>
fpan::Tensor<T> layer_norm_direct(const fpan::Tensor<T>& x, const std::vector<T>& gamma,
                                  const std::vector<T>& beta, double eps) {
    const auto xs = x.shape();
    fpan::Tensor<T> out(xs);
    for (int n = 0; n < xs.n; ++n) {
        double mean = 0.0;
        for (int c = 0; c < xs.c; ++c) mean += x.at(n, c, 0, 0);
        mean /= xs.c;
        double var = 0.0;
        for (int c = 0; c < xs.c; ++c) {
            const double d = x.at(n, c, 0, 0) - mean;
            var += d * d;
        }
        var /= xs.c;
        for (int c = 0; c < xs.c; ++c) {
            out.at(n, c, 0, 0) = static_cast<T>(
                gamma[c] * (x.at(n, c, 0, 0) - mean) / std::sqrt(var + eps) + beta[c]);
        }
    }
    return out;
}

// Triple-loop matrix product of [1,1,M,K] and [1,1,K,P].
template <typename T>
fpan::Tensor<T> matmul_direct(const fpan::Tensor<T>& a, const fpan::Tensor<T>& b) {
    const int m = a.shape().h, k = a.shape().w, p = b.shape().w;
    fpan::Tensor<T> out(fpan::Shape4{1, 1, m, p});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l)
                acc += static_cast<double>(a.at(0, 0, i, l)) * b.at(0, 0, l, j);
            out.at(0, 0, i, j) = static_cast<T>(acc);
        }
    return out;
}

// Independent SSIM: per-window nested loops with explicitly built weights,
// sharing no filtering code with the library implementation.
inline double ssim_direct(const fpan::Plane& a, const fpan::Plane& b, int shave) {
    const int win = 11, r = 5;
    double k1[11];
    double ksum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k1[i + r] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
        ksum += k1[i + r];
    }
    for (double& v : k1) v /= ksum;
    const double c1 = 6.5025, c2 = 58.5225;

    const int w = a.width - 2 * shave, h = a.height - 2 * shave;
    double total = 0.0;
    int count = 0;
    for (int wy = 0; wy + win <= h; ++wy) {
        for (int wx = 0; wx + win <= w; ++wx) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    const double weight = k1[dy] * k1[dx];
                    const double xv = a.at(shave + wx + dx, shave + wy + dy);
                    const double yv = b.at(shave + wx + dx, shave + wy + dy);
                    mx += weight * xv;
                    my += weight * yv;
                    mxx += weight * xv * xv;
                    myy += weight * yv * yv;
                    mxy += weight * xv * yv;
                }
            const double vx = mxx - mx * mx;
            const double vy = myy - my * my;
            const double cov = mxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / count;
}

// Inverse of the sub-pixel rearrangement: [N,C,rH,rW] -> [N,C*r^2,H,W].
template <typename T>
fpan::Tensor<T> pixel_unshuffle_direct(const fpan::Tensor<T>& y, int r) {
    const auto ys = y.shape();
    fpan::Tensor<T> out(fpan::Shape4{ys.n, ys.c * r * r, ys.h / r, ys.w / r});
    for (int n = 0; n < ys.n; ++n)
        for (int c = 0; c < ys.c; ++c)
            for (int h = 0; h < ys.h; ++h)
                for (int w = 0; w < ys.w; ++w)
                    out.at(n, c * r * r + (h % r) * r + (w % r), h / r, w / r) =
                        y.at(n, c, h, w);
    return out;
}

}  // namespace oracles
