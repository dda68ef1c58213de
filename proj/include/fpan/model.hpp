#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpan/layers.hpp"
#include "fpan/tensor.hpp"

namespace fpan {

enum class Attention { none, gc, pnlb };

struct Ablation {
    bool feedforward_skips{true};
    bool feedback_skips{true};
    Attention attention{Attention::pnlb};
    bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
    int scale{2};                           // 2, 3 or 4
    int channels{64};                       // C
    int num_blocks{2};                      // G
    int stage_depth{4};                     // D, convolutions per stage
    std::vector<int> pyramid_scales{1, 2, 4};
    int reduction{16};                      // bottleneck ratio r
    Ablation ablation;

    void validate() const;

    // Scales the attention path actually runs at: empty for none, {1} for
    // the global-context variant, pyramid_scales for the pyramid variant.
    [[nodiscard]] std::vector<int> attention_scales() const;

    bool operator==(const ModelConfig&) const = default;
};

// Ablation presets P0..P4: P0 plain stack, P1 adds forward skip pairs,
// P2 adds the second (feedback) stage, P3 single-scale attention,
// P4 pyramid attention at {1,2,4}.
ModelConfig apply_ablation_preset(ModelConfig cfg, const std::string& preset);

// Two-stage convolution stack. Stage one chains
//   X1[i] = relu(W1[i] * concat[X1[i-1], X1[i-2]])
// from X1[-1] = input, X1[0] = relu(W0 * input); stage two re-updates
//   X2[i] = relu(W2[i] * concat[X2[i-1], X1[i]])
// from X2[0] = X1[D] and returns X2[D]. Without feedforward_skips stage-one
// layers see their predecessor duplicated to fill the 2C input; without
// feedback_skips stage two does not exist and X1[D] is returned.
template <typename T>
struct FeedbackStructure {
    ConvLayer<T> initial;              // C -> C, 3x3
    std::vector<ConvLayer<T>> stage1;  // D layers, 2C -> C, 3x3
    std::vector<ConvLayer<T>> stage2;  // D layers, 2C -> C, 3x3; empty when skipped
    bool feedforward_skips{true};
    bool feedback_skips{true};

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& f_prev) const;
};

// Global attention pooling: alpha = softmax over positions of key(x), output
// channel c = sum_j alpha_j * x[c,j]. key maps C -> 1 with a 1x1 kernel.
template <typename T>
Tensor<T> gc_context_pool(Tape<T>* tape, const Tensor<T>& x, const ConvLayer<T>& key);

// Pyramid non-local block: pools a global context vector at every configured
// scale (repeated 6x6/stride-2 downsampling), concatenates them and feeds the
// result through the bottleneck transform v2(relu(LN(v1(.)))), whose output
// is broadcast-added onto the input. v2 starts at zero, so the block is the
// identity map at initialization.
template <typename T>
struct PyramidNonLocal {
    std::vector<int> scales;
    std::vector<std::vector<ConvLayer<T>>> downsamplers;  // per scale, applied in order
    std::vector<ConvLayer<T>> keys;                       // per scale, 1x1 C -> 1
    ConvLayer<T> v1;                                      // 1x1 |S|*C -> C/r
    ConvLayer<T> v2;                                      // 1x1 C/r -> C, zero-init
    Tensor<T> ln_gamma, ln_beta;                          // [C/r,1,1,1]
    T ln_eps{static_cast<T>(1e-5)};

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const;

    // delta(context) without the residual; used by the forward pass and by
    // composition tests.
    Tensor<T> transform(Tape<T>* tape, const Tensor<T>& context) const;
};

// Position-pairwise self-attention with residual output
//   y_i = Wy * sum_j softmax_j(theta(x_i) . phi(x_j)) g(x_j) + x_i.
// Quadratic in H*W, so inputs are capped at kMaxPositions positions.
template <typename T>
struct NonLocalBlock {
    static constexpr int kMaxPositions = 4096;

    ConvLayer<T> theta, phi, g;  // 1x1 C -> C embeddings
    ConvLayer<T> wy;             // 1x1 C -> C, zero-init

    NonLocalBlock() = default;
    NonLocalBlock(ParameterStore<T>& store, const std::string& name, int channels,
                  std::mt19937& rng);

    // Row-stochastic similarity matrix [1,1,P,P] for sample n.
    Tensor<T> similarity(Tape<T>* tape, const Tensor<T>& x, int n) const;
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const;
};

// One feedback pyramid attention block: F + attention(feedback(F)), the
// attention part being the identity when disabled.
template <typename T>
struct Fpab {
    FeedbackStructure<T> feedback;
    std::optional<PyramidNonLocal<T>> attention;

    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& f_prev) const;
};

// Full network: shallow feature conv, a chain of blocks, hierarchical fusion
// of all block outputs (1x1 then 3x3) under a global skip from the shallow
// features, sub-pixel upsampling and a final 3-channel reconstruction conv.
// forward() is read-only on parameters and safe to call concurrently on
// different inputs; construction and optimizer updates are exclusive.
template <typename T>
struct FpanModel {
    ModelConfig config;
    ParameterStore<T> params;

    ConvLayer<T> head;                         // 3 -> C, 3x3
    std::vector<Fpab<T>> blocks;
    ConvLayer<T> fuse_pointwise;               // G*C -> C, 1x1
    ConvLayer<T> fuse_spatial;                 // C -> C, 3x3
    std::vector<ConvLayer<T>> upsample_convs;  // C -> C*f^2 per stage
    std::vector<int> upsample_factors;         // {2},{3} or {2,2}
    ConvLayer<T> tail;                         // C -> 3, 3x3

    FpanModel(ModelConfig cfg, std::uint64_t seed);

    // Input [N,3,h,w] in [0,1]; output [N,3,scale*h,scale*w], unclamped.
    Tensor<T> forward(Tape<T>* tape, const Tensor<T>& lr) const;
};

using FpanModelF = FpanModel<float>;
using FpanModelD = FpanModel<double>;

}  // namespace fpan
