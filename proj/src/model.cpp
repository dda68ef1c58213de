#include "fpan/model.hpp"

#include <algorithm>
#include <array>

namespace fpan {

void ModelConfig::validate() const {
    if (scale != 2 && scale != 3 && scale != 4) {
        throw ConfigError("ModelConfig: unsupported scale " + std::to_string(scale));
    }
    if (channels < 1) throw ConfigError("ModelConfig: channels must be >= 1");
    if (num_blocks < 1) throw ConfigError("ModelConfig: num_blocks must be >= 1");
    if (stage_depth < 1) throw ConfigError("ModelConfig: stage_depth must be >= 1");
    if (reduction < 1) throw ConfigError("ModelConfig: reduction must be >= 1");
    if (channels % reduction != 0) {
        throw ConfigError("ModelConfig: channels " + std::to_string(channels) +
                          " not divisible by reduction " + std::to_string(reduction));
    }
    if (ablation.attention == Attention::pnlb && pyramid_scales.empty()) {
        throw ConfigError("ModelConfig: pyramid_scales empty with pyramid attention");
    }
    int prev = 0;
    for (int s : pyramid_scales) {
        if (s != 1 && s != 2 && s != 4) {
            throw ConfigError("ModelConfig: pyramid scale " + std::to_string(s) +
                              " not in {1,2,4}");
        }
        if (s <= prev) {
            throw ConfigError("ModelConfig: pyramid_scales must be strictly increasing");
        }
        prev = s;
    }
}

std::vector<int> ModelConfig::attention_scales() const {
    switch (ablation.attention) {
        case Attention::none: return {};
        case Attention::gc: return {1};
        case Attention::pnlb: return pyramid_scales;
    }
    return {};
}

ModelConfig apply_ablation_preset(ModelConfig cfg, const std::string& preset) {
    if (preset == "P0") {
        cfg.ablation = {false, false, Attention::none};
    } else if (preset == "P1") {
        cfg.ablation = {true, false, Attention::none};
    } else if (preset == "P2") {
        cfg.ablation = {true, true, Attention::none};
    } else if (preset == "P3") {
        cfg.ablation = {true, true, Attention::gc};
    } else if (preset == "P4") {
        cfg.ablation = {true, true, Attention::pnlb};
        cfg.pyramid_scales = {1, 2, 4};
    } else {
        throw ConfigError("unknown ablation preset '" + preset + "'");
    }
    return cfg;
}

template <typename T>
Tensor<T> FeedbackStructure<T>::forward(Tape<T>* tape, const Tensor<T>& f_prev) const {
    const int expected_c = initial.in_channels();
    if (f_prev.shape().c != expected_c) {
        throw ShapeError("FeedbackStructure: expected " + std::to_string(expected_c) +
                         " channels, got " + f_prev.shape().str());
    }

    Tensor<T> x0 = relu(tape, initial.forward(tape, f_prev));

    std::vector<Tensor<T>> s1_out;
    s1_out.reserve(stage1.size());
    Tensor<T> prev1 = x0;      // X1[i-1]
    Tensor<T> prev2 = f_prev;  // X1[i-2]
    for (const auto& layer : stage1) {
        const std::array<Tensor<T>, 2> pair =
            feedforward_skips ? std::array<Tensor<T>, 2>{prev1, prev2}
                              : std::array<Tensor<T>, 2>{prev1, prev1};
        Tensor<T> cat = concat_channels(tape, std::span<const Tensor<T>>(pair));
        Tensor<T> xi = relu(tape, layer.forward(tape, cat));
        s1_out.push_back(xi);
        prev2 = prev1;
        prev1 = xi;
    }

    if (!feedback_skips) return prev1;  // X1[D]

    Tensor<T> cur = prev1;  // X2[0] = X1[D]
    for (std::size_t i = 0; i < stage2.size(); ++i) {
        const std::array<Tensor<T>, 2> pair{cur, s1_out[i]};
        Tensor<T> cat = concat_channels(tape, std::span<const Tensor<T>>(pair));
        cur = relu(tape, stage2[i].forward(tape, cat));
    }
    return cur;
}

template <typename T>
Tensor<T> gc_context_pool(Tape<T>* tape, const Tensor<T>& x, const ConvLayer<T>& key) {
    if (key.out_channels() != 1 || key.in_channels() != x.shape().c) {
        throw ShapeError("gc_context_pool: key must map " +
                         std::to_string(x.shape().c) + " channels to 1");
    }
    Tensor<T> alpha = softmax_positions(tape, key.forward(tape, x));
    return attention_pool(tape, x, alpha);
}

template <typename T>
Tensor<T> PyramidNonLocal<T>::transform(Tape<T>* tape, const Tensor<T>& context) const {
    Tensor<T> t = v1.forward(tape, context);
    t = layer_norm(tape, t, ln_gamma, ln_beta, ln_eps);
    t = relu(tape, t);
    return v2.forward(tape, t);
}

template <typename T>
Tensor<T> PyramidNonLocal<T>::forward(Tape<T>* tape, const Tensor<T>& x) const {
    std::vector<Tensor<T>> pooled;
    pooled.reserve(scales.size());
    for (std::size_t si = 0; si < scales.size(); ++si) {
        Tensor<T> xi = x;
        for (const auto& down : downsamplers[si]) {
            if (xi.shape().h < 2 || xi.shape().w < 2) {
                throw ConfigError("PyramidNonLocal: input " + x.shape().str() +
                                  " too small for pyramid scale " +
                                  std::to_string(scales[si]));
            }
            xi = down.forward(tape, xi);
        }
        pooled.push_back(gc_context_pool(tape, xi, keys[si]));
    }
    Tensor<T> context = concat_channels(tape, std::span<const Tensor<T>>(pooled));
    Tensor<T> delta = transform(tape, context);
    return broadcast_add(tape, x, delta);
}

template <typename T>
NonLocalBlock<T>::NonLocalBlock(ParameterStore<T>& store, const std::string& name,
                                int channels, std::mt19937& rng)
    : theta(store, name + ".theta", channels, channels, 1, 1, rng),
      phi(store, name + ".phi", channels, channels, 1, 1, rng),
      g(store, name + ".g", channels, channels, 1, 1, rng),
      wy(store, name + ".wy", channels, channels, 1, 1, rng, /*zero_init=*/true) {}

template <typename T>
Tensor<T> NonLocalBlock<T>::similarity(Tape<T>* tape, const Tensor<T>& x, int n) const {
    const Shape4 xs = x.shape();
    const int P = xs.h * xs.w;
    if (P > kMaxPositions) {
        throw UsageError("NonLocalBlock: " + std::to_string(P) +
                         " positions exceed the cap of " + std::to_string(kMaxPositions));
    }
    Tensor<T> th = theta.forward(tape, slice_sample(tape, x, n));
    Tensor<T> ph = phi.forward(tape, slice_sample(tape, x, n));
    Tensor<T> tm = reshape(tape, th, Shape4{1, 1, xs.c, P});
    Tensor<T> pm = reshape(tape, ph, Shape4{1, 1, xs.c, P});
    Tensor<T> logits = matmul(tape, transpose2d(tape, tm), pm);  // [1,1,P,P]
    // Rows become softmax samples: [1,1,P,P] and [P,1,1,P] share layout.
    Tensor<T> rows = reshape(tape, logits, Shape4{P, 1, 1, P});
    Tensor<T> soft = softmax_positions(tape, rows);
    return reshape(tape, soft, Shape4{1, 1, P, P});
}

template <typename T>
Tensor<T> NonLocalBlock<T>::forward(Tape<T>* tape, const Tensor<T>& x) const {
    const Shape4 xs = x.shape();
    const int P = xs.h * xs.w;
    if (P > kMaxPositions) {
        throw UsageError("NonLocalBlock: " + std::to_string(P) +
                         " positions exceed the cap of " + std::to_string(kMaxPositions));
    }
    std::vector<Tensor<T>> samples;
    samples.reserve(xs.n);
    for (int n = 0; n < xs.n; ++n) {
        Tensor<T> s = similarity(tape, x, n);
        Tensor<T> gm = reshape(tape, g.forward(tape, slice_sample(tape, x, n)),
                               Shape4{1, 1, xs.c, P});
        // y[:,i] = sum_j s[i,j] g[:,j]  ==  g . s^T
        Tensor<T> ym = matmul(tape, gm, transpose2d(tape, s));
        samples.push_back(reshape(tape, ym, Shape4{1, xs.c, xs.h, xs.w}));
    }
    Tensor<T> y = xs.n == 1 ? samples[0]
                            : concat_batch(tape, std::span<const Tensor<T>>(samples));
    return add(tape, wy.forward(tape, y), x);
}

template <typename T>
Tensor<T> Fpab<T>::forward(Tape<T>* tape, const Tensor<T>& f_prev) const {
    Tensor<T> f = feedback.forward(tape, f_prev);
    if (attention) f = attention->forward(tape, f);
    return add(tape, f_prev, f);
}

namespace {

// Number of 6x6/stride-2 applications reaching pyramid scale 1, 2 or 4.
int downsample_count(int scale) { return scale == 1 ? 0 : (scale == 2 ? 1 : 2); }

template <typename T>
PyramidNonLocal<T> make_pnlb(ParameterStore<T>& store, const std::string& prefix,
                             const ModelConfig& cfg, std::mt19937& rng) {
    PyramidNonLocal<T> pn;
    pn.scales = cfg.attention_scales();
    const int c = cfg.channels;
    const int bottleneck = c / cfg.reduction;
    for (int s : pn.scales) {
        std::vector<ConvLayer<T>> downs;
        for (int j = 0; j < downsample_count(s); ++j) {
            downs.emplace_back(store,
                               prefix + ".down" + std::to_string(s) + "." +
                                   std::to_string(j + 1),
                               c, c, 6, 2, rng);
        }
        pn.downsamplers.push_back(std::move(downs));
        pn.keys.emplace_back(store, prefix + ".key" + std::to_string(s), 1, c, 1, 1, rng);
    }
    const int context_c = static_cast<int>(pn.scales.size()) * c;
    pn.v1 = ConvLayer<T>(store, prefix + ".v1", bottleneck, context_c, 1, 1, rng);
    pn.v2 = ConvLayer<T>(store, prefix + ".v2", c, bottleneck, 1, 1, rng,
                         /*zero_init=*/true);
    pn.ln_gamma = store.add(prefix + ".ln.gamma",
                            Tensor<T>::full(Shape4{bottleneck, 1, 1, 1}, T(1)));
    pn.ln_beta = store.add(prefix + ".ln.beta", Tensor<T>(Shape4{bottleneck, 1, 1, 1}));
    return pn;
}

}  // namespace

template <typename T>
FpanModel<T>::FpanModel(ModelConfig cfg, std::uint64_t seed) : config(std::move(cfg)) {
    config.validate();
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    const int c = config.channels;

    head = ConvLayer<T>(params, "head", c, 3, 3, 1, rng);

    for (int g = 1; g <= config.num_blocks; ++g) {
        const std::string prefix = "block" + std::to_string(g);
        Fpab<T> block;
        block.feedback.feedforward_skips = config.ablation.feedforward_skips;
        block.feedback.feedback_skips = config.ablation.feedback_skips;
        block.feedback.initial = ConvLayer<T>(params, prefix + ".fc.init", c, c, 3, 1, rng);
        for (int i = 1; i <= config.stage_depth; ++i) {
            block.feedback.stage1.emplace_back(
                params, prefix + ".fc.s1." + std::to_string(i), c, 2 * c, 3, 1, rng);
        }
        if (config.ablation.feedback_skips) {
            for (int i = 1; i <= config.stage_depth; ++i) {
                block.feedback.stage2.emplace_back(
                    params, prefix + ".fc.s2." + std::to_string(i), c, 2 * c, 3, 1, rng);
            }
        }
        if (config.ablation.attention != Attention::none) {
            block.attention = make_pnlb(params, prefix + ".pn", config, rng);
        }
        blocks.push_back(std::move(block));
    }

    fuse_pointwise =
        ConvLayer<T>(params, "fuse.pointwise", c, config.num_blocks * c, 1, 1, rng);
    fuse_spatial = ConvLayer<T>(params, "fuse.spatial", c, c, 3, 1, rng);

    upsample_factors = config.scale == 4 ? std::vector<int>{2, 2}
                                         : std::vector<int>{config.scale};
    for (std::size_t i = 0; i < upsample_factors.size(); ++i) {
        const int f = upsample_factors[i];
        upsample_convs.emplace_back(params, "up" + std::to_string(i + 1), c * f * f, c,
                                    3, 1, rng);
    }
    tail = ConvLayer<T>(params, "tail", 3, c, 3, 1, rng);
}

template <typename T>
Tensor<T> FpanModel<T>::forward(Tape<T>* tape, const Tensor<T>& lr) const {
    if (lr.shape().c != 3) {
        throw ShapeError("FpanModel: expected 3-channel input, got " + lr.shape().str());
    }

    Tensor<T> f0 = head.forward(tape, lr);

    std::vector<Tensor<T>> block_outputs;
    block_outputs.reserve(blocks.size());
    Tensor<T> f = f0;
    for (const auto& block : blocks) {
        f = block.forward(tape, f);
        block_outputs.push_back(f);
    }

    // Hierarchical fusion consumes [F_G, ..., F_1].
    std::vector<Tensor<T>> reversed(block_outputs.rbegin(), block_outputs.rend());
    Tensor<T> fused = fuse_pointwise.forward(
        tape, concat_channels(tape, std::span<const Tensor<T>>(reversed)));
    fused = fuse_spatial.forward(tape, fused);
    Tensor<T> f_gf = add(tape, f0, fused);

    Tensor<T> up = f_gf;
    for (std::size_t i = 0; i < upsample_convs.size(); ++i) {
        up = pixel_shuffle(tape, upsample_convs[i].forward(tape, up), upsample_factors[i]);
    }
    return tail.forward(tape, up);
}

template struct FeedbackStructure<float>;
template struct FeedbackStructure<double>;
template Tensor<float> gc_context_pool<float>(Tape<float>*, const Tensor<float>&,
                                              const ConvLayer<float>&);
template Tensor<double> gc_context_pool<double>(Tape<double>*, const Tensor<double>&,
                                                const ConvLayer<double>&);
template struct PyramidNonLocal<float>;
template struct PyramidNonLocal<double>;
template struct NonLocalBlock<float>;
template struct NonLocalBlock<double>;
template struct Fpab<float>;
template struct Fpab<double>;
template struct FpanModel<float>;
template struct FpanModel<double>;

}  // namespace fpan
