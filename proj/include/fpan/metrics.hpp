#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fpan/imaging.hpp"
#include "fpan/model.hpp"

namespace fpan {

// --- Image quality ----------------------------------------------------------
// Protocol: both images are converted to the BT.601 luminance plane, a border
// of `shave` pixels is removed on all sides, and the metric runs on the
// remaining plane. For super-resolution evaluation shave equals the scale.

// 10*log10(255^2 / MSE); identical planes return +infinity.
double psnr_plane(const Plane& a, const Plane& b, int shave);
double psnr_y(const ImageU8& sr, const ImageU8& hr, int scale);

// Single-scale SSIM: 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03,
// L=255, averaged over valid window positions.
double ssim_plane(const Plane& a, const Plane& b, int shave);
double ssim_y(const ImageU8& sr, const ImageU8& hr, int scale);

struct EvalRow {
    std::string name;
    double psnr{0.0};
    double ssim{0.0};
};

struct EvalReport {
    int scale{0};
    std::string degradation;
    std::vector<EvalRow> rows;

    [[nodiscard]] EvalRow average() const;
    [[nodiscard]] std::string to_csv() const;  // name,psnr,ssim rows + average
};

// Degrade -> super-resolve -> score every PNG in hr_dir (lexicographic
// order). Each HR image is center-cropped to a multiple of spec.scale; the
// per-image degradation seed is seed xor the image index.
EvalReport evaluate_directory(const SrFunction& sr, const std::string& hr_dir,
                              const DegradationSpec& spec, std::uint64_t seed);

// --- Cost accounting ----------------------------------------------------------
// FLOP conventions, applied per layer at its actual feature-map size:
//   convolution  2 * k * k * Cin * Cout * Hout * Wout   (multiply-add = 2 ops)
//   attention pooling per scale: 5 * P for the softmax plus 2 * C * P for the
//     weighted sum, P = positions of the pooled map
//   layer norm   8 * C on its bottleneck vector
// Elementwise additions/activations are excluded; convolutions dominate.

struct LayerCost {
    std::string name;
    std::size_t params{0};
    std::size_t flops{0};
};

struct CostReport {
    std::vector<LayerCost> layers;

    [[nodiscard]] std::size_t total_params() const;
    [[nodiscard]] std::size_t total_flops() const;
    [[nodiscard]] std::string to_csv() const;  // layer,params,flops rows + total
};

// Exact per-tensor element counts over the model's parameter store.
template <typename T>
CostReport count_params(const FpanModel<T>& model);

// Analytic walk of the architecture for an LR input of lr_h x lr_w. Parameter
// totals are size-independent and match count_params on a constructed model.
CostReport count_flops(const ModelConfig& cfg, int lr_h, int lr_w);

// --- Reference configuration ---------------------------------------------------

// Parameter budget of the full-size configuration; num_blocks is the free
// variable and is resolved as the smallest G whose total reaches the budget.
inline constexpr std::size_t kReferenceParamTarget = 11'700'000;

int resolve_reference_blocks();
ModelConfig reference_config();  // scale 4, 64 channels, depth 4, pyramid {1,2,4}

}  // namespace fpan
