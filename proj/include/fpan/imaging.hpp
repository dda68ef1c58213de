#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fpan/errors.hpp"
#include "fpan/tensor.hpp"

namespace fpan {

// 8-bit RGB image, interleaved row-major with top-left origin.
struct ImageU8 {
    int width{0};
    int height{0};
    std::vector<std::uint8_t> data;  // size = width*height*3

    ImageU8() = default;
    ImageU8(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int x, int y, int ch) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
    }
    std::uint8_t at(int x, int y, int ch) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + ch];
    }
    bool operator==(const ImageU8&) const = default;
};

// Single-channel double-precision plane used by resampling, color conversion
// and metrics.
struct Plane {
    int width{0};
    int height{0};
    std::vector<double> data;

    Plane() = default;
    Plane(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// --- PNG I/O ---------------------------------------------------------------
// 8-bit truecolor (or convertible: palette, grayscale) PNGs only. Save/load
// round trips are bitwise lossless.

ImageU8 load_png(const std::string& path);
void save_png(const ImageU8& image, const std::string& path);

// All .png files directly inside dir, sorted lexicographically by filename.
std::vector<std::string> list_png_files(const std::string& dir);

// --- Color conversion -------------------------------------------------------
// ITU-R BT.601 studio swing: Y in [16,235] for RGB in [0,255]. Planes stay
// unquantized floats; conversion back to RGB rounds to 8 bits.

struct YcbcrPlanes {
    Plane y, cb, cr;
};

YcbcrPlanes rgb_to_ycbcr(const ImageU8& image);
ImageU8 ycbcr_to_rgb(const YcbcrPlanes& planes);
Plane luminance(const ImageU8& image);

// --- Resampling and blur -----------------------------------------------------

// Separable Keys cubic (a = -0.5), edge-clamped. Downscaling widens the
// kernel by the inverse scale for antialiasing; weights are normalized so
// constants are preserved.
Plane bicubic_resize(const Plane& src, int out_w, int out_h);

// Output dims are round(dim * factor); factor > 0.
Plane bicubic_resize(const Plane& src, double factor);
ImageU8 bicubic_resize_rgb(const ImageU8& src, double factor);

// Separable normalized Gaussian, edge-clamped. kernel_size must be odd.
Plane gaussian_blur(const Plane& src, int kernel_size, double sigma);

// --- Degradation pipelines ----------------------------------------------------

enum class DegradationKind { BI, BD, DN };

struct DegradationSpec {
    DegradationKind kind{DegradationKind::BI};
    int scale{2};
    int blur_kernel{7};        // BD
    double blur_sigma{1.6};    // BD
    double noise_sigma{30.0};  // DN, on the 0..255 range
    std::uint64_t seed{0};

    void validate() const;
};

DegradationKind parse_degradation_kind(const std::string& name);
std::string degradation_kind_name(DegradationKind kind);

ImageU8 center_crop_to_multiple(const ImageU8& image, int multiple);

// Rectangular sub-image; the window must lie inside the source.
ImageU8 crop_image(const ImageU8& image, int x0, int y0, int w, int h);

// HR dims must already be divisible by the scale. BI: bicubic 1/s. BD: 7x7
// Gaussian blur then direct subsampling. DN: bicubic 1/s then seeded additive
// Gaussian noise, clamped.
ImageU8 degrade(const ImageU8& hr, const DegradationSpec& spec);

// --- Dihedral transforms and self-ensembling -----------------------------------
// id in 0..7: bit 2 selects a horizontal flip applied first, bits 0..1 count
// counterclockwise quarter turns applied after.

ImageU8 dihedral_transform(const ImageU8& image, int id);
ImageU8 dihedral_inverse(const ImageU8& image, int id);

using SrFunction = std::function<ImageU8(const ImageU8&)>;

// Averages the de-transformed results of sr applied to all 8 dihedral
// transforms of the input.
ImageU8 self_ensemble_sr(const SrFunction& sr, const ImageU8& lr);

// --- Tensor bridge --------------------------------------------------------------

TensorF image_to_tensor(const ImageU8& image);        // [1,3,H,W] scaled to [0,1]
ImageU8 tensor_to_image(const TensorF& tensor);       // clamp to [0,1], round to u8

}  // namespace fpan
