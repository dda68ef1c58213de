#include "fpan/imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

namespace fpan {

namespace {

std::uint8_t round_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

struct FileHandle {
    std::FILE* f{nullptr};
    explicit FileHandle(const std::string& path, const char* mode)
        : f(std::fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f) std::fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

}  // namespace

ImageU8 load_png(const std::string& path) {
    FileHandle file(path, "rb");
    if (!file.f) throw IoError("load_png: cannot open '" + path + "'");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("load_png: out of memory for '" + path + "'");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("load_png: out of memory for '" + path + "'");
    }

    // libpng reports errors via longjmp; keep non-trivial locals outside the
    // setjmp frame and rebuild the image only after a clean read.
    std::vector<std::uint8_t> raw;
    std::vector<png_bytep> rows;
    int width = 0, height = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png: malformed PNG '" + path + "'");
    }

    png_init_io(png, file.f);
    png_read_info(png, info);

    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);

    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("load_png: unsupported bit depth 16 in '" + path + "'");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    const std::size_t stride = png_get_rowbytes(png, info);
    raw.assign(stride * height, 0);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = raw.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (stride != static_cast<std::size_t>(width) * 3) {
        throw IoError("load_png: unexpected row stride in '" + path + "'");
    }
    ImageU8 image(width, height);
    image.data.assign(raw.begin(), raw.end());
    return image;
}

void save_png(const ImageU8& image, const std::string& path) {
    if (image.width <= 0 || image.height <= 0) {
        throw UsageError("save_png: empty image for '" + path + "'");
    }
    FileHandle file(path, "wb");
    if (!file.f) throw IoError("save_png: cannot open '" + path + "' for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("save_png: out of memory for '" + path + "'");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("save_png: out of memory for '" + path + "'");
    }

    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) {
        rows[y] = const_cast<png_bytep>(image.data.data() +
                                         static_cast<std::size_t>(y) * image.width * 3);
    }

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("save_png: write failed for '" + path + "'");
    }

    png_init_io(png, file.f);
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::string> list_png_files(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw IoError("list_png_files: '" + dir + "' is not a directory");
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().extension() == ".png" || entry.path().extension() == ".PNG") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

// --- Color conversion -------------------------------------------------------

YcbcrPlanes rgb_to_ycbcr(const ImageU8& image) {
    YcbcrPlanes out{Plane(image.width, image.height), Plane(image.width, image.height),
                    Plane(image.width, image.height)};
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double r = image.at(x, y, 0);
            const double g = image.at(x, y, 1);
            const double b = image.at(x, y, 2);
            out.y.at(x, y) =
                (16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
            out.cb.at(x, y) =
                (128.0 + (-37.797 * r - 74.203 * g + 112.0 * b) / 255.0);
            out.cr.at(x, y) =
                (128.0 + (112.0 * r - 93.786 * g - 18.214 * b) / 255.0);
        }
    }
    return out;
}

ImageU8 ycbcr_to_rgb(const YcbcrPlanes& planes) {
    ImageU8 out(planes.y.width, planes.y.height);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            const double yy = planes.y.at(x, y) - 16.0;
            const double cb = planes.cb.at(x, y) - 128.0;
            const double cr = planes.cr.at(x, y) - 128.0;
            out.at(x, y, 0) = round_u8(1.16438356 * yy + 1.59602679 * cr);
            out.at(x, y, 1) = round_u8(1.16438356 * yy - 0.39176229 * cb - 0.81296765 * cr);
            out.at(x, y, 2) = round_u8(1.16438356 * yy + 2.01723214 * cb);
        }
    }
    return out;
}

Plane luminance(const ImageU8& image) {
    Plane out(image.width, image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const double r = image.at(x, y, 0);
            const double g = image.at(x, y, 1);
            const double b = image.at(x, y, 2);
            out.at(x, y) =
                (16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0);
        }
    }
    return out;
}

// --- Resampling ---------------------------------------------------------------

namespace {

double keys_cubic(double t) {  // a = -0.5
    t = std::abs(t);
    if (t < 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

struct AxisWeights {
    std::vector<int> first;       // first source index per output index
    std::vector<double> weights;  // taps_per_out weights per output index
    int taps{0};
};

AxisWeights build_axis_weights(int in_extent, int out_extent) {
    const double scale = static_cast<double>(out_extent) / in_extent;
    const double kscale = scale < 1.0 ? scale : 1.0;  // widen kernel on downscale
    const double support = 2.0 / kscale;

    AxisWeights aw;
    aw.taps = static_cast<int>(std::ceil(2.0 * support)) + 1;
    aw.first.resize(out_extent);
    aw.weights.assign(static_cast<std::size_t>(out_extent) * aw.taps, 0.0);

    for (int o = 0; o < out_extent; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support)) + 1;
        aw.first[o] = lo;
        double sum = 0.0;
        for (int t = 0; t < aw.taps; ++t) {
            const double w = keys_cubic((center - (lo + t)) * kscale);
            aw.weights[static_cast<std::size_t>(o) * aw.taps + t] = w;
            sum += w;
        }
        for (int t = 0; t < aw.taps; ++t) {
            aw.weights[static_cast<std::size_t>(o) * aw.taps + t] /= sum;
        }
    }
    return aw;
}

Plane resize_horizontal(const Plane& src, int out_w) {
    const AxisWeights aw = build_axis_weights(src.width, out_w);
    Plane out(out_w, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int t = 0; t < aw.taps; ++t) {
                const int sx = std::clamp(aw.first[x] + t, 0, src.width - 1);
                acc += aw.weights[static_cast<std::size_t>(x) * aw.taps + t] * src.at(sx, y);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

Plane resize_vertical(const Plane& src, int out_h) {
    const AxisWeights aw = build_axis_weights(src.height, out_h);
    Plane out(src.width, out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int t = 0; t < aw.taps; ++t) {
                const int sy = std::clamp(aw.first[y] + t, 0, src.height - 1);
                acc += aw.weights[static_cast<std::size_t>(y) * aw.taps + t] * src.at(x, sy);
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

}  // namespace

Plane bicubic_resize(const Plane& src, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) {
        throw UsageError("bicubic_resize: output dims must be >= 1");
    }
    if (out_w == src.width && out_h == src.height) {
        // Scale 1 is the identity: the kernel hits exact integer offsets.
        Plane out = src;
        return out;
    }
    return resize_vertical(resize_horizontal(src, out_w), out_h);
}

Plane bicubic_resize(const Plane& src, double factor) {
    if (!(factor > 0.0)) throw UsageError("bicubic_resize: factor must be > 0");
    const int out_w = static_cast<int>(std::lround(src.width * factor));
    const int out_h = static_cast<int>(std::lround(src.height * factor));
    return bicubic_resize(src, out_w, out_h);
}

ImageU8 bicubic_resize_rgb(const ImageU8& src, double factor) {
    if (!(factor > 0.0)) throw UsageError("bicubic_resize_rgb: factor must be > 0");
    const int out_w = static_cast<int>(std::lround(src.width * factor));
    const int out_h = static_cast<int>(std::lround(src.height * factor));
    if (out_w < 1 || out_h < 1) throw UsageError("bicubic_resize_rgb: output too small");
    ImageU8 out(out_w, out_h);
    for (int ch = 0; ch < 3; ++ch) {
        Plane plane(src.width, src.height);
        for (int y = 0; y < src.height; ++y)
            for (int x = 0; x < src.width; ++x) plane.at(x, y) = src.at(x, y, ch);
        Plane resized = bicubic_resize(plane, out_w, out_h);
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) out.at(x, y, ch) = round_u8(resized.at(x, y));
    }
    return out;
}

Plane gaussian_blur(const Plane& src, int kernel_size, double sigma) {
    if (kernel_size % 2 == 0 || kernel_size < 1) {
        throw UsageError("gaussian_blur: kernel size must be odd");
    }
    if (!(sigma > 0.0)) throw UsageError("gaussian_blur: sigma must be > 0");
    const int radius = kernel_size / 2;
    std::vector<double> kernel(kernel_size);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        sum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= sum;

    Plane tmp(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[i + radius] * src.at(std::clamp(x + i, 0, src.width - 1), y);
            }
            tmp.at(x, y) = acc;
        }
    }
    Plane out(src.width, src.height);
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                acc += kernel[i + radius] * tmp.at(x, std::clamp(y + i, 0, src.height - 1));
            }
            out.at(x, y) = acc;
        }
    }
    return out;
}

// --- Degradation ---------------------------------------------------------------

void DegradationSpec::validate() const {
    switch (kind) {
        case DegradationKind::BI:
            if (scale < 1 || scale > 4) {
                throw ConfigError("DegradationSpec: BI scale must be in 1..4");
            }
            break;
        case DegradationKind::BD:
        case DegradationKind::DN:
            if (scale != 3) {
                throw ConfigError("DegradationSpec: " + degradation_kind_name(kind) +
                                  " is defined for scale 3, got " + std::to_string(scale));
            }
            break;
    }
    if (blur_kernel % 2 == 0 || blur_kernel < 1) {
        throw ConfigError("DegradationSpec: blur kernel must be odd");
    }
}

DegradationKind parse_degradation_kind(const std::string& name) {
    if (name == "BI") return DegradationKind::BI;
    if (name == "BD") return DegradationKind::BD;
    if (name == "DN") return DegradationKind::DN;
    throw ConfigError("unknown degradation '" + name + "' (expected BI, BD or DN)");
}

std::string degradation_kind_name(DegradationKind kind) {
    switch (kind) {
        case DegradationKind::BI: return "BI";
        case DegradationKind::BD: return "BD";
        case DegradationKind::DN: return "DN";
    }
    return "?";
}

ImageU8 center_crop_to_multiple(const ImageU8& image, int multiple) {
    if (multiple < 1) throw UsageError("center_crop_to_multiple: bad multiple");
    const int w = (image.width / multiple) * multiple;
    const int h = (image.height / multiple) * multiple;
    if (w < 1 || h < 1) {
        throw UsageError("center_crop_to_multiple: image smaller than multiple");
    }
    const int x0 = (image.width - w) / 2;
    const int y0 = (image.height - h) / 2;
    ImageU8 out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = image.at(x0 + x, y0 + y, ch);
    return out;
}

ImageU8 crop_image(const ImageU8& image, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w < 1 || h < 1 || x0 + w > image.width ||
        y0 + h > image.height) {
        throw UsageError("crop_image: window outside the source image");
    }
    ImageU8 out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = image.at(x0 + x, y0 + y, ch);
    return out;
}

namespace {

// Marsaglia polar Gaussian over the raw mt19937 stream; identical sequences
// on every platform, unlike std::normal_distribution.
class GaussianSampler {
public:
    explicit GaussianSampler(std::uint64_t seed)
        : rng_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        have_spare_ = true;
        return u * m;
    }

private:
    double uniform() { return rng_() * (1.0 / 4294967296.0); }
    std::mt19937 rng_;
    bool have_spare_{false};
    double spare_{0.0};
};

ImageU8 bicubic_downscale_u8(const ImageU8& hr, int scale) {
    ImageU8 out(hr.width / scale, hr.height / scale);
    for (int ch = 0; ch < 3; ++ch) {
        Plane plane(hr.width, hr.height);
        for (int y = 0; y < hr.height; ++y)
            for (int x = 0; x < hr.width; ++x) plane.at(x, y) = hr.at(x, y, ch);
        Plane small = bicubic_resize(plane, out.width, out.height);
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.at(x, y, ch) = round_u8(small.at(x, y));
    }
    return out;
}

}  // namespace

ImageU8 degrade(const ImageU8& hr, const DegradationSpec& spec) {
    spec.validate();
    if (hr.width % spec.scale != 0 || hr.height % spec.scale != 0) {
        throw ConfigError("degrade: HR dims " + std::to_string(hr.width) + "x" +
                          std::to_string(hr.height) + " not divisible by scale " +
                          std::to_string(spec.scale) + "; crop first");
    }

    switch (spec.kind) {
        case DegradationKind::BI:
            return bicubic_downscale_u8(hr, spec.scale);
        case DegradationKind::BD: {
            ImageU8 out(hr.width / spec.scale, hr.height / spec.scale);
            for (int ch = 0; ch < 3; ++ch) {
                Plane plane(hr.width, hr.height);
                for (int y = 0; y < hr.height; ++y)
                    for (int x = 0; x < hr.width; ++x) plane.at(x, y) = hr.at(x, y, ch);
                Plane blurred = gaussian_blur(plane, spec.blur_kernel, spec.blur_sigma);
                for (int y = 0; y < out.height; ++y)
                    for (int x = 0; x < out.width; ++x)
                        out.at(x, y, ch) = round_u8(blurred.at(x * spec.scale, y * spec.scale));
            }
            return out;
        }
        case DegradationKind::DN: {
            ImageU8 lr = bicubic_downscale_u8(hr, spec.scale);
            GaussianSampler noise(spec.seed);
            for (auto& v : lr.data) {
                v = round_u8(v + noise.next() * spec.noise_sigma);
            }
            return lr;
        }
    }
    throw ConfigError("degrade: unknown degradation kind");
}

// --- Dihedral transforms ----------------------------------------------------------

namespace {

ImageU8 rotate90_ccw(const ImageU8& in) {
    ImageU8 out(in.height, in.width);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int ch = 0; ch < 3; ++ch)
                out.at(x, y, ch) = in.at(in.width - 1 - y, x, ch);
    return out;
}

ImageU8 flip_horizontal(const ImageU8& in) {
    ImageU8 out(in.width, in.height);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = in.at(in.width - 1 - x, y, ch);
    return out;
}

}  // namespace

ImageU8 dihedral_transform(const ImageU8& image, int id) {
    if (id < 0 || id > 7) throw UsageError("dihedral_transform: id must be in 0..7");
    ImageU8 out = image;
    if (id & 4) out = flip_horizontal(out);
    for (int k = 0; k < (id & 3); ++k) out = rotate90_ccw(out);
    return out;
}

ImageU8 dihedral_inverse(const ImageU8& image, int id) {
    if (id < 0 || id > 7) throw UsageError("dihedral_inverse: id must be in 0..7");
    ImageU8 out = image;
    for (int k = 0; k < (4 - (id & 3)) % 4; ++k) out = rotate90_ccw(out);
    if (id & 4) out = flip_horizontal(out);
    return out;
}

ImageU8 self_ensemble_sr(const SrFunction& sr, const ImageU8& lr) {
    std::vector<double> acc;
    int out_w = 0, out_h = 0;
    for (int id = 0; id < 8; ++id) {
        const ImageU8 restored = dihedral_inverse(sr(dihedral_transform(lr, id)), id);
        if (id == 0) {
            out_w = restored.width;
            out_h = restored.height;
            acc.assign(restored.data.size(), 0.0);
        } else if (restored.width != out_w || restored.height != out_h) {
            throw UsageError("self_ensemble_sr: inconsistent output dims across passes");
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += restored.data[i];
    }
    ImageU8 out(out_w, out_h);
    for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = round_u8(acc[i] / 8.0);
    return out;
}

// --- Tensor bridge -------------------------------------------------------------------

TensorF image_to_tensor(const ImageU8& image) {
    TensorF t(Shape4{1, 3, image.height, image.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                t.at(0, c, y, x) = static_cast<float>(image.at(x, y, c)) / 255.f;
    return t;
}

ImageU8 tensor_to_image(const TensorF& tensor) {
    const Shape4 s = tensor.shape();
    if (s.n != 1 || s.c != 3) {
        throw ShapeError("tensor_to_image: expected [1,3,H,W], got " + s.str());
    }
    ImageU8 out(s.w, s.h);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                out.at(x, y, c) = round_u8(static_cast<double>(tensor.at(0, c, y, x)) * 255.0);
    return out;
}

}  // namespace fpan
