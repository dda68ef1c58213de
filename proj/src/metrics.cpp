#include "fpan/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

namespace fpan {

namespace {

Plane shave_border(const Plane& p, int shave) {
    if (shave < 0) throw UsageError("shave must be >= 0");
    const int w = p.width - 2 * shave;
    const int h = p.height - 2 * shave;
    if (w < 1 || h < 1) {
        throw UsageError("image too small to shave a border of " + std::to_string(shave));
    }
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = p.at(x + shave, y + shave);
    return out;
}

void require_same_dims(const Plane& a, const Plane& b, const char* who) {
    if (a.width != b.width || a.height != b.height) {
        throw UsageError(std::string(who) + ": dimension mismatch");
    }
}

}  // namespace

double psnr_plane(const Plane& a, const Plane& b, int shave) {
    require_same_dims(a, b, "psnr");
    const Plane pa = shave_border(a, shave);
    const Plane pb = shave_border(b, shave);
    double sq = 0.0;
    for (std::size_t i = 0; i < pa.data.size(); ++i) {
        const double d = static_cast<double>(pa.data[i]) - pb.data[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(pa.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr_y(const ImageU8& sr, const ImageU8& hr, int scale) {
    if (sr.width != hr.width || sr.height != hr.height) {
        throw UsageError("psnr_y: dimension mismatch");
    }
    return psnr_plane(luminance(sr), luminance(hr), scale);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kSsimC2 = (0.03 * 255.0) * (0.03 * 255.0);

std::vector<double> ssim_kernel_1d() {
    std::vector<double> k(kSsimWindow);
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-(i * i) / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[i + r];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Valid-region separable filtering: (H,W) -> (H-10, W-10).
std::vector<double> filter_valid(const std::vector<double>& img, int w, int h,
                                 const std::vector<double>& k, int& out_w, int& out_h) {
    const int r = kSsimWindow - 1;
    out_w = w - r;
    out_h = h - r;
    std::vector<double> tmp(static_cast<std::size_t>(out_w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i)
                acc += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < kSsimWindow; ++i)
                acc += k[i] * tmp[static_cast<std::size_t>(y + i) * out_w + x];
            out[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
    return out;
}

}  // namespace

double ssim_plane(const Plane& a, const Plane& b, int shave) {
    require_same_dims(a, b, "ssim");
    const Plane pa = shave_border(a, shave);
    const Plane pb = shave_border(b, shave);
    if (pa.width < kSsimWindow || pa.height < kSsimWindow) {
        throw UsageError("ssim: image smaller than the 11x11 window after shave");
    }

    const int w = pa.width, h = pa.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = pa.data[i];
        y[i] = pb.data[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }

    const std::vector<double> k = ssim_kernel_1d();
    int vw = 0, vh = 0;
    const std::vector<double> mu_x = filter_valid(x, w, h, k, vw, vh);
    const std::vector<double> mu_y = filter_valid(y, w, h, k, vw, vh);
    const std::vector<double> m_xx = filter_valid(xx, w, h, k, vw, vh);
    const std::vector<double> m_yy = filter_valid(yy, w, h, k, vw, vh);
    const std::vector<double> m_xy = filter_valid(xy, w, h, k, vw, vh);

    double total = 0.0;
    const std::size_t vn = static_cast<std::size_t>(vw) * vh;
    for (std::size_t i = 0; i < vn; ++i) {
        const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
        const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
        const double cov = m_xy[i] - mu_x[i] * mu_y[i];
        const double num = (2.0 * mu_x[i] * mu_y[i] + kSsimC1) * (2.0 * cov + kSsimC2);
        const double den =
            (mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + kSsimC1) * (var_x + var_y + kSsimC2);
        total += num / den;
    }
    return total / static_cast<double>(vn);
}

double ssim_y(const ImageU8& sr, const ImageU8& hr, int scale) {
    if (sr.width != hr.width || sr.height != hr.height) {
        throw UsageError("ssim_y: dimension mismatch");
    }
    return ssim_plane(luminance(sr), luminance(hr), scale);
}

EvalRow EvalReport::average() const {
    EvalRow avg{"average", 0.0, 0.0};
    if (rows.empty()) return avg;
    for (const auto& r : rows) {
        avg.psnr += r.psnr;
        avg.ssim += r.ssim;
    }
    avg.psnr /= static_cast<double>(rows.size());
    avg.ssim /= static_cast<double>(rows.size());
    return avg;
}

namespace {

std::string format_metric(double v) {
    if (std::isinf(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "name,psnr,ssim\n";
    for (const auto& r : rows) {
        os << r.name << "," << format_metric(r.psnr) << "," << format_metric(r.ssim)
           << "\n";
    }
    const EvalRow avg = average();
    os << avg.name << "," << format_metric(avg.psnr) << "," << format_metric(avg.ssim)
       << "\n";
    return os.str();
}

EvalReport evaluate_directory(const SrFunction& sr, const std::string& hr_dir,
                              const DegradationSpec& spec, std::uint64_t seed) {
    spec.validate();
    const auto files = list_png_files(hr_dir);
    EvalReport report;
    report.scale = spec.scale;
    report.degradation = degradation_kind_name(spec.kind);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const ImageU8 hr = center_crop_to_multiple(load_png(files[i]), spec.scale);
        DegradationSpec per_image = spec;
        per_image.seed = seed ^ static_cast<std::uint64_t>(i);
        const ImageU8 restored = sr(degrade(hr, per_image));
        const std::string name = std::filesystem::path(files[i]).stem().string();
        report.rows.push_back({name, psnr_y(restored, hr, spec.scale),
                               ssim_y(restored, hr, spec.scale)});
    }
    return report;
}

// --- Cost accounting -------------------------------------------------------------

std::size_t CostReport::total_params() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.params;
    return total;
}

std::size_t CostReport::total_flops() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += l.flops;
    return total;
}

std::string CostReport::to_csv() const {
    std::ostringstream os;
    os << "layer,params,flops\n";
    for (const auto& l : layers) {
        os << l.name << "," << l.params << "," << l.flops << "\n";
    }
    os << "total," << total_params() << "," << total_flops() << "\n";
    return os.str();
}

template <typename T>
CostReport count_params(const FpanModel<T>& model) {
    CostReport report;
    for (const auto& e : model.params.entries()) {
        report.layers.push_back({e.name, e.tensor.numel(), 0});
    }
    return report;
}

template CostReport count_params<float>(const FpanModel<float>&);
template CostReport count_params<double>(const FpanModel<double>&);

namespace {

struct CostWalker {
    CostReport report;

    // Square-kernel convolution at a given output size.
    void conv(const std::string& name, int cin, int cout, int k, int out_h, int out_w) {
        const std::size_t params =
            static_cast<std::size_t>(cout) * cin * k * k + cout;
        const std::size_t area =
            static_cast<std::size_t>(std::max(out_h, 0)) * std::max(out_w, 0);
        const std::size_t flops = 2ull * k * k * cin * cout * area;
        report.layers.push_back({name, params, flops});
    }

    void extra(const std::string& name, std::size_t params, std::size_t flops) {
        report.layers.push_back({name, params, flops});
    }
};

int halved(int extent) { return extent >= 2 ? (extent - 2) / 2 + 1 : 0; }

}  // namespace

CostReport count_flops(const ModelConfig& cfg, int lr_h, int lr_w) {
    cfg.validate();
    CostWalker cw;
    const int c = cfg.channels;
    const int h = lr_h, w = lr_w;

    cw.conv("head", 3, c, 3, h, w);

    const std::vector<int> scales = cfg.attention_scales();
    for (int g = 1; g <= cfg.num_blocks; ++g) {
        const std::string prefix = "block" + std::to_string(g);
        cw.conv(prefix + ".fc.init", c, c, 3, h, w);
        for (int i = 1; i <= cfg.stage_depth; ++i) {
            cw.conv(prefix + ".fc.s1." + std::to_string(i), 2 * c, c, 3, h, w);
        }
        if (cfg.ablation.feedback_skips) {
            for (int i = 1; i <= cfg.stage_depth; ++i) {
                cw.conv(prefix + ".fc.s2." + std::to_string(i), 2 * c, c, 3, h, w);
            }
        }
        if (!scales.empty()) {
            const int bottleneck = c / cfg.reduction;
            for (int s : scales) {
                int sh = h, sw = w;
                const int downs = s == 1 ? 0 : (s == 2 ? 1 : 2);
                for (int j = 0; j < downs; ++j) {
                    const int nh = halved(sh), nw = halved(sw);
                    cw.conv(prefix + ".pn.down" + std::to_string(s) + "." +
                                std::to_string(j + 1),
                            c, c, 6, nh, nw);
                    sh = nh;
                    sw = nw;
                }
                cw.conv(prefix + ".pn.key" + std::to_string(s), c, 1, 1, sh, sw);
                const std::size_t positions =
                    static_cast<std::size_t>(std::max(sh, 0)) * std::max(sw, 0);
                cw.extra(prefix + ".pn.pool" + std::to_string(s), 0,
                         5ull * positions + 2ull * c * positions);
            }
            cw.conv(prefix + ".pn.v1", static_cast<int>(scales.size()) * c, bottleneck,
                    1, 1, 1);
            cw.extra(prefix + ".pn.ln", 2ull * bottleneck, 8ull * bottleneck);
            cw.conv(prefix + ".pn.v2", bottleneck, c, 1, 1, 1);
        }
    }

    cw.conv("fuse.pointwise", cfg.num_blocks * c, c, 1, h, w);
    cw.conv("fuse.spatial", c, c, 3, h, w);

    int uh = h, uw = w;
    const std::vector<int> factors =
        cfg.scale == 4 ? std::vector<int>{2, 2} : std::vector<int>{cfg.scale};
    for (std::size_t i = 0; i < factors.size(); ++i) {
        const int f = factors[i];
        cw.conv("up" + std::to_string(i + 1), c, c * f * f, 3, uh, uw);
        uh *= f;
        uw *= f;
    }
    cw.conv("tail", c, 3, 3, uh, uw);
    return cw.report;
}

int resolve_reference_blocks() {
    ModelConfig cfg;
    cfg.scale = 4;
    for (int g = 1; g <= 128; ++g) {
        cfg.num_blocks = g;
        if (count_flops(cfg, 128, 128).total_params() >= kReferenceParamTarget) {
            return g;
        }
    }
    throw ConfigError("resolve_reference_blocks: target not reachable");
}

ModelConfig reference_config() {
    ModelConfig cfg;
    cfg.scale = 4;
    cfg.num_blocks = resolve_reference_blocks();
    return cfg;
}

}  // namespace fpan
