#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fpan/metrics.hpp"
#include "oracles.hpp"

using namespace fpan;

namespace {

Plane random_plane(int w, int h, std::uint32_t seed) {
    std::mt19937 rng(seed);
    Plane p(w, h);
    for (auto& v : p.data) v = static_cast<double>(rng() % 256);
    return p;
}

ImageU8 random_image(int w, int h, std::uint32_t seed) {
    std::mt19937 rng(seed);
    ImageU8 img(w, h);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() % 256);
    return img;
}

}  // namespace

TEST_CASE("psnr: identical inputs return the infinity sentinel") {
    const ImageU8 img = random_image(24, 24, 1);
    CHECK(std::isinf(psnr_y(img, img, 2)));
    CHECK(psnr_y(img, img, 2) > 0);
}

TEST_CASE("psnr: uniform unit error gives the closed-form 48.13 dB") {
    Plane a = random_plane(32, 24, 2);
    Plane b = a;
    for (auto& v : b.data) v += 1.0f;
    const double psnr = psnr_plane(a, b, 2);
    CHECK(psnr == doctest::Approx(10.0 * std::log10(255.0 * 255.0)).epsilon(1e-9));
    CHECK(psnr == doctest::Approx(48.1308).epsilon(1e-4));
}

TEST_CASE("psnr: doubling a uniform error costs exactly 20*log10(2) dB") {
    Plane a = random_plane(30, 20, 3);
    Plane b = a, c = a;
    for (auto& v : b.data) v += 1.0f;
    for (auto& v : c.data) v += 2.0f;
    const double drop = psnr_plane(a, b, 3) - psnr_plane(a, c, 3);
    CHECK(drop == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-9));
}

TEST_CASE("psnr: dimension mismatch is a usage error") {
    CHECK_THROWS_AS(psnr_y(random_image(8, 8, 4), random_image(8, 9, 5), 2), UsageError);
    Plane tiny(4, 4);
    CHECK_THROWS_AS(psnr_plane(tiny, tiny, 2), UsageError);
}

TEST_CASE("ssim: exact identity returns 1.0") {
    const ImageU8 img = random_image(32, 32, 6);
    CHECK(ssim_y(img, img, 2) == 1.0);
}

TEST_CASE("ssim: symmetric in its arguments") {
    const ImageU8 a = random_image(28, 28, 7);
    const ImageU8 b = random_image(28, 28, 8);
    CHECK(ssim_y(a, b, 2) == ssim_y(b, a, 2));
}

TEST_CASE("ssim: matches an independent direct-formula implementation") {
    for (std::uint32_t seed = 0; seed < 5; ++seed) {
        const Plane a = random_plane(26, 22, 100 + seed);
        Plane b = a;
        std::mt19937 rng(200 + seed);
        for (auto& v : b.data) {
            v += static_cast<double>(rng() % 21) - 10.0;
        }
        const double lib = ssim_plane(a, b, 1);
        const double direct = oracles::ssim_direct(a, b, 1);
        CHECK(lib == doctest::Approx(direct).epsilon(1e-6));
    }
}

TEST_CASE("ssim: too-small input after shave is rejected") {
    const ImageU8 img = random_image(14, 14, 9);
    CHECK_THROWS_AS(ssim_y(img, img, 2), UsageError);  // 14 - 4 = 10 < 11
}

TEST_CASE("metrics: invariant under simultaneous dihedral transforms") {
    const ImageU8 a = random_image(26, 26, 10);
    const ImageU8 b = random_image(26, 26, 11);
    const double psnr0 = psnr_y(a, b, 2);
    const double ssim0 = ssim_y(a, b, 2);
    for (int id = 1; id < 8; ++id) {
        const ImageU8 ta = dihedral_transform(a, id);
        const ImageU8 tb = dihedral_transform(b, id);
        CHECK(psnr_y(ta, tb, 2) == doctest::Approx(psnr0).epsilon(1e-9));
        CHECK(ssim_y(ta, tb, 2) == doctest::Approx(ssim0).epsilon(1e-9));
    }
}

TEST_CASE("evaluate_directory: identity stub at scale 1 reports infinite PSNR") {
    namespace fs = std::filesystem;
    const fs::path dir =
        fs::temp_directory_path() / ("fpan_eval_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    for (int i = 0; i < 3; ++i) {
        save_png(random_image(20, 20, 40 + i),
                 (dir / ("img_" + std::to_string(i) + ".png")).string());
    }

    DegradationSpec spec;  // BI at scale 1 degrades to the image itself
    spec.scale = 1;
    const SrFunction identity = [](const ImageU8& img) { return img; };
    const EvalReport report = evaluate_directory(identity, dir.string(), spec, 0);

    REQUIRE(report.rows.size() == 3);
    for (const auto& row : report.rows) {
        CHECK(std::isinf(row.psnr));
        CHECK(row.ssim == 1.0);
    }
    CHECK(std::isinf(report.average().psnr));

    // Reruns are deterministic row for row.
    const EvalReport again = evaluate_directory(identity, dir.string(), spec, 0);
    CHECK(again.to_csv() == report.to_csv());
    fs::remove_all(dir);
}

TEST_CASE("eval report: average row equals the arithmetic mean") {
    EvalReport report;
    report.scale = 2;
    report.rows = {{"a", 30.0, 0.9}, {"b", 34.0, 0.8}, {"c", 26.0, 0.7}};
    const EvalRow avg = report.average();
    CHECK(avg.psnr == doctest::Approx(30.0));
    CHECK(avg.ssim == doctest::Approx(0.8));
    const std::string csv = report.to_csv();
    CHECK(csv.find("name,psnr,ssim\n") == 0);
    CHECK(csv.find("average,") != std::string::npos);
}

TEST_CASE("count_params: the classic 3x3 64->64 conv has 36928 parameters") {
    ParameterStore<float> store;
    std::mt19937 rng(1);
    ConvLayer<float> conv(store, "c", 64, 64, 3, 1, rng);
    CHECK(store.total_params() == 36928);
}

TEST_CASE("count_params: tiny configuration matches the hand enumeration") {
    // G=1, D=1, C=8, S={1}, scale 2, reduction 4:
    //   head 3*8*9+8 = 224;  fc.init 584;  s1 1160;  s2 1160
    //   key 9; v1 18; ln 4; v2 24; fuse 72 + 584; up 2336; tail 219
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.channels = 8;
    cfg.num_blocks = 1;
    cfg.stage_depth = 1;
    cfg.reduction = 4;
    cfg.ablation.attention = Attention::gc;
    FpanModel<float> model(cfg, 1);
    const std::size_t want = 224 + 584 + 1160 + 1160 + 9 + 18 + 4 + 24 + 72 + 584 + 2336 + 219;
    CHECK(count_params(model).total_params() == want);
    CHECK(model.params.total_params() == want);
    CHECK(count_flops(cfg, 16, 16).total_params() == want);
}

TEST_CASE("count_params: stable across forward passes") {
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.channels = 8;
    cfg.num_blocks = 1;
    cfg.stage_depth = 1;
    cfg.reduction = 4;
    FpanModel<float> model(cfg, 2);
    const std::size_t before = count_params(model).total_params();
    TensorF lr(Shape4{1, 3, 8, 8});
    model.forward(nullptr, lr);
    CHECK(count_params(model).total_params() == before);
}

TEST_CASE("count_flops: single conv formula at 48x48") {
    ModelConfig cfg;  // defaults: C=64, pnlb {1,2,4}
    const CostReport report = count_flops(cfg, 48, 48);
    bool found = false;
    for (const auto& l : report.layers) {
        if (l.name == "fuse.spatial") {
            CHECK(l.flops == 2ull * 9 * 64 * 64 * 48 * 48);
            CHECK(l.flops == 169869312ull);
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("count_flops: conv cost scales with area") {
    ModelConfig cfg = apply_ablation_preset(ModelConfig{}, "P2");  // convs only
    const std::size_t f1 = count_flops(cfg, 24, 24).total_flops();
    const std::size_t f2 = count_flops(cfg, 48, 48).total_flops();
    CHECK(f2 == 4 * f1);
}

TEST_CASE("count_flops: strictly monotone in G, D, C and |S|") {
    ModelConfig base;
    base.scale = 2;
    const std::size_t f0 = count_flops(base, 24, 24).total_flops();

    ModelConfig more_g = base;
    more_g.num_blocks += 1;
    CHECK(count_flops(more_g, 24, 24).total_flops() > f0);

    ModelConfig more_d = base;
    more_d.stage_depth += 1;
    CHECK(count_flops(more_d, 24, 24).total_flops() > f0);

    ModelConfig more_c = base;
    more_c.channels += 16;
    CHECK(count_flops(more_c, 24, 24).total_flops() > f0);

    ModelConfig fewer_s = base;
    fewer_s.pyramid_scales = {1, 2};
    CHECK(count_flops(fewer_s, 24, 24).total_flops() < f0);
}

TEST_CASE("count_flops: pyramid scale delta equals the hand-computed cost") {
    ModelConfig full;  // {1,2,4}
    full.scale = 2;
    full.num_blocks = 1;
    ModelConfig single = full;
    single.pyramid_scales = {1};

    const int h = 24, w = 24, c = 64;
    auto conv_flops = [](std::size_t k, std::size_t cin, std::size_t cout,
                         std::size_t hh, std::size_t ww) {
        return 2 * k * k * cin * cout * hh * ww;
    };
    auto pool_flops = [](std::size_t ch, std::size_t positions) {
        return 5 * positions + 2 * ch * positions;
    };
    // Added by {2,4}: one downsampler at 12x12, two at 12x12/6x6, key convs
    // and pools at both scales, and a wider v1 input (3C vs C).
    const std::size_t want_delta =
        conv_flops(6, c, c, 12, 12) + conv_flops(6, c, c, 12, 12) +
        conv_flops(6, c, c, 6, 6) + conv_flops(1, c, 1, 12, 12) +
        conv_flops(1, c, 1, 6, 6) + pool_flops(c, 12 * 12) + pool_flops(c, 6 * 6) +
        (conv_flops(1, 3 * c, c / 16, 1, 1) - conv_flops(1, c, c / 16, 1, 1));

    const std::size_t got_delta =
        count_flops(full, h, w).total_flops() - count_flops(single, h, w).total_flops();
    CHECK(got_delta == want_delta);
}

TEST_CASE("cost report: totals equal the sum of the breakdown and CSV is formed") {
    const CostReport report = count_flops(ModelConfig{}, 24, 24);
    std::size_t p = 0, f = 0;
    for (const auto& l : report.layers) {
        p += l.params;
        f += l.flops;
    }
    CHECK(p == report.total_params());
    CHECK(f == report.total_flops());
    const std::string csv = report.to_csv();
    CHECK(csv.find("layer,params,flops\n") == 0);
    CHECK(csv.find("total,") != std::string::npos);
}

TEST_CASE("reference config: parameter count lands within 5% of the target") {
    const int blocks = resolve_reference_blocks();
    CHECK(blocks >= 1);
    const ModelConfig cfg = reference_config();
    CHECK(cfg.num_blocks == blocks);
    const std::size_t params = count_flops(cfg, 128, 128).total_params();
    CHECK(params >= kReferenceParamTarget);
    const double rel_gap =
        static_cast<double>(params - kReferenceParamTarget) / kReferenceParamTarget;
    CHECK(rel_gap < 0.05);

    // One block fewer must undershoot: G is minimal.
    ModelConfig smaller = cfg;
    smaller.num_blocks -= 1;
    CHECK(count_flops(smaller, 128, 128).total_params() < kReferenceParamTarget);
}

TEST_CASE("reference config: analytic count matches the constructed model") {
    const ModelConfig cfg = reference_config();
    FpanModel<float> model(cfg, 0);
    CHECK(model.params.total_params() == count_flops(cfg, 128, 128).total_params());
}
