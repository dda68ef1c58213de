#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "fpan/imaging.hpp"

using namespace fpan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fpan_imaging_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

ImageU8 random_image(int w, int h, std::uint32_t seed) {
    std::mt19937 rng(seed);
    ImageU8 img(w, h);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() % 256);
    return img;
}

Plane random_plane(int w, int h, std::uint32_t seed) {
    std::mt19937 rng(seed);
    Plane p(w, h);
    for (auto& v : p.data) v = static_cast<double>(rng() % 256);
    return p;
}

void write_gray_png(const std::string& path, int w, int h) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<std::uint8_t> row(w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) row[x] = static_cast<std::uint8_t>((x * 7 + y * 13) % 256);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

double max_abs_channel_diff(const ImageU8& a, const ImageU8& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
    }
    return m;
}

}  // namespace

TEST_CASE("png: save/load round trip is bitwise lossless") {
    TempDir dir;
    const ImageU8 img = random_image(23, 17, 1);
    save_png(img, dir.file("rt.png"));
    const ImageU8 back = load_png(dir.file("rt.png"));
    CHECK(back == img);
}

TEST_CASE("png: grayscale expands to three identical channels") {
    TempDir dir;
    write_gray_png(dir.file("gray.png"), 9, 7);
    const ImageU8 img = load_png(dir.file("gray.png"));
    REQUIRE(img.width == 9);
    REQUIRE(img.height == 7);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x) {
            CHECK(img.at(x, y, 0) == static_cast<std::uint8_t>((x * 7 + y * 13) % 256));
            CHECK(img.at(x, y, 0) == img.at(x, y, 1));
            CHECK(img.at(x, y, 0) == img.at(x, y, 2));
        }
}

TEST_CASE("png: truncated files are rejected without a partial image") {
    TempDir dir;
    save_png(random_image(16, 16, 2), dir.file("full.png"));
    std::ifstream in(dir.file("full.png"), std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(dir.file("cut.png"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_png(dir.file("cut.png")), IoError);
    CHECK_THROWS_AS(load_png(dir.file("missing.png")), IoError);
}

TEST_CASE("png: directory listing is lexicographic") {
    TempDir dir;
    const ImageU8 img = random_image(4, 4, 3);
    save_png(img, dir.file("c.png"));
    save_png(img, dir.file("a.png"));
    save_png(img, dir.file("b.png"));
    const auto files = list_png_files(dir.path.string());
    REQUIRE(files.size() == 3);
    CHECK(fs::path(files[0]).filename() == "a.png");
    CHECK(fs::path(files[1]).filename() == "b.png");
    CHECK(fs::path(files[2]).filename() == "c.png");
}

TEST_CASE("ycbcr: white and black hit the studio-swing rails") {
    ImageU8 white(2, 2);
    for (auto& v : white.data) v = 255;
    const YcbcrPlanes wp = rgb_to_ycbcr(white);
    CHECK(wp.y.at(0, 0) == doctest::Approx(235.0).epsilon(1e-6));
    CHECK(wp.cb.at(0, 0) == doctest::Approx(128.0).epsilon(1e-4));
    CHECK(wp.cr.at(0, 0) == doctest::Approx(128.0).epsilon(1e-4));

    ImageU8 black(2, 2);
    const YcbcrPlanes bp = rgb_to_ycbcr(black);
    CHECK(bp.y.at(0, 0) == doctest::Approx(16.0).epsilon(1e-9));
}

TEST_CASE("ycbcr: round trip stays within one 8-bit step") {
    const ImageU8 img = random_image(31, 19, 4);
    const ImageU8 back = ycbcr_to_rgb(rgb_to_ycbcr(img));
    CHECK(max_abs_channel_diff(img, back) <= 1.0);
}

TEST_CASE("bicubic: constant planes stay constant") {
    Plane p(20, 14);
    for (auto& v : p.data) v = 87.25f;
    for (double factor : {0.5, 1.0 / 3.0, 2.0, 1.5}) {
        const Plane r = bicubic_resize(p, factor);
        for (double v : r.data) CHECK(std::abs(v - 87.25) < 1e-10);
    }
}

TEST_CASE("bicubic: factor one is the identity") {
    const Plane p = random_plane(13, 9, 5);
    const Plane r = bicubic_resize(p, 1.0);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        CHECK(std::abs(static_cast<double>(r.data[i]) - p.data[i]) < 1e-12);
    }
}

TEST_CASE("bicubic: x2 downscale reproduces a linear ramp in the interior") {
    Plane ramp(40, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 40; ++x) ramp.at(x, y) = static_cast<double>(x);
    const Plane down = bicubic_resize(ramp, 0.5);
    REQUIRE(down.width == 20);
    REQUIRE(down.height == 4);
    // Output x samples the source at 2x + 0.5; skip the clamped borders.
    for (int x = 2; x < 18; ++x) {
        CHECK(down.at(x, 2) == doctest::Approx(2.0 * x + 0.5).epsilon(1e-6));
    }
}

TEST_CASE("bicubic: degenerate outputs are rejected") {
    Plane p(4, 4);
    CHECK_THROWS_AS(bicubic_resize(p, 0.01), UsageError);
    CHECK_THROWS_AS(bicubic_resize(p, -1.0), UsageError);
}

TEST_CASE("gaussian blur: constants, impulse response and the 2-D oracle") {
    Plane c(9, 9);
    for (auto& v : c.data) v = 3.5f;
    const Plane cb = gaussian_blur(c, 7, 1.6);
    for (double v : cb.data) CHECK(std::abs(v - 3.5) < 1e-10);

    // Impulse: the response is the normalized 2-D kernel, peaked at center.
    Plane impulse(9, 9);
    impulse.at(4, 4) = 1.0f;
    const Plane ib = gaussian_blur(impulse, 7, 1.6);
    std::vector<double> k1(7);
    double sum = 0.0;
    for (int i = -3; i <= 3; ++i) {
        k1[i + 3] = std::exp(-(i * i) / (2.0 * 1.6 * 1.6));
        sum += k1[i + 3];
    }
    for (auto& v : k1) v /= sum;
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
            CHECK(ib.at(4 + dx, 4 + dy) ==
                  doctest::Approx(k1[dx + 3] * k1[dy + 3]).epsilon(1e-10));
        }
    for (int dy = -3; dy <= 3; ++dy)
        for (int dx = -3; dx <= 3; ++dx) {
            if (dx || dy) CHECK(ib.at(4, 4) > ib.at(4 + dx, 4 + dy));
        }

    // Separable implementation equals the direct 2-D convolution.
    const Plane p = random_plane(12, 10, 6);
    const Plane sep = gaussian_blur(p, 5, 1.1);
    std::vector<double> k(5);
    sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
        k[i + 2] = std::exp(-(i * i) / (2.0 * 1.1 * 1.1));
        sum += k[i + 2];
    }
    for (auto& v : k) v /= sum;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 12; ++x) {
            double acc = 0.0;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) {
                    const int sx = std::clamp(x + dx, 0, 11);
                    const int sy = std::clamp(y + dy, 0, 9);
                    acc += k[dx + 2] * k[dy + 2] * p.at(sx, sy);
                }
            CHECK(std::abs(sep.at(x, y) - acc) < 1e-10);
        }

    CHECK_THROWS_AS(gaussian_blur(p, 4, 1.0), UsageError);
}

TEST_CASE("degrade: BI equals the per-channel bicubic composition") {
    const ImageU8 hr = random_image(24, 18, 7);
    DegradationSpec spec;
    spec.kind = DegradationKind::BI;
    spec.scale = 3;
    const ImageU8 lr = degrade(hr, spec);
    const ImageU8 want = bicubic_resize_rgb(hr, 1.0 / 3.0);
    CHECK(lr == want);
}

TEST_CASE("degrade: DN noise is bitwise reproducible under a fixed seed") {
    const ImageU8 hr = random_image(24, 24, 8);
    DegradationSpec spec;
    spec.kind = DegradationKind::DN;
    spec.scale = 3;
    spec.seed = 99;
    const ImageU8 a = degrade(hr, spec);
    const ImageU8 b = degrade(hr, spec);
    CHECK(a == b);
    spec.seed = 100;
    const ImageU8 c = degrade(hr, spec);
    CHECK_FALSE(a == c);
}

TEST_CASE("degrade: BD keeps constants constant") {
    ImageU8 hr(18, 18);
    for (std::size_t i = 0; i < hr.data.size(); ++i) hr.data[i] = 140;
    DegradationSpec spec;
    spec.kind = DegradationKind::BD;
    spec.scale = 3;
    const ImageU8 lr = degrade(hr, spec);
    REQUIRE(lr.width == 6);
    for (auto v : lr.data) CHECK(v == 140);
}

TEST_CASE("degrade: spec/scale mismatches are configuration errors") {
    const ImageU8 hr = random_image(12, 12, 9);
    DegradationSpec bd;
    bd.kind = DegradationKind::BD;
    bd.scale = 2;
    CHECK_THROWS_AS(degrade(hr, bd), ConfigError);

    DegradationSpec bi;
    bi.scale = 5;
    CHECK_THROWS_AS(degrade(hr, bi), ConfigError);

    DegradationSpec ok;
    ok.scale = 2;
    const ImageU8 odd = random_image(13, 12, 10);
    CHECK_THROWS_AS(degrade(odd, ok), ConfigError);
}

TEST_CASE("center crop: trims to the scale multiple symmetrically") {
    const ImageU8 img = random_image(13, 10, 11);
    const ImageU8 crop = center_crop_to_multiple(img, 3);
    REQUIRE(crop.width == 12);
    REQUIRE(crop.height == 9);
    CHECK(crop.at(0, 0, 0) == img.at(0, 0, 0));  // x offset (13-12)/2 = 0
    CHECK(crop.at(0, 0, 1) == img.at(0, 0, 1));
    CHECK(crop.at(5, 5, 2) == img.at(5, 5, 2));
}

TEST_CASE("dihedral: every transform composes with its inverse to the identity") {
    const ImageU8 img = random_image(11, 7, 12);
    for (int id = 0; id < 8; ++id) {
        const ImageU8 t = dihedral_transform(img, id);
        if (id & 3) CHECK_FALSE(t == img);
        CHECK(dihedral_inverse(t, id) == img);
    }
    CHECK_THROWS_AS(dihedral_transform(img, 8), UsageError);
}

TEST_CASE("dihedral: whole-image augmentation commutes with BI degradation") {
    // Rotations and flips of the full image commute with bicubic resampling,
    // which is what keeps augmented LR/HR training pairs aligned.
    const ImageU8 hr = random_image(24, 24, 13);
    DegradationSpec spec;
    spec.scale = 2;
    for (int id = 0; id < 8; ++id) {
        const ImageU8 a = degrade(dihedral_transform(hr, id), spec);
        const ImageU8 b = dihedral_transform(degrade(hr, spec), id);
        CHECK(max_abs_channel_diff(a, b) <= 1.0);
    }
}

TEST_CASE("self-ensemble: equals the explicit eight-pass composition") {
    const ImageU8 lr = random_image(10, 10, 14);
    // A deliberately non-equivariant upscaler: nearest-neighbor x2 plus a
    // fixed horizontal ramp.
    auto quirky_sr = [](const ImageU8& in) {
        ImageU8 out(in.width * 2, in.height * 2);
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x)
                for (int c = 0; c < 3; ++c) {
                    const int v = in.at(x / 2, y / 2, c) + (x % 5);
                    out.at(x, y, c) = static_cast<std::uint8_t>(std::min(v, 255));
                }
        return out;
    };

    const ImageU8 got = self_ensemble_sr(quirky_sr, lr);

    std::vector<double> acc(static_cast<std::size_t>(20) * 20 * 3, 0.0);
    for (int id = 0; id < 8; ++id) {
        const ImageU8 pass = dihedral_inverse(quirky_sr(dihedral_transform(lr, id)), id);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += pass.data[i];
    }
    ImageU8 want(20, 20);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        want.data[i] = static_cast<std::uint8_t>(std::lround(acc[i] / 8.0));
    }
    CHECK(got == want);
}

TEST_CASE("self-ensemble: equivariant bicubic stub matches the single pass") {
    const ImageU8 lr = random_image(12, 12, 15);
    auto bicubic_sr = [](const ImageU8& in) { return bicubic_resize_rgb(in, 2.0); };
    const ImageU8 single = bicubic_sr(lr);
    const ImageU8 ensembled = self_ensemble_sr(bicubic_sr, lr);
    REQUIRE(ensembled.width == 24);
    REQUIRE(ensembled.height == 24);
    CHECK(max_abs_channel_diff(single, ensembled) <= 1.0);
}

TEST_CASE("tensor bridge: round trip through [0,1] floats") {
    const ImageU8 img = random_image(9, 6, 16);
    const TensorF t = image_to_tensor(img);
    REQUIRE(t.shape() == Shape4{1, 3, 6, 9});
    CHECK(t.data()[0] == doctest::Approx(img.at(0, 0, 0) / 255.f).epsilon(1e-7));
    CHECK(tensor_to_image(t) == img);
}
