#include <doctest.h>

#include <cmath>

#include "fmanetpp/metrics.hpp"
#include "fmanetpp/synth.hpp"
#include "testutil.hpp"

using namespace fmanet;
using namespace fmanet::metrics;

TEST_CASE("psnr: cap, closed form, symmetry, rejection") {
    Rng rng(61);
    Tensor a = testutil::random_tensor(Shape{6, 6, 3}, rng);
    CHECK(psnr(a, a) == 99.0);

    // uniform difference of 16/255 -> 20 log10(255/16)
    Tensor b = a;
    Tensor c = a;
    for (auto& v : c.v) v = v + 16.0 / 255.0;
    const double expect = 20.0 * std::log10(255.0 / 16.0);
    CHECK(psnr(b, c) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(psnr(b, c) == psnr(c, b));

    Tensor d(Shape{6, 5, 3});
    CHECK_THROWS_AS(psnr(a, d), std::invalid_argument);

    // sequence overload pools the MSE
    CHECK(psnr(std::vector<Tensor>{a, a}, std::vector<Tensor>{c, c}) ==
          doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("ssim: fixed point, anticorrelation, symmetry, window guard") {
    Rng rng(62);
    Tensor a = testutil::random_tensor(Shape{16, 16, 3}, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    // binary checkerboard vs its inverse: anticorrelated structure
    Tensor cb(Shape{16, 16, 3});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) cb.at(y, x, c) = ((y / 2 + x / 2) % 2) ? 1.0 : 0.0;
    Tensor inv = cb;
    for (auto& v : inv.v) v = 1.0 - v;
    CHECK(ssim(cb, inv) < 0.0);
    CHECK(ssim(cb, inv) == doctest::Approx(ssim(inv, cb)).epsilon(1e-12));

    Tensor tiny(Shape{8, 8, 3});
    CHECK_THROWS_AS(ssim(tiny, tiny), std::invalid_argument);
}

TEST_CASE("pyramid_flow: identical inputs give exactly zero flow") {
    Rng rng(63);
    Tensor a = testutil::random_tensor(Shape{24, 24}, rng);
    Tensor f = pyramid_flow(a, a);
    for (double v : f.v) CHECK(v == 0.0);
}

TEST_CASE("pyramid_flow: recovers a global integer shift") {
    // periodic but non-degenerate texture, shifted by (2, 0)
    Tensor a(Shape{32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            a.v[static_cast<size_t>(y) * 32 + x] =
                0.5 + 0.3 * std::sin(2 * M_PI * x / 7.3) + 0.2 * std::sin(2 * M_PI * y / 9.1);
    Tensor b(Shape{32, 32});
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const int xs = std::max(0, std::min(31, x - 2));
            b.v[static_cast<size_t>(y) * 32 + x] = a.v[static_cast<size_t>(y) * 32 + xs];
        }
    // flow from a to b: content moves by +2 in x
    Tensor f = pyramid_flow(a, b, PyramidFlowConfig{});
    std::vector<double> fx, fy;
    for (int y = 8; y < 24; ++y)
        for (int x = 8; x < 24; ++x) {
            fx.push_back(f.at(y, x, 0));
            fy.push_back(f.at(y, x, 1));
        }
    std::sort(fx.begin(), fx.end());
    std::sort(fy.begin(), fy.end());
    CHECK(std::abs(fx[fx.size() / 2] - 2.0) <= 0.5);
    CHECK(std::abs(fy[fy.size() / 2] - 0.0) <= 0.5);

    Tensor f2 = pyramid_flow(a, b, PyramidFlowConfig{});
    CHECK(testutil::max_abs_diff(f, f2) == 0.0);
}

TEST_CASE("tof: fixed point, brightness-shift robustness, rejection") {
    // textured moving synthetic clip
    synth::SceneSpec spec = synth::random_scene(64, 48, 40);
    synth::Renderer r(spec, 48, 48);
    std::vector<Tensor> gt;
    for (int i = 0; i < 4; ++i) gt.push_back(r.render(static_cast<double>(i)));

    CHECK(tof(gt, gt) == 0.0);

    std::vector<Tensor> shifted;
    for (size_t i = 0; i < gt.size(); ++i) {
        Tensor s = gt[i];
        const double off = 0.03 * (static_cast<double>(i % 3) - 1.0);
        for (auto& v : s.v) v += off;
        shifted.push_back(s);
    }
    CHECK(tof(shifted, gt) <= 0.05);

    std::vector<Tensor> one = {gt[0]};
    CHECK_THROWS_AS(tof(one, one), std::invalid_argument);
}

TEST_CASE("tof is non-negative on arbitrary inputs") {
    Rng rng(65);
    std::vector<Tensor> a, b;
    for (int i = 0; i < 3; ++i) {
        a.push_back(testutil::random_tensor(Shape{24, 24, 3}, rng));
        b.push_back(testutil::random_tensor(Shape{24, 24, 3}, rng));
    }
    CHECK(tof(a, b) >= 0.0);
}
