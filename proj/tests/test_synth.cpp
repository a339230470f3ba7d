#include <doctest.h>

#include <filesystem>

#include "fmanetpp/image_io.hpp"
#include "fmanetpp/synth.hpp"
#include "testutil.hpp"

using namespace fmanet;
using namespace fmanet::synth;
namespace fs = std::filesystem;

namespace {

SceneSpec static_scene(std::uint64_t seed) {
    SceneSpec s = random_scene(seed, 48, 40);
    s.pan_vx = s.pan_vy = 0;
    for (auto& sp : s.sprites) sp.vx = sp.vy = sp.rot_rate = 0;
    return s;
}

double masked_psnr(const Tensor& a, const Tensor& b, const Tensor& mask) {
    double mse = 0;
    std::int64_t cnt = 0;
    const int h = a.shape[0], w = a.shape[1], c = a.shape[2];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at(y, x, 0) < 0.5) continue;
            for (int ch = 0; ch < c; ++ch) {
                const double d = a.at(y, x, ch) - b.at(y, x, ch);
                mse += d * d;
                ++cnt;
            }
        }
    REQUIRE(cnt > 0);
    mse /= cnt;
    return mse == 0 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

}  // namespace

TEST_CASE("render_high_rate: static scene gives identical frames and zero flows") {
    SceneSpec spec = static_scene(7);
    HighRateClip clip = render_high_rate(spec, 3, 5, 32, 32);
    REQUIRE(clip.frames.size() == 15);
    for (size_t i = 1; i < clip.frames.size(); ++i)
        CHECK(testutil::max_abs_diff(clip.frames[i], clip.frames[0]) == 0.0);
    for (const Tensor& f : clip.flow_fwd)
        for (double v : f.v) CHECK(v == 0.0);
}

TEST_CASE("render_high_rate: sprite velocity appears exactly in the analytic flow") {
    SceneSpec spec;
    spec.seed = 3;
    spec.bg_texture_id = 0;
    spec.bg_seed = 55;
    Sprite sp;
    sp.texture_id = 1;
    sp.tex_seed = 99;
    sp.radius = 10;
    sp.x0 = 20;
    sp.y0 = 32;
    sp.vx = 5;
    sp.vy = 0;
    spec.sprites.push_back(sp);

    Renderer r(spec, 64, 64);
    Tensor flow, valid;
    r.flow(0.0, 1.0, flow, valid);
    // on sprite support (center pixel) the flow equals the velocity
    CHECK(flow.at(32, 20, 0) == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(flow.at(32, 20, 1) == doctest::Approx(0.0).epsilon(1e-12));

    // rendered displacement between consecutive high-rate frames is v / W_hr:
    // cross-correlate two renders along x
    Tensor f0 = r.render(0.0);
    Tensor f1 = r.render(8.0 / 40.0);  // 8 high-rate steps at W_hr=40 -> 1 px
    double best = 1e9;
    int best_dx = -99;
    for (int dx = -3; dx <= 3; ++dx) {
        double err = 0;
        for (int y = 25; y < 40; ++y)
            for (int x = 12; x < 28; ++x)
                for (int c = 0; c < 3; ++c) {
                    const int xs = std::clamp(x - dx, 0, 63);
                    err += std::abs(f1.at(y, x, c) - f0.at(y, xs, c));
                }
        if (err < best) {
            best = err;
            best_dx = dx;
        }
    }
    CHECK(best_dx == 1);
}

TEST_CASE("render_high_rate: fixed seed is bit-identical across runs") {
    SceneSpec spec = random_scene(21, 48, 40);
    HighRateClip a = render_high_rate(spec, 3, 10, 48, 48);
    HighRateClip b = render_high_rate(spec, 3, 10, 48, 48);
    for (size_t i = 0; i < a.frames.size(); ++i)
        CHECK(testutil::max_abs_diff(a.frames[i], b.frames[i]) == 0.0);
}

TEST_CASE("render_high_rate: rejects bad W_hr") {
    SceneSpec spec = random_scene(2, 48, 40);
    CHECK_THROWS_AS(render_high_rate(spec, 3, 7, 48, 48), std::invalid_argument);
    CHECK_THROWS_AS(render_high_rate(spec, 3, 3, 48, 48), std::invalid_argument);
}

TEST_CASE("synth_blur: level 1 with W_hr=5 is a single sharp frame") {
    SceneSpec spec = random_scene(31, 48, 40);
    HighRateClip clip = render_high_rate(spec, 3, 5, 48, 48);
    ExposureTrajectory traj;
    traj.levels = {1, 1, 1};
    BlurredSequence seq = synth_blur(clip.frames, traj, 5);
    for (int i = 0; i < 3; ++i) {
        CHECK(testutil::max_abs_diff(seq.blurry[i], clip.frames[i * 5]) == 0.0);
        CHECK(testutil::max_abs_diff(seq.sharp[i], clip.frames[i * 5]) == 0.0);
    }
}

TEST_CASE("synth_blur: static scene gives B = Y exactly at every level") {
    SceneSpec spec = static_scene(41);
    HighRateClip clip = render_high_rate(spec, 3, 40, 32, 32);
    for (int lvl = 1; lvl <= 5; ++lvl) {
        ExposureTrajectory traj;
        traj.levels = {lvl, lvl, lvl};
        BlurredSequence seq = synth_blur(clip.frames, traj, 40);
        for (int i = 0; i < 3; ++i)
            CHECK(testutil::max_abs_diff(seq.blurry[i], seq.sharp[i]) < 1e-12);
    }
}

TEST_CASE("synth_blur: window accounting and trajectory length checks") {
    SceneSpec spec = random_scene(43, 32, 40);
    HighRateClip clip = render_high_rate(spec, 3, 40, 32, 32);
    ExposureTrajectory bad;
    bad.levels = {1, 2};
    CHECK_THROWS_AS(synth_blur(clip.frames, bad, 40), std::invalid_argument);

    // level 5 consumes the full interval: mean of frames [start, start+40)
    ExposureTrajectory full;
    full.levels = {5, 5, 5};
    BlurredSequence seq = synth_blur(clip.frames, full, 40);
    Tensor manual(clip.frames[0].shape);
    for (int j = 40; j < 80; ++j)
        for (size_t k = 0; k < manual.v.size(); ++k) manual.v[k] += clip.frames[j].v[k];
    for (auto& v : manual.v) v /= 40;
    CHECK(testutil::max_abs_diff(seq.blurry[1], manual) < 1e-12);
}

TEST_CASE("synth_blur: gradient energy non-increasing with level on moving scenes") {
    // mean over 20 seeded scenes, asserted on the mean per the dataset contract
    double energy[6] = {0, 0, 0, 0, 0, 0};
    for (int sc = 0; sc < 20; ++sc) {
        SceneSpec spec = random_scene(500 + sc, 48, 40);
        HighRateClip clip = render_high_rate(spec, 3, 40, 48, 48);
        for (int lvl = 1; lvl <= 5; ++lvl) {
            ExposureTrajectory traj;
            traj.levels = {lvl, lvl, lvl};
            BlurredSequence seq = synth_blur(clip.frames, traj, 40);
            double e = 0;
            for (const Tensor& b : seq.blurry) e += gradient_energy(b);
            energy[lvl] += e / seq.blurry.size();
        }
    }
    for (int lvl = 1; lvl < 5; ++lvl) CHECK(energy[lvl + 1] <= energy[lvl] + 1e-12);
}

TEST_CASE("analytic flows warp the next sharp frame back within 35 dB") {
    for (int sc = 0; sc < 4; ++sc) {
        SceneSpec spec = random_scene(900 + sc, 64, 40);
        Renderer r(spec, 64, 64);
        Tensor y0 = r.render(0.0), y1 = r.render(1.0);
        Tensor flow, valid;
        r.flow(0.0, 1.0, flow, valid);
        Tensor warped = testutil::oracle_backward_warp(y1, flow);
        CHECK(masked_psnr(warped, y0, valid) >= 35.0);
    }
}

TEST_CASE("gen_exposure_trajectory: invariants over 1000 seeds") {
    for (int seed = 0; seed < 1000; ++seed) {
        const int interval = seed % 2 ? 5 : 7;
        ExposureTrajectory tr = gen_exposure_trajectory(seed, 23, interval);
        REQUIRE(tr.levels.size() == 23);
        for (size_t i = 0; i < tr.levels.size(); ++i) {
            CHECK(tr.levels[i] >= 1);
            CHECK(tr.levels[i] <= 5);
            if (i > 0) {
                CHECK(std::abs(tr.levels[i] - tr.levels[i - 1]) <= 1);
                if (i % interval != 0) CHECK(tr.levels[i] == tr.levels[i - 1]);
            }
        }
    }
}

TEST_CASE("gen_exposure_trajectory: short sequence is constant; seeds reproduce") {
    ExposureTrajectory tr = gen_exposure_trajectory(77, 4, 5);
    for (int lvl : tr.levels) CHECK(lvl == tr.levels[0]);
    ExposureTrajectory tr2 = gen_exposure_trajectory(123, 50, 7);
    ExposureTrajectory tr3 = gen_exposure_trajectory(123, 50, 7);
    CHECK(tr2.levels == tr3.levels);
    CHECK_THROWS_AS(gen_exposure_trajectory(1, 10, 6), std::invalid_argument);
}

TEST_CASE("downsample_bicubic: constants, identity, ramp oracle") {
    Tensor c(Shape{8, 8, 3}, 0.5);
    Tensor down = downsample_bicubic(c, 4);
    REQUIRE(down.shape == Shape{2, 2, 3});
    for (double v : down.v) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(9);
    Tensor r = testutil::random_tensor(Shape{6, 6, 2}, rng);
    CHECK(testutil::max_abs_diff(downsample_bicubic(r, 1), r) == 0.0);

    // bilinear ramp: value = x / 7, downsample x4 samples positions 1.5, 5.5
    Tensor ramp(Shape{8, 8, 1});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) ramp.at(y, x, 0) = x / 7.0;
    Tensor lr = downsample_bicubic(ramp, 4);
    CHECK(lr.at(0, 0, 0) == doctest::Approx(1.5 / 7.0).epsilon(1e-3));
    CHECK(lr.at(0, 1, 0) == doctest::Approx(5.5 / 7.0).epsilon(1e-3));
    CHECK(lr.at(1, 0, 0) == doctest::Approx(1.5 / 7.0).epsilon(1e-3));

    CHECK_THROWS_AS(downsample_bicubic(ramp, 3), std::invalid_argument);
}

TEST_CASE("build_dataset: counts, determinism, empty config") {
    fs::path out = fs::temp_directory_path() / "fmanetpp_ds_test";
    fs::remove_all(out);

    Config cfg = Config::parse(
        "[data]\nhr_size = 32\nscale = 4\nw_hr = 10\nseed = 77\n"
        "scenes_train = 2\nscenes_val = 0\nscenes_test = 1\n"
        "frames_train = 3\nframes_val = 3\nframes_test = 3\n");

    BuildStats st = build_dataset(cfg, (out / "a").string(), "me");
    CHECK(st.samples == 15);  // 5 levels per scene x 3 scenes
    std::string m1 = io::read_text((out / "a" / "manifest.json").string());

    BuildStats st2 = build_dataset(cfg, (out / "b").string(), "me");
    std::string m2 = io::read_text((out / "b" / "manifest.json").string());
    CHECK(m1 == m2);  // byte-identical manifests for the same config

    // a sample directory holds the full file set
    CHECK(fs::exists(out / "a" / "train" / "me_s00000_l3" / "lr_0002.png"));
    CHECK(fs::exists(out / "a" / "train" / "me_s00000_l3" / "hr_0000.png"));
    CHECK(fs::exists(out / "a" / "train" / "me_s00000_l3" / "flow_fwd_0001.raw"));
    CHECK(fs::exists(out / "a" / "train" / "me_s00000_l3" / "valid_bwd_0001.raw.json"));
    CHECK(fs::exists(out / "a" / "train" / "me_s00000_l3" / "exposure.json"));

    // RE mode: one sample per scene
    BuildStats st3 = build_dataset(cfg, (out / "c").string(), "re");
    CHECK(st3.samples == 3);

    // zero scenes: empty manifest, success
    Config empty = Config::parse("[data]\nscenes_train = 0\nscenes_val = 0\nscenes_test = 0\n");
    BuildStats st4 = build_dataset(empty, (out / "d").string(), "me");
    CHECK(st4.samples == 0);
    CHECK(fs::exists(out / "d" / "manifest.json"));

    fs::remove_all(out);
}

TEST_CASE("lr frames follow blur-then-downsample order") {
    // downsampling the blurry HR frame must match the stored LR frame
    fs::path out = fs::temp_directory_path() / "fmanetpp_ds_order";
    fs::remove_all(out);
    Config cfg = Config::parse(
        "[data]\nhr_size = 32\nscale = 4\nw_hr = 10\nseed = 3\n"
        "scenes_train = 1\nscenes_val = 0\nscenes_test = 0\nframes_train = 3\n");
    build_dataset(cfg, out.string(), "me");

    SceneSpec spec = random_scene(3 + 0, 32, 10);
    HighRateClip clip = render_high_rate(spec, 3, 10, 32, 32);
    ExposureTrajectory traj;
    traj.levels = {4, 4, 4};
    BlurredSequence seq = synth_blur(clip.frames, traj, 10);
    Tensor lr = downsample_bicubic(seq.blurry[1], 4);
    for (auto& v : lr.v) v = v < 0 ? 0 : (v > 1 ? 1 : v);

    Tensor stored = io::read_png((out / "train" / "me_s00000_l4" / "lr_0001.png").string());
    CHECK(testutil::max_abs_diff(lr, stored) < 0.5 / 255.0 + 1e-9);
    fs::remove_all(out);
}
