#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "fmanetpp.h"
#include "fmanetpp/image_io.hpp"

namespace fs = std::filesystem;
using fixtures::tiny_workspace;

TEST_CASE("c api: full pipeline on the tiny workspace") {
    const auto& ws = tiny_workspace();
    const std::string root = ws.root + "/capi";
    fs::remove_all(root);
    fs::create_directories(root);

    // dataset generation through the C surface (re mode for variety)
    const std::string re_dir = root + "/data_re";
    REQUIRE(fmanetpp_synth(ws.config_path.c_str(), re_dir.c_str(), "re") == FMANETPP_OK);
    CHECK(fs::exists(fs::path(re_dir) / "manifest.json"));

    CHECK(fmanetpp_synth(ws.config_path.c_str(), (root + "/bad").c_str(), "xx") !=
          FMANETPP_OK);
    CHECK(std::strlen(fmanetpp_last_error()) > 0);

    // stage 1-3, miniature sizes from the fixture config
    const std::string ete_ckpt = root + "/ete.ckpt";
    REQUIRE(fmanetpp_pretrain_ete(ws.config_path.c_str(), ws.data_dir.c_str(), ete_ckpt.c_str()) ==
            FMANETPP_OK);

    const std::string netd_dir = root + "/netd";
    REQUIRE(fmanetpp_train_netd(ws.config_path.c_str(), ws.data_dir.c_str(), ete_ckpt.c_str(),
                                netd_dir.c_str(), nullptr) == FMANETPP_OK);
    const std::string netd_ckpt = netd_dir + "/netd_best.ckpt";
    REQUIRE(fs::exists(netd_ckpt));

    const std::string joint_dir = root + "/joint";
    REQUIRE(fmanetpp_train_joint(ws.config_path.c_str(), ws.data_dir.c_str(), netd_ckpt.c_str(),
                                 joint_dir.c_str(), nullptr) == FMANETPP_OK);
    const std::string joint_ckpt = joint_dir + "/joint_best.ckpt";
    REQUIRE(fs::exists(joint_ckpt));

    // evaluation: model, baseline and forced-guidance paths
    const std::string eval_dir = root + "/eval";
    REQUIRE(fmanetpp_evaluate(joint_ckpt.c_str(), ws.data_dir.c_str(), "test", eval_dir.c_str(),
                              nullptr, 0) == FMANETPP_OK);
    CHECK(fs::exists(fs::path(eval_dir) / "eval_test.csv"));
    CHECK(fs::exists(fs::path(eval_dir) / "summary_test.json"));
    CHECK(fs::exists(fs::path(eval_dir) / "psnr_vs_runtime.png"));
    REQUIRE(fmanetpp_evaluate(joint_ckpt.c_str(), ws.data_dir.c_str(), "test",
                              (eval_dir + "_bl").c_str(), "bilinear", 0) == FMANETPP_OK);
    REQUIRE(fmanetpp_evaluate(joint_ckpt.c_str(), ws.data_dir.c_str(), "test",
                              (eval_dir + "_f1").c_str(), nullptr, 1) == FMANETPP_OK);

    // restore an arbitrary PNG directory
    const std::string frames_in = root + "/frames_in";
    fs::create_directories(frames_in);
    {
        auto lr0 = fmanet::io::read_png(
            (fs::path(ws.data_dir) / "test" / "me_s00000_l3" / "lr_0000.png").string());
        auto lr1 = fmanet::io::read_png(
            (fs::path(ws.data_dir) / "test" / "me_s00000_l3" / "lr_0001.png").string());
        fmanet::io::write_png(frames_in + "/a.png", lr0);
        fmanet::io::write_png(frames_in + "/b.png", lr1);
    }
    const std::string frames_out = root + "/frames_out";
    REQUIRE(fmanetpp_restore_dir(joint_ckpt.c_str(), frames_in.c_str(), frames_out.c_str()) ==
            FMANETPP_OK);
    CHECK(fs::exists(fs::path(frames_out) / "restored_0000.png"));
    CHECK(fs::exists(fs::path(frames_out) / "restored_0001.png"));

    // opaque model handle over raw buffers
    fmanetpp_model* model = nullptr;
    REQUIRE(fmanetpp_model_load(joint_ckpt.c_str(), &model) == FMANETPP_OK);
    REQUIRE(model != nullptr);
    const int s = fmanetpp_model_scale(model);
    CHECK(s == 4);
    const int t = 2, h = 8, w = 8;
    std::vector<float> in(static_cast<size_t>(t) * h * w * 3, 0.25f);
    std::vector<float> out(static_cast<size_t>(t) * (s * h) * (s * w) * 3, -1.0f);
    REQUIRE(fmanetpp_model_restore(model, in.data(), t, h, w, out.data()) == FMANETPP_OK);
    for (float v : out) CHECK(std::isfinite(v));
    CHECK(fmanetpp_model_restore(model, in.data(), 1, h, w, out.data()) != FMANETPP_OK);
    fmanetpp_model_free(model);

    // error paths surface messages, not crashes
    fmanetpp_model* bad_model = nullptr;
    CHECK(fmanetpp_model_load((root + "/nonexistent.ckpt").c_str(), &bad_model) != FMANETPP_OK);
    CHECK(bad_model == nullptr);
    CHECK(std::strlen(fmanetpp_last_error()) > 0);
}
