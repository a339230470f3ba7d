#pragma once

#include <filesystem>
#include <mutex>
#include <string>

#include "fmanetpp/config.hpp"
#include "fmanetpp/image_io.hpp"
#include "fmanetpp/synth.hpp"

namespace fixtures {

// Tiny end-to-end workspace shared by the training/capi tests: an 8x8-LR
// five-frame constant-level dataset plus a matching miniature model config.
inline const char* kTinyConfig =
    "[data]\n"
    "hr_size = 32\n"
    "scale = 4\n"
    "w_hr = 10\n"
    "seed = 91\n"
    "scenes_train = 2\n"
    "scenes_val = 1\n"
    "scenes_test = 1\n"
    "frames_train = 5\n"
    "frames_val = 5\n"
    "frames_test = 5\n"
    "[net]\n"
    "m = 1\n"
    "n = 1\n"
    "cf = 8\n"
    "kd = 3\n"
    "s = 4\n"
    "ce = 8\n"
    "heads = 2\n"
    "window = 4\n"
    "rdb_growth = 4\n"
    "c_up = 4\n"
    "[ete]\n"
    "c_e = 8\n"
    "batch = 10\n"
    "steps = 6\n"
    "lr = 1e-2\n"
    "seed = 3\n"
    "[train]\n"
    "seed = 5\n"
    "batch = 2\n"
    "patch = 6\n"
    "seq = 3\n"
    "lr = 1e-3\n"
    "val_interval = 5\n"
    "stage2_iters = 4\n"
    "stage3_iters = 4\n"
    "clip = 1.0\n"
    "[loss]\n"
    "lambda1 = 1e-4\n"
    "lambda2 = 1e-4\n"
    "lambda3 = 0.1\n";

struct TinyWorkspace {
    std::string root;
    std::string data_dir;
    std::string config_path;
    fmanet::Config config;
};

inline const TinyWorkspace& tiny_workspace() {
    static TinyWorkspace ws;
    static std::once_flag once;
    std::call_once(once, [] {
        namespace fs = std::filesystem;
        fs::path root = fs::temp_directory_path() / "fmanetpp_tiny_ws";
        fs::remove_all(root);
        fs::create_directories(root);
        ws.root = root.string();
        ws.config_path = (root / "tiny.cfg").string();
        fmanet::io::write_text(ws.config_path, kTinyConfig);
        ws.config = fmanet::Config::load(ws.config_path);
        ws.data_dir = (root / "data").string();
        fmanet::synth::build_dataset(ws.config, ws.data_dir, "me");
    });
    return ws;
}

}  // namespace fixtures
