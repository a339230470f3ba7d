#pragma once

#include <string>
#include <vector>

#include "fmanetpp/base.hpp"

namespace fmanet::data {

// Compact float32 storage for in-memory datasets; converted to double at the
// point of use.
struct F32 {
    Shape shape;
    std::vector<float> v;

    F32() = default;
    explicit F32(const Tensor& t) : shape(t.shape), v(t.v.begin(), t.v.end()) {}
    Tensor to_tensor() const {
        Tensor t(shape);
        for (size_t i = 0; i < v.size(); ++i) t.v[i] = v[i];
        return t;
    }
    bool empty() const { return v.empty(); }
};

struct Sample {
    std::string id;
    std::string dir;
    int t = 0;
    bool constant_level = false;
    int level = 0;            // constant-level samples only
    std::vector<int> levels;  // per-frame exposure levels
    std::uint64_t scene_seed = 0;

    std::vector<F32> lr;         // T LR frames
    std::vector<F32> hr;         // T HR frames (optional)
    std::vector<F32> flow_fwd;   // index i: flow i -> i+1 (i in [0, T-2]), HR resolution
    std::vector<F32> valid_fwd;  //
    std::vector<F32> flow_bwd;   // index i: flow i -> i-1 (i in [1, T-1]); entry 0 empty
    std::vector<F32> valid_bwd;  //
};

struct Dataset {
    int scale = 4;
    int hr_size = 0;
    int w_hr = 40;
    std::string mode;
    std::string config_hash;
    std::vector<Sample> samples;

    static Dataset load(const std::string& dir, const std::string& split, bool with_hr,
                        bool with_flows);
};

// Aligned LR/HR crop of one frame: LR window (oy, ox, size), HR window scaled
// by the dataset scale factor.
Tensor crop(const F32& frame, int oy, int ox, int size);

}  // namespace fmanet::data
