#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmanetpp/base.hpp"
#include "fmanetpp/config.hpp"

namespace fmanet::synth {

// Procedural texture ids: 0 value noise, 1 checkerboard, 2 stripes, 3 glyph
// blocks. All are band limited (>= ~1 px transitions) so subpixel motion stays
// resolvable after bilinear sampling.
struct Sprite {
    int texture_id = 0;
    std::uint64_t tex_seed = 0;
    double radius = 12.0;     // px
    double x0 = 0, y0 = 0;    // initial center, px
    double vx = 0, vy = 0;    // px per output interval
    double rot_rate = 0;      // radians per output interval
    bool square = false;      // rounded square instead of disc
};

struct SceneSpec {
    std::uint64_t seed = 0;
    int bg_texture_id = 0;
    std::uint64_t bg_seed = 0;
    double pan_vx = 0, pan_vy = 0;  // camera pan, px per output interval
    std::vector<Sprite> sprites;

    std::uint64_t hash() const;
};

// Seeded scene with at least one moving element and per-high-rate-frame
// displacement < 2 px for the given W_hr.
SceneSpec random_scene(std::uint64_t seed, int hr_size, int w_hr);

struct ExposureTrajectory {
    std::vector<int> levels;  // in [1,5]
    int update_interval = 5;  // 5 or 7
    std::uint64_t seed = 0;
};

// Interval-based random walk over the five levels: uniform start, step in
// {-1,0,+1} at indices divisible by update_interval, clamped to [1,5].
ExposureTrajectory gen_exposure_trajectory(std::uint64_t seed, int t, int update_interval);

// Analytic scene sampler. tau is measured in output frame intervals.
class Renderer {
public:
    Renderer(const SceneSpec& spec, int h, int w);

    Tensor render(double tau) const;  // H x W x 3 in [0,1]

    // Flow from the frame at tau_a toward the frame at tau_b:
    // content visible at pixel p at tau_a sits at p + flow(p) at tau_b.
    // valid is 0 where the correspondence breaks (coverage change, sprite
    // edge, or target out of frame).
    void flow(double tau_a, double tau_b, Tensor& flow_out, Tensor& valid_out) const;

    const SceneSpec& spec() const { return spec_; }

private:
    SceneSpec spec_;
    int h_, w_;
};

struct HighRateClip {
    std::vector<Tensor> frames;            // T * W_hr sharp HR frames
    std::vector<Tensor> flow_fwd;          // T-1 per-output-interval flows (tau=i -> i+1)
    std::vector<Tensor> flow_fwd_valid;    // matching validity masks
    int w_hr = 0;
};

// Renders the dense high-rate clip plus exact per-output-interval
// displacement fields. W_hr must be >= 5 and divisible by 5.
HighRateClip render_high_rate(const SceneSpec& spec, int t, int w_hr, int h, int w);

struct BlurredSequence {
    std::vector<Tensor> sharp;       // Y_i, the window-center high-rate frame
    std::vector<Tensor> blurry;      // B_i, mean over the exposure window
    std::vector<double> sharp_tau;   // time of each Y_i in output intervals
};

// Exposure windows open at the interval start and span e*W_hr/5 high-rate
// frames; the sharp ground truth is the window-center frame.
BlurredSequence synth_blur(const std::vector<Tensor>& clip, const ExposureTrajectory& traj, int w_hr);

// Catmull-Rom (a = -0.5) bicubic decimation at LR pixel centers, edge clamp.
Tensor downsample_bicubic(const Tensor& frame, int s);

// Mean forward-difference gradient energy, the blur severity statistic.
double gradient_energy(const Tensor& frame);

// One sample on disk: PNG frames + raw float flow/validity fields + JSON meta.
struct SampleFiles {
    std::string dir;
    int t = 0;
};

struct BuildStats {
    int samples = 0;
    std::string manifest_path;
};

// Writes train/val/test splits under out_dir. mode "me": five constant-level
// samples per scene; mode "re": one random-exposure trajectory per scene.
BuildStats build_dataset(const Config& cfg, const std::string& out_dir, const std::string& mode);

}  // namespace fmanet::synth
