#include "fmanetpp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>

#include <nlohmann/json.hpp>

#include "fmanetpp/image_io.hpp"

namespace fmanet::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kEdgeWidth = 2.6;   // px, softness of sprite borders
constexpr double kTexEdge = 3.6;     // px, softness of binary texture transitions

double hash01(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x = x ^ (x >> 31);
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return (a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2))) * 0xff51afd7ed558ccdULL;
}

double smoothstep01(double t) {
    t = t < 0 ? 0 : (t > 1 ? 1 : t);
    return t * t * (3 - 2 * t);
}

double lattice(std::uint64_t seed, int ix, int iy, int salt) {
    return hash01(mix(seed, (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) << 32) ^
                                static_cast<std::uint32_t>(iy) ^
                                (static_cast<std::uint64_t>(salt) << 56)));
}

// Smoothstep-interpolated value noise on an integer lattice of the given cell
// size; C1-continuous, so warping stays well behaved.
double value_noise(std::uint64_t seed, double u, double v, double cell, int salt) {
    const double x = u / cell, y = v / cell;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = smoothstep01(x - x0), fy = smoothstep01(y - y0);
    const double a = lattice(seed, x0, y0, salt), b = lattice(seed, x0 + 1, y0, salt);
    const double c = lattice(seed, x0, y0 + 1, salt), d = lattice(seed, x0 + 1, y0 + 1, salt);
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

void tex_eval(int id, std::uint64_t seed, double u, double v, double out[3]) {
    switch (id & 3) {
        case 0: {  // two-octave value noise
            for (int c = 0; c < 3; ++c) {
                double n = 0.65 * value_noise(seed, u, v, 13.0, c) +
                           0.35 * value_noise(seed, u, v, 7.0, 8 + c);
                out[c] = 0.15 + 0.72 * n;
            }
            break;
        }
        case 1: {  // checkerboard with soft cell borders
            const double cell = 8.0 + 6.0 * hash01(mix(seed, 1));
            const double w = std::sin(M_PI * u / cell) * std::sin(M_PI * v / cell);
            const double e = M_PI * kTexEdge * 0.5 / cell;
            const double t = smoothstep01((w + e) / (2 * e));
            for (int c = 0; c < 3; ++c) {
                const double c1 = 0.18 + 0.3 * hash01(mix(seed, 10 + c));
                const double c2 = 0.62 + 0.3 * hash01(mix(seed, 20 + c));
                out[c] = c1 + (c2 - c1) * t;
            }
            break;
        }
        case 2: {  // oriented grating
            const double theta = 2 * M_PI * hash01(mix(seed, 2));
            const double period = 9.0 + 7.0 * hash01(mix(seed, 3));
            const double phase = (u * std::cos(theta) + v * std::sin(theta)) / period;
            const double w = std::sin(2 * M_PI * phase);
            const double e = 2 * M_PI * kTexEdge * 0.5 / period;
            const double t = smoothstep01((w + e) / (2 * e));
            for (int c = 0; c < 3; ++c) {
                const double c1 = 0.2 + 0.25 * hash01(mix(seed, 30 + c));
                const double c2 = 0.6 + 0.3 * hash01(mix(seed, 40 + c));
                out[c] = c1 + (c2 - c1) * t;
            }
            break;
        }
        default: {  // glyph-like binary blocks
            const double cell = 5.0 + 3.0 * hash01(mix(seed, 4));
            const double x = u / cell, y = v / cell;
            const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
            const double fx = smoothstep01((x - x0 - 0.5) * cell / kTexEdge + 0.5);
            const double fy = smoothstep01((y - y0 - 0.5) * cell / kTexEdge + 0.5);
            auto bit = [&](int ix, int iy) { return lattice(seed, ix, iy, 5) > 0.55 ? 1.0 : 0.0; };
            const double t = (1 - fy) * ((1 - fx) * bit(x0, y0) + fx * bit(x0 + 1, y0)) +
                             fy * ((1 - fx) * bit(x0, y0 + 1) + fx * bit(x0 + 1, y0 + 1));
            const double lo = 0.15 + 0.1 * hash01(mix(seed, 50));
            const double hi = 0.7 + 0.2 * hash01(mix(seed, 51));
            for (int c = 0; c < 3; ++c) out[c] = lo + (hi - lo) * t;
            break;
        }
    }
}

// Reflecting coordinate keeps sprites inside [lo, hi] while staying analytic.
double reflect(double x, double lo, double hi) {
    if (hi <= lo) return lo;
    const double range = hi - lo;
    double t = std::fmod(x - lo, 2 * range);
    if (t < 0) t += 2 * range;
    return lo + (t <= range ? t : 2 * range - t);
}

struct SpriteState {
    double cx, cy, theta;
};

SpriteState sprite_state(const Sprite& s, double tau, int h, int w) {
    const double margin = 0.5 * s.radius;
    SpriteState st;
    st.cx = reflect(s.x0 + s.vx * tau, margin, w - margin);
    st.cy = reflect(s.y0 + s.vy * tau, margin, h - margin);
    st.theta = s.rot_rate * tau;
    return st;
}

double sprite_alpha(const Sprite& s, const SpriteState& st, double px, double py) {
    const double rx = px - st.cx, ry = py - st.cy;
    double d;
    if (s.square) {
        const double c = std::cos(-st.theta), sn = std::sin(-st.theta);
        const double lx = c * rx - sn * ry, ly = sn * rx + c * ry;
        d = std::max(std::abs(lx), std::abs(ly));
    } else {
        d = std::sqrt(rx * rx + ry * ry);
    }
    return smoothstep01((s.radius - d) / kEdgeWidth + 0.5);
}

void sprite_color(const Sprite& s, const SpriteState& st, double px, double py, double out[3]) {
    const double rx = px - st.cx, ry = py - st.cy;
    const double c = std::cos(-st.theta), sn = std::sin(-st.theta);
    const double lx = c * rx - sn * ry, ly = sn * rx + c * ry;
    tex_eval(s.texture_id, s.tex_seed, lx + 4096.0, ly + 4096.0, out);
}

}  // namespace

std::uint64_t SceneSpec::hash() const {
    std::uint64_t h = fnv1a64(&seed, sizeof(seed));
    h = fnv1a64(&bg_texture_id, sizeof(bg_texture_id), h);
    h = fnv1a64(&bg_seed, sizeof(bg_seed), h);
    h = fnv1a64(&pan_vx, sizeof(pan_vx), h);
    h = fnv1a64(&pan_vy, sizeof(pan_vy), h);
    for (const Sprite& s : sprites) h = fnv1a64(&s, sizeof(Sprite), h);
    return h;
}

SceneSpec random_scene(std::uint64_t seed, int hr_size, int w_hr) {
    Rng rng(mix(seed, 0x5ce7e0ULL));
    SceneSpec spec;
    spec.seed = seed;
    spec.bg_texture_id = rng.uniform_int(4);
    spec.bg_seed = rng.next_u64();
    // Camera pan is always on: it guarantees a moving element and gives every
    // pixel an exposure-dependent blur cue.
    const double pan_speed = rng.uniform(2.0, 4.5);
    const double pan_dir = rng.uniform(0, 2 * M_PI);
    spec.pan_vx = pan_speed * std::cos(pan_dir);
    spec.pan_vy = pan_speed * std::sin(pan_dir);

    const int n = 2 + rng.uniform_int(3);
    for (int i = 0; i < n; ++i) {
        Sprite s;
        s.texture_id = rng.uniform_int(4);
        s.tex_seed = rng.next_u64();
        s.radius = rng.uniform(0.10, 0.22) * hr_size;
        s.x0 = rng.uniform(s.radius, hr_size - s.radius);
        s.y0 = rng.uniform(s.radius, hr_size - s.radius);
        const double speed = rng.uniform(4.0, 9.0);
        const double dir = rng.uniform(0, 2 * M_PI);
        s.vx = speed * std::cos(dir);
        s.vy = speed * std::sin(dir);
        s.square = rng.uniform() < 0.35;
        s.rot_rate = 0.0;
        spec.sprites.push_back(s);
    }
    // per-high-rate-frame displacement < 2 px
    for (const Sprite& s : spec.sprites) {
        const double step = std::hypot(s.vx, s.vy) / w_hr;
        if (step >= 2.0) throw std::logic_error("random_scene: displacement bound violated");
    }
    return spec;
}

ExposureTrajectory gen_exposure_trajectory(std::uint64_t seed, int t, int update_interval) {
    if (t < 1) throw std::invalid_argument("gen_exposure_trajectory: T must be >= 1");
    if (update_interval != 5 && update_interval != 7)
        throw std::invalid_argument("gen_exposure_trajectory: update interval must be 5 or 7");
    Rng rng(mix(seed, 0xe0));
    ExposureTrajectory traj;
    traj.seed = seed;
    traj.update_interval = update_interval;
    traj.levels.resize(t);
    traj.levels[0] = 1 + rng.uniform_int(5);
    for (int i = 1; i < t; ++i) {
        int lvl = traj.levels[i - 1];
        if (i % update_interval == 0) {
            lvl += rng.uniform_int(3) - 1;
            lvl = std::clamp(lvl, 1, 5);
        }
        traj.levels[i] = lvl;
    }
    return traj;
}

Renderer::Renderer(const SceneSpec& spec, int h, int w) : spec_(spec), h_(h), w_(w) {
    if (h < 1 || w < 1) throw std::invalid_argument("Renderer: bad dims");
}

Tensor Renderer::render(double tau) const {
    Tensor img(Shape{h_, w_, 3});
    std::vector<SpriteState> st;
    st.reserve(spec_.sprites.size());
    for (const Sprite& s : spec_.sprites) st.push_back(sprite_state(s, tau, h_, w_));
    const double ox = spec_.pan_vx * tau, oy = spec_.pan_vy * tau;
    double col[3], sc[3];
    for (int y = 0; y < h_; ++y)
        for (int x = 0; x < w_; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            tex_eval(spec_.bg_texture_id, spec_.bg_seed, px + ox, py + oy, col);
            for (size_t i = 0; i < spec_.sprites.size(); ++i) {
                const double a = sprite_alpha(spec_.sprites[i], st[i], px, py);
                if (a > 0.0) {
                    sprite_color(spec_.sprites[i], st[i], px, py, sc);
                    for (int c = 0; c < 3; ++c) col[c] = a * sc[c] + (1 - a) * col[c];
                }
            }
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
        }
    return img;
}

void Renderer::flow(double tau_a, double tau_b, Tensor& flow_out, Tensor& valid_out) const {
    flow_out = Tensor(Shape{h_, w_, 2});
    valid_out = Tensor(Shape{h_, w_, 1});
    std::vector<SpriteState> sa, sb;
    for (const Sprite& s : spec_.sprites) {
        sa.push_back(sprite_state(s, tau_a, h_, w_));
        sb.push_back(sprite_state(s, tau_b, h_, w_));
    }
    const int ns = static_cast<int>(spec_.sprites.size());

    // topmost sprite covering the point, -1 for background; edge = any sprite
    // in its soft border zone
    auto surface = [&](const std::vector<SpriteState>& st, double px, double py, bool& edge) {
        int id = -1;
        edge = false;
        for (int i = 0; i < ns; ++i) {
            const double a = sprite_alpha(spec_.sprites[i], st[i], px, py);
            if (a > 0.02 && a < 0.98) edge = true;
            if (a >= 0.5) id = i;
        }
        return id;
    };

    const double dtau = tau_b - tau_a;
    for (int y = 0; y < h_; ++y)
        for (int x = 0; x < w_; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool edge_a = false;
            const int id = surface(sa, px, py, edge_a);
            double dx, dy;
            if (id < 0) {
                dx = -spec_.pan_vx * dtau;
                dy = -spec_.pan_vy * dtau;
            } else {
                const double rx = px - sa[id].cx, ry = py - sa[id].cy;
                const double dth = sb[id].theta - sa[id].theta;
                const double c = std::cos(dth), sn = std::sin(dth);
                dx = (sb[id].cx + c * rx - sn * ry) - px;
                dy = (sb[id].cy + sn * rx + c * ry) - py;
            }
            flow_out.at(y, x, 0) = dx;
            flow_out.at(y, x, 1) = dy;

            bool ok = !edge_a;
            const double qx = px + dx, qy = py + dy;
            if (qx < 0.5 || qx > w_ - 0.5 || qy < 0.5 || qy > h_ - 0.5) ok = false;
            if (ok) {
                bool edge_b = false;
                const int idb = surface(sb, qx, qy, edge_b);
                ok = !edge_b && idb == id;
            }
            valid_out.at(y, x, 0) = ok ? 1.0 : 0.0;
        }
}

HighRateClip render_high_rate(const SceneSpec& spec, int t, int w_hr, int h, int w) {
    if (w_hr < 5 || w_hr % 5 != 0)
        throw std::invalid_argument("render_high_rate: W_hr must be >= 5 and divisible by 5");
    if (t < 3) throw std::invalid_argument("render_high_rate: T must be >= 3");
    Renderer r(spec, h, w);
    HighRateClip clip;
    clip.w_hr = w_hr;
    clip.frames.resize(static_cast<size_t>(t) * w_hr);
    parallel_for(t * w_hr, [&](int j) {
        clip.frames[j] = r.render(static_cast<double>(j) / w_hr);
    });
    clip.flow_fwd.resize(t - 1);
    clip.flow_fwd_valid.resize(t - 1);
    for (int i = 0; i + 1 < t; ++i)
        r.flow(i, i + 1, clip.flow_fwd[i], clip.flow_fwd_valid[i]);
    return clip;
}

BlurredSequence synth_blur(const std::vector<Tensor>& clip, const ExposureTrajectory& traj, int w_hr) {
    if (clip.empty() || clip.size() % w_hr != 0)
        throw std::invalid_argument("synth_blur: clip length must be a multiple of W_hr");
    const int t = static_cast<int>(clip.size()) / w_hr;
    if (static_cast<int>(traj.levels.size()) != t)
        throw std::invalid_argument("synth_blur: trajectory length " +
                                    std::to_string(traj.levels.size()) + " does not match T " +
                                    std::to_string(t));
    BlurredSequence seq;
    for (int i = 0; i < t; ++i) {
        const int lvl = traj.levels[i];
        if (lvl < 1 || lvl > 5) throw std::invalid_argument("synth_blur: level out of range");
        const int ne = lvl * w_hr / 5;
        const int start = i * w_hr;
        Tensor blur(clip[start].shape);
        for (int j = 0; j < ne; ++j) {
            const Tensor& f = clip[start + j];
            for (size_t k = 0; k < blur.v.size(); ++k) blur.v[k] += f.v[k];
        }
        const double inv = 1.0 / ne;
        for (auto& v : blur.v) v *= inv;
        const int center = start + (ne - 1) / 2;
        seq.blurry.push_back(std::move(blur));
        seq.sharp.push_back(clip[center]);
        seq.sharp_tau.push_back(static_cast<double>(center) / w_hr);
    }
    return seq;
}

Tensor downsample_bicubic(const Tensor& frame, int s) {
    if (frame.shape.rank() != 3) throw std::invalid_argument("downsample_bicubic: expected H x W x C");
    const int h = frame.shape[0], w = frame.shape[1], c = frame.shape[2];
    if (s < 1 || h % s != 0 || w % s != 0)
        throw std::invalid_argument("downsample_bicubic: dims " + frame.shape.str() +
                                    " not divisible by " + std::to_string(s));
    if (s == 1) return frame;
    const int ho = h / s, wo = w / s;

    auto cr = [](double u) {
        u = std::abs(u);
        if (u <= 1.0) return 1.5 * u * u * u - 2.5 * u * u + 1.0;
        if (u < 2.0) return -0.5 * u * u * u + 2.5 * u * u - 4.0 * u + 2.0;
        return 0.0;
    };

    // separable: rows first
    Tensor rows(Shape{h, wo, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wo; ++x) {
            const double sx = (x + 0.5) * s - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            const double fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int k = -1; k <= 2; ++k) {
                    int xi = std::clamp(x0 + k, 0, w - 1);
                    acc += cr(fx - k) * frame.at(y, xi, ch);
                }
                rows.at(y, x, ch) = acc;
            }
        }
    Tensor out(Shape{ho, wo, c});
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            const double sy = (y + 0.5) * s - 0.5;
            const int y0 = static_cast<int>(std::floor(sy));
            const double fy = sy - y0;
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int k = -1; k <= 2; ++k) {
                    int yi = std::clamp(y0 + k, 0, h - 1);
                    acc += cr(fy - k) * rows.at(yi, x, ch);
                }
                out.at(y, x, ch) = acc;
            }
        }
    return out;
}

double gradient_energy(const Tensor& frame) {
    const int h = frame.shape[0], w = frame.shape[1], c = frame.shape[2];
    double acc = 0;
    std::int64_t cnt = 0;
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x + 1 < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                const double dx = frame.at(y, x + 1, ch) - frame.at(y, x, ch);
                const double dy = frame.at(y + 1, x, ch) - frame.at(y, x, ch);
                acc += dx * dx + dy * dy;
                ++cnt;
            }
    return cnt ? acc / cnt : 0.0;
}

namespace {

struct SampleRecord {
    json meta;
    std::string rel_dir;
};

void clamp01(Tensor& t) {
    for (auto& v : t.v) v = v < 0 ? 0 : (v > 1 ? 1 : v);
}

SampleRecord write_sample(const fs::path& root, const std::string& split, const std::string& sample_id,
                          const SceneSpec& spec, const Renderer& renderer,
                          const std::vector<Tensor>& clip, const ExposureTrajectory& traj, int w_hr,
                          int s, bool constant_mode, int level) {
    BlurredSequence seq = synth_blur(clip, traj, w_hr);
    const int t = static_cast<int>(seq.sharp.size());

    const fs::path dir = root / split / sample_id;
    fs::create_directories(dir);

    char name[64];
    for (int i = 0; i < t; ++i) {
        std::snprintf(name, sizeof(name), "hr_%04d.png", i);
        io::write_png((dir / name).string(), seq.sharp[i]);
        Tensor lr = downsample_bicubic(seq.blurry[i], s);
        clamp01(lr);
        std::snprintf(name, sizeof(name), "lr_%04d.png", i);
        io::write_png((dir / name).string(), lr);
    }
    Tensor fl, valid;
    for (int i = 0; i + 1 < t; ++i) {
        renderer.flow(seq.sharp_tau[i], seq.sharp_tau[i + 1], fl, valid);
        std::snprintf(name, sizeof(name), "flow_fwd_%04d.raw", i);
        io::write_raw_f32((dir / name).string(), fl);
        std::snprintf(name, sizeof(name), "valid_fwd_%04d.raw", i);
        io::write_raw_f32((dir / name).string(), valid);
    }
    for (int i = 1; i < t; ++i) {
        renderer.flow(seq.sharp_tau[i], seq.sharp_tau[i - 1], fl, valid);
        std::snprintf(name, sizeof(name), "flow_bwd_%04d.raw", i);
        io::write_raw_f32((dir / name).string(), fl);
        std::snprintf(name, sizeof(name), "valid_bwd_%04d.raw", i);
        io::write_raw_f32((dir / name).string(), valid);
    }

    json exposure;
    if (constant_mode) {
        exposure["mode"] = "constant";
        exposure["level"] = level;
    } else {
        exposure["mode"] = "trajectory";
        exposure["levels"] = traj.levels;
        exposure["update_interval"] = traj.update_interval;
        exposure["seed"] = traj.seed;
    }
    io::write_text((dir / "exposure.json").string(), exposure.dump(2) + "\n");

    json meta;
    meta["id"] = sample_id;
    meta["split"] = split;
    meta["scene_seed"] = spec.seed;
    meta["scene_hash"] = hex64(spec.hash());
    meta["scale"] = s;
    meta["w_hr"] = w_hr;
    meta["frames"] = t;
    meta["exposure"] = exposure;
    io::write_text((dir / "meta.json").string(), meta.dump(2) + "\n");

    SampleRecord rec;
    rec.meta = meta;
    rec.rel_dir = split + "/" + sample_id;
    rec.meta["path"] = rec.rel_dir;
    return rec;
}

}  // namespace

BuildStats build_dataset(const Config& cfg, const std::string& out_dir, const std::string& mode) {
    if (mode != "me" && mode != "re")
        throw std::invalid_argument("build_dataset: mode must be 'me' or 're'");
    const bool me = mode == "me";
    const int hr_size = static_cast<int>(cfg.get_int("data.hr_size", 96));
    const int s = static_cast<int>(cfg.get_int("data.scale", 4));
    const int w_hr = static_cast<int>(cfg.get_int("data.w_hr", 40));
    const std::uint64_t base_seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", 1000));
    if (hr_size % s != 0) throw std::invalid_argument("build_dataset: hr_size not divisible by scale");

    const char* splits[3] = {"train", "val", "test"};
    const int counts[3] = {static_cast<int>(cfg.get_int("data.scenes_train", 0)),
                           static_cast<int>(cfg.get_int("data.scenes_val", 0)),
                           static_cast<int>(cfg.get_int("data.scenes_test", 0))};
    const int frames[3] = {static_cast<int>(cfg.get_int("data.frames_train", 10)),
                           static_cast<int>(cfg.get_int("data.frames_val", 10)),
                           static_cast<int>(cfg.get_int("data.frames_test", 14))};

    fs::path root(out_dir);
    fs::create_directories(root);

    struct Job {
        int split;
        int index;
        std::uint64_t scene_seed;
    };
    std::vector<Job> jobs;
    for (int sp = 0; sp < 3; ++sp)
        for (int i = 0; i < counts[sp]; ++i)
            jobs.push_back({sp, i, base_seed + static_cast<std::uint64_t>(sp) * 10000 + i});

    std::vector<std::vector<SampleRecord>> per_job(jobs.size());
    parallel_for(static_cast<int>(jobs.size()), [&](int j) {
        const Job& job = jobs[j];
        const int t = frames[job.split];
        SceneSpec spec = random_scene(job.scene_seed, hr_size, w_hr);
        Renderer renderer(spec, hr_size, hr_size);
        HighRateClip clip = render_high_rate(spec, t, w_hr, hr_size, hr_size);
        char sid[64];
        if (me) {
            for (int lvl = 1; lvl <= 5; ++lvl) {
                ExposureTrajectory traj;
                traj.levels.assign(t, lvl);
                traj.update_interval = 5;
                traj.seed = job.scene_seed;
                std::snprintf(sid, sizeof(sid), "me_s%05d_l%d", job.index, lvl);
                per_job[j].push_back(write_sample(root, splits[job.split], sid, spec, renderer,
                                                  clip.frames, traj, w_hr, s, true, lvl));
            }
        } else {
            const std::uint64_t tseed = mix(job.scene_seed, 0x4ea11cULL);
            const int interval = hash01(mix(tseed, 1)) < 0.5 ? 5 : 7;
            ExposureTrajectory traj = gen_exposure_trajectory(tseed, t, interval);
            std::snprintf(sid, sizeof(sid), "re_s%05d", job.index);
            per_job[j].push_back(write_sample(root, splits[job.split], sid, spec, renderer, clip.frames,
                                              traj, w_hr, s, false, 0));
        }
    });

    json manifest;
    manifest["format_version"] = 1;
    manifest["mode"] = mode;
    manifest["hr_size"] = hr_size;
    manifest["scale"] = s;
    manifest["w_hr"] = w_hr;
    manifest["base_seed"] = base_seed;
    manifest["config_hash"] = cfg.hash_hex();
    manifest["config_text"] = cfg.text();
    json samples = json::array();
    for (const auto& recs : per_job)
        for (const auto& r : recs) samples.push_back(r.meta);
    manifest["samples"] = samples;

    BuildStats stats;
    stats.samples = static_cast<int>(samples.size());
    stats.manifest_path = (root / "manifest.json").string();
    io::write_text(stats.manifest_path, manifest.dump(2) + "\n");
    return stats;
}

}  // namespace fmanet::synth
