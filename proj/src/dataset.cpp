#include "fmanetpp/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "fmanetpp/image_io.hpp"

namespace fmanet::data {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset Dataset::load(const std::string& dir, const std::string& split, bool with_hr,
                      bool with_flows) {
    const fs::path root(dir);
    json manifest = json::parse(io::read_text((root / "manifest.json").string()));

    Dataset ds;
    ds.scale = manifest.at("scale").get<int>();
    ds.hr_size = manifest.at("hr_size").get<int>();
    ds.w_hr = manifest.at("w_hr").get<int>();
    ds.mode = manifest.at("mode").get<std::string>();
    ds.config_hash = manifest.at("config_hash").get<std::string>();

    std::vector<json> metas;
    for (const auto& m : manifest.at("samples"))
        if (m.at("split").get<std::string>() == split) metas.push_back(m);
    std::sort(metas.begin(), metas.end(),
              [](const json& a, const json& b) { return a.at("id") < b.at("id"); });

    ds.samples.resize(metas.size());
    parallel_for(static_cast<int>(metas.size()), [&](int idx) {
        const json& m = metas[idx];
        Sample& s = ds.samples[idx];
        s.id = m.at("id").get<std::string>();
        s.dir = (root / m.at("path").get<std::string>()).string();
        s.t = m.at("frames").get<int>();
        s.scene_seed = m.at("scene_seed").get<std::uint64_t>();
        const json& exp = m.at("exposure");
        if (exp.at("mode") == "constant") {
            s.constant_level = true;
            s.level = exp.at("level").get<int>();
            s.levels.assign(s.t, s.level);
        } else {
            s.levels = exp.at("levels").get<std::vector<int>>();
        }

        char name[64];
        const fs::path sd(s.dir);
        s.lr.resize(s.t);
        if (with_hr) s.hr.resize(s.t);
        for (int i = 0; i < s.t; ++i) {
            std::snprintf(name, sizeof(name), "lr_%04d.png", i);
            s.lr[i] = F32(io::read_png((sd / name).string()));
            if (with_hr) {
                std::snprintf(name, sizeof(name), "hr_%04d.png", i);
                s.hr[i] = F32(io::read_png((sd / name).string()));
            }
        }
        if (with_flows) {
            s.flow_fwd.resize(s.t);
            s.valid_fwd.resize(s.t);
            s.flow_bwd.resize(s.t);
            s.valid_bwd.resize(s.t);
            for (int i = 0; i + 1 < s.t; ++i) {
                std::snprintf(name, sizeof(name), "flow_fwd_%04d.raw", i);
                s.flow_fwd[i] = F32(io::read_raw_f32((sd / name).string()));
                std::snprintf(name, sizeof(name), "valid_fwd_%04d.raw", i);
                s.valid_fwd[i] = F32(io::read_raw_f32((sd / name).string()));
            }
            for (int i = 1; i < s.t; ++i) {
                std::snprintf(name, sizeof(name), "flow_bwd_%04d.raw", i);
                s.flow_bwd[i] = F32(io::read_raw_f32((sd / name).string()));
                std::snprintf(name, sizeof(name), "valid_bwd_%04d.raw", i);
                s.valid_bwd[i] = F32(io::read_raw_f32((sd / name).string()));
            }
        }
    });
    return ds;
}

Tensor crop(const F32& frame, int oy, int ox, int size) {
    const int h = frame.shape[0], w = frame.shape[1], c = frame.shape[2];
    if (oy < 0 || ox < 0 || oy + size > h || ox + size > w)
        throw std::invalid_argument("crop: window out of range");
    Tensor out(Shape{size, size, c});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int ch = 0; ch < c; ++ch)
                out.at(y, x, ch) = frame.v[(static_cast<size_t>(oy + y) * w + (ox + x)) * c + ch];
    return out;
}

}  // namespace fmanet::data
