#include "fmanetpp/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace fmanet::nn {

using nlohmann::json;

Param& ParamStore::create(const std::string& name, Shape shape) {
    if (params_.count(name)) throw std::logic_error("ParamStore: duplicate parameter " + name);
    Param& p = params_[name];
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.m = Tensor(shape);
    p.v = Tensor(shape);
    return p;
}

Param& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
    return it->second;
}

const Param& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, p] : params_) std::fill(p.grad.v.begin(), p.grad.v.end(), 0.0);
}

std::int64_t ParamStore::count(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_)
        if (name.rfind(prefix, 0) == 0) n += p.value.numel();
    return n;
}

std::uint64_t ParamStore::value_checksum(const std::string& prefix) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params_) {
        if (name.rfind(prefix, 0) != 0) continue;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(p.value.v.data(), p.value.v.size() * sizeof(double), h);
    }
    return h;
}

void init_normal(Tensor& t, Rng& rng, double stdev) {
    for (auto& v : t.v) v = rng.normal() * stdev;
}

void init_conv(Tensor& w, Rng& rng) {
    if (w.shape.rank() != 4) throw std::logic_error("init_conv: expected kh x kw x Cin x Cout");
    const double fan_in = static_cast<double>(w.shape[0]) * w.shape[1] * w.shape[2];
    init_normal(w, rng, std::sqrt(2.0 / fan_in));
}

void init_linear(Tensor& w, Rng& rng) {
    if (w.shape.rank() != 2) throw std::logic_error("init_linear: expected Cin x Cout");
    init_normal(w, rng, std::sqrt(2.0 / w.shape[0]));
}

double Adam::step(ParamStore& ps, double lr,
                  const std::function<bool(const std::string&)>& trainable) {
    double norm_sq = 0;
    for (auto& [name, p] : ps.all()) {
        if (!trainable(name)) continue;
        for (double g : p.grad.v) norm_sq += g * g;
    }
    const double norm = std::sqrt(norm_sq);
    const double scale = (clip > 0 && norm > clip) ? clip / norm : 1.0;

    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : ps.all()) {
        if (!trainable(name)) continue;
        for (size_t i = 0; i < p.value.v.size(); ++i) {
            const double g = p.grad.v[i] * scale;
            p.m.v[i] = beta1 * p.m.v[i] + (1 - beta1) * g;
            p.v.v[i] = beta2 * p.v.v[i] + (1 - beta2) * g * g;
            const double mh = p.m.v[i] / bc1;
            const double vh = p.v.v[i] / bc2;
            p.value.v[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
    return norm;
}

namespace {
constexpr char kMagic[8] = {'F', 'M', 'P', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind, const Config& cfg,
                     const ParamStore& ps, const json& extra, bool with_moments) {
    json header;
    header["kind"] = kind;
    header["version"] = kVersion;
    header["config_text"] = cfg.text();
    header["config_hash"] = cfg.hash_hex();
    header["with_moments"] = with_moments;
    header["extra"] = extra;

    json tensors = json::array();
    std::int64_t offset = 0;
    for (const auto& [name, p] : ps.all()) {
        json t;
        t["name"] = name;
        std::vector<int> dims;
        for (int i = 0; i < p.value.shape.rank(); ++i) dims.push_back(p.value.shape[i]);
        t["shape"] = dims;
        t["offset"] = offset;
        offset += p.value.numel() * (with_moments ? 3 : 1);
        tensors.push_back(t);
    }
    header["tensors"] = tensors;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kMagic, 8);
    std::uint32_t ver = kVersion;
    out.write(reinterpret_cast<const char*>(&ver), 4);
    std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, p] : ps.all()) {
        out.write(reinterpret_cast<const char*>(p.value.v.data()),
                  static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
        if (with_moments) {
            out.write(reinterpret_cast<const char*>(p.m.v.data()),
                      static_cast<std::streamsize>(p.m.v.size() * sizeof(double)));
            out.write(reinterpret_cast<const char*>(p.v.v.data()),
                      static_cast<std::streamsize>(p.v.v.size() * sizeof(double)));
        }
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

json load_checkpoint(const std::string& path, ParamStore& ps) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t ver = 0;
    in.read(reinterpret_cast<char*>(&ver), 4);
    if (ver != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(ver));
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(htext);

    const bool with_moments = header.at("with_moments").get<bool>();
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        Shape shape = Shape::of(t.at("shape").get<std::vector<int>>());
        Param& p = ps.has(name) ? ps.get(name) : ps.create(name, shape);
        if (p.value.shape != shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(p.value.v.data()),
                static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
        if (with_moments) {
            in.read(reinterpret_cast<char*>(p.m.v.data()),
                    static_cast<std::streamsize>(p.m.v.size() * sizeof(double)));
            in.read(reinterpret_cast<char*>(p.v.v.data()),
                    static_cast<std::streamsize>(p.v.v.size() * sizeof(double)));
        }
        if (!in) throw std::runtime_error("load_checkpoint: short read for " + name);
    }
    return header;
}

}  // namespace fmanet::nn
