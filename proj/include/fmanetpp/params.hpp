#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fmanetpp/base.hpp"
#include "fmanetpp/config.hpp"
#include "fmanetpp/tape.hpp"

namespace fmanet::nn {

struct Param {
    Tensor value;
    Tensor grad;
    Tensor m, v;  // Adam first/second moments
};

class ParamStore {
public:
    Param& create(const std::string& name, Shape shape);
    Param& get(const std::string& name);
    const Param& get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, Param>& all() { return params_; }
    const std::map<std::string, Param>& all() const { return params_; }

    void zero_grad();
    std::int64_t count(const std::string& prefix = "") const;
    std::uint64_t value_checksum(const std::string& prefix = "") const;

private:
    std::map<std::string, Param> params_;
};

// Deterministic initializers.
void init_normal(Tensor& t, Rng& rng, double stdev);
void init_conv(Tensor& w, Rng& rng);    // Kaiming over kh*kw*Cin fan-in
void init_linear(Tensor& w, Rng& rng);  // Kaiming over Cin fan-in

// Per-forward context: binds parameter leaves onto a tape and harvests leaf
// gradients back into the store after backward. One Ctx per tape/thread;
// harvest() is called on the coordinator thread in a fixed order.
class Ctx {
public:
    Ctx(ad::Tape& tape, ParamStore& ps, bool train) : tape_(tape), ps_(ps), train_(train) {}

    ad::Var p(const std::string& name, bool trainable = true) {
        Param& par = ps_.get(name);
        ad::Var leaf = tape_.leaf(par.value, train_ && trainable);
        if (leaf.requires_grad()) bindings_.push_back({&par, leaf.node()});
        return leaf;
    }
    ad::Var c(const Tensor& t) { return tape_.leaf(t, false); }

    void harvest() {
        for (auto& [par, node] : bindings_) {
            if (node->grad.empty()) continue;
            for (size_t i = 0; i < par->grad.v.size(); ++i) par->grad.v[i] += node->grad[i];
        }
        bindings_.clear();
    }

    ad::Tape& tape() { return tape_; }
    ParamStore& store() { return ps_; }
    bool train() const { return train_; }

private:
    ad::Tape& tape_;
    ParamStore& ps_;
    bool train_;
    std::vector<std::pair<Param*, ad::Node*>> bindings_;
};

class Adam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double clip = 1.0;  // global-norm gradient clip, <= 0 disables
    std::int64_t t = 0;

    // Updates every parameter accepted by `trainable` using its accumulated
    // gradient; returns the pre-clip global gradient norm.
    double step(ParamStore& ps, double lr, const std::function<bool(const std::string&)>& trainable);
};

// Versioned checkpoint: magic + JSON header + raw little-endian float64 blob.
// The header records shapes, offsets, the config echo/hash and extra state.
void save_checkpoint(const std::string& path, const std::string& kind, const Config& cfg,
                     const ParamStore& ps, const nlohmann::json& extra, bool with_moments);
nlohmann::json load_checkpoint(const std::string& path, ParamStore& ps);

}  // namespace fmanet::nn
