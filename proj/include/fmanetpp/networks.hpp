#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "fmanetpp/config.hpp"
#include "fmanetpp/hrbp.hpp"

namespace fmanet::net {

using ad::Var;

struct NetworkConfig {
    int m = 4;       // HRBP blocks per network
    int n = 3;       // flow hypotheses
    int cf = 32;     // feature channels
    int kd = 10;     // degradation kernel tap width
    int s = 4;       // SR scale
    int ce = 64;     // exposure embedding width
    int heads = 4;
    int window = 8;
    int rdb_growth = 16;
    int c_up = 16;   // upsampler channels

    void validate() const;
    static NetworkConfig from_config(const Config& cfg);
    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);

    hrbp::HrbpConfig block_config(bool da) const {
        return hrbp::HrbpConfig{cf, n, heads, window, ce, da};
    }
};

// Creates "netd.*" and "netr.*" parameters (ETE is built separately).
void build(nn::ParamStore& ps, Rng& rng, const NetworkConfig& cfg);

struct DegradationPriors {
    std::vector<Var> f_dm;                    // T x {H,W,cf}, context features F^{D,M}
    std::vector<hrbp::FlowMaskState> fm_dm;   // T, final multi-flow-mask state f^{D,M}
    std::vector<ops::FlowMaskVar> fy_fwd;     // T, HR image flow-mask pairs i -> i+1
    std::vector<ops::FlowMaskVar> fy_bwd;     // T, HR image flow-mask pairs i -> i-1
    std::vector<Var> kernels;                 // T x {3,H,W,kd^2}, simplex-normalized
};

// Degradation prior estimation over a T-frame LR sequence (T >= 2) with
// per-frame exposure embeddings u.
DegradationPriors netd_forward(nn::Ctx& ctx, const NetworkConfig& cfg, const std::vector<Var>& x,
                               const std::vector<Var>& u, bool trainable = true);

struct Restored {
    std::vector<Var> y;      // T x {sH,sW,3}
    std::vector<Var> y_res;  // high-frequency residuals before the bilinear base
};

// Prior-guided restoration; flow-mask state starts from f^{D,M} and DA
// attention queries derive from the estimated kernels.
Restored netr_forward(nn::Ctx& ctx, const NetworkConfig& cfg, const std::vector<Var>& x,
                      const DegradationPriors& priors, const std::vector<Var>& u,
                      bool trainable = true);

// X_hat for every frame per the degradation model; boundary frames replicate
// the missing HR neighbor.
std::vector<Var> reconstruct_from_priors(const NetworkConfig& cfg, const DegradationPriors& priors,
                                         const std::vector<Var>& y_hr);

}  // namespace fmanet::net
