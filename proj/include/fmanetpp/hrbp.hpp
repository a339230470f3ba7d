#pragma once

#include <string>
#include <utility>

#include "fmanetpp/core_ops.hpp"
#include "fmanetpp/params.hpp"
#include "fmanetpp/tape.hpp"

namespace fmanet::hrbp {

using ad::Var;

struct HrbpConfig {
    int cf = 32;     // feature channels
    int n = 3;       // flow hypotheses per direction
    int heads = 4;   // attention heads (cf divisible by heads)
    int window = 8;  // attention window, 0 = global
    int ce = 64;     // exposure embedding width
    bool da = false; // degradation-aware cross attention (restoration side)
};

// Per-frame motion state: n hypotheses toward each neighbor. Flows are raw
// channels [fwd hyp0 (fx,fy), ..., bwd hyp0 (fx,fy), ...]; masks live in
// logit space so residual updates keep them in [0,1].
struct FlowMaskState {
    Var flows;   // H x W x 4n
    Var logits;  // H x W x 2n, mask = sigmoid(logit)
};

// No initial motion, full visibility (up to sigmoid saturation).
FlowMaskState init_state(ad::Tape& tape, int h, int w, int n);

// Parameters for one block under `prefix` (e.g. "netd.b0.").
void build(nn::ParamStore& ps, Rng& rng, const std::string& prefix, const HrbpConfig& cfg);

// Occlusion-aware fusion of the warped neighbors with the current feature.
// Undefined neighbors (sequence boundaries) are replaced by the current frame
// with zero flow and full visibility.
Var fuse_neighbors(nn::Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg, Var f_prev,
                   Var f_cur, Var f_next, const FlowMaskState& state, bool trainable = true);

// Residual multi-flow-mask update from the fused feature.
FlowMaskState update_flow_masks(nn::Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg,
                                const FlowMaskState& state, Var ftilde, bool trainable = true);

// Windowed multi-head self-attention, optional degradation-aware cross
// attention, then a feed-forward sublayer; residual connections throughout.
Var multi_attention(nn::Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg, Var ftilde,
                    Var kernel_feature = Var(), bool trainable = true);

// Channel-wise affine modulation (1 + alpha) * F + beta from the exposure
// embedding u (shape {1, ce}).
Var etm_modulate(nn::Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg, Var fhat, Var u,
                 bool trainable = true);

// One refinement step: fuse -> flow-mask update -> attention -> ETM.
std::pair<Var, FlowMaskState> step(nn::Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg,
                                   Var f_prev, Var f_cur, Var f_next, const FlowMaskState& state,
                                   Var u, Var kernel_feature = Var(), bool trainable = true);

// softmax(Q K^T / sqrt(d)) V on row matrices; the attention primitive.
Var attention_core(Var q, Var k, Var v);

}  // namespace fmanet::hrbp
