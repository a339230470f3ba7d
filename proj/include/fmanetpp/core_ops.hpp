#pragma once

#include <vector>

#include "fmanetpp/tape.hpp"

namespace fmanet::ops {

using ad::Var;

// One motion hypothesis toward a temporal neighbor. An empty pair marks a
// slot that passes through unwarped (the reference frame in Eq.-style
// filtering, or a replicated boundary neighbor).
struct FlowMaskVar {
    Var flow;  // H x W x 2, channel 0 horizontal, channel 1 vertical, pixels
    Var mask;  // H x W x 1 in [0,1]
    bool has() const { return flow.defined(); }
};

// Bilinear backward warp: out(p) = frame sampled at p + flow(p), edge
// replication outside the frame. Differentiable in frame values and flow.
Var backward_warp(Var frame, Var flow);

// mask * backward_warp(frame, flow), mask broadcast over channels.
Var occlusion_warp(Var frame, Var flow, Var mask);

// Flow-guided dynamic filtering with stride. neighbors[t] is warped through
// fm[t] when present; kernels is T x Ho x Wo x m^2 with Ho = H/stride. The
// m x m tap grid is anchored at p*stride + (stride-1)/2 with offsets starting
// at -floor((m-1)/2); out-of-bounds taps clamp to the frame edge.
Var fgdf_apply(const std::vector<Var>& neighbors, const std::vector<FlowMaskVar>& fm, Var kernels,
               int stride);

// Blurry-LR reconstruction from a sharp HR triplet: fgdf_apply with the
// center frame unwarped and the outer frames occlusion-warped.
Var reconstruct_blurry_lr(Var kernels, Var y_prev, Var y_cur, Var y_next, const FlowMaskVar& fm_prev,
                          const FlowMaskVar& fm_next, int stride);

}  // namespace fmanet::ops
