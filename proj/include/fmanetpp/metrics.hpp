#pragma once

#include <vector>

#include "fmanetpp/base.hpp"

namespace fmanet::metrics {

// 10*log10(1 / MSE) over all elements, inputs in [0,1]; capped at 99 dB so
// identical inputs stay finite under aggregation.
double psnr(const Tensor& a, const Tensor& b);
double psnr(const std::vector<Tensor>& a, const std::vector<Tensor>& b);  // pooled MSE

// Mean local SSIM over 11-tap Gaussian windows (sigma 1.5), valid region
// only, on luma; k1/k2 are the reference constants.
double ssim(const Tensor& a, const Tensor& b, int window = 11, double k1 = 0.01, double k2 = 0.03);
double ssim(const std::vector<Tensor>& a, const std::vector<Tensor>& b);  // frame mean

Tensor to_gray(const Tensor& rgb);  // H x W luma (Rec.601 weights)

struct PyramidFlowConfig {
    int levels = 3;
    int radius = 4;         // integer search radius at the coarsest level
    int refine_radius = 2;  // search radius at finer levels
    int block_radius = 3;   // SAD window radius
    int iterations = 1;
};

// Deterministic coarse-to-fine block matching with parabolic sub-pixel
// refinement. Inputs are rank-2 grayscale; output is H x W x 2.
Tensor pyramid_flow(const Tensor& a, const Tensor& b, const PyramidFlowConfig& cfg = {});

// Temporal optical-flow consistency: mean absolute per-component difference
// between flows of consecutive restored frames and of the reference frames.
double tof(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
           const PyramidFlowConfig& cfg = {});

}  // namespace fmanet::metrics
