#pragma once

#include <string>
#include <vector>

#include "fmanetpp/config.hpp"
#include "fmanetpp/dataset.hpp"
#include "fmanetpp/params.hpp"
#include "fmanetpp/tape.hpp"

namespace fmanet::ete {

struct EteConfig {
    int c_e = 64;              // embedding width
    double temperature = 0.5;  // alpha in the contrastive loss
    int batch = 60;            // divisible by 5, >= 10
    int steps = 1000;
    double lr = 1e-3;
    std::uint64_t seed = 7;

    static EteConfig from_config(const Config& cfg);
};

// Strided conv encoder, parameters under "ete.". Far smaller than the
// ResNet-18 the full-scale setup uses; the interface hides the backbone.
void build(nn::ParamStore& ps, Rng& rng, int c_e);

// Single LR RGB frame -> row vector {1, c_e} with unit L2 norm.
ad::Var forward(nn::Ctx& ctx, ad::Var frame, bool trainable);

// Stacks per-frame embeddings into {B, c_e} on one tape.
ad::Var embed_batch(nn::Ctx& ctx, const std::vector<ad::Var>& frames, bool trainable);

// Supervised contrastive loss over a batch of unit embeddings; anchors whose
// class has no other member contribute zero (zero_pos_out counts them).
ad::Var supcon_loss(ad::Var embeddings, const std::vector<int>& labels, double temperature,
                    int* zero_pos_out = nullptr);

// Plain-value embedding of one frame (no tape bookkeeping kept).
Tensor embed_frame(nn::ParamStore& ps, const Tensor& frame);

struct PretrainResult {
    std::vector<double> loss_history;
    Tensor centroids;  // 5 x c_e, unit rows, exposure levels 1..5
    double train_accuracy = 0;
};

// Stage-1 training on a constant-level dataset; freezes nothing itself, the
// caller simply stops updating "ete." parameters afterwards.
PretrainResult pretrain(const data::Dataset& train, const EteConfig& cfg, nn::ParamStore& ps);

Tensor compute_centroids(const data::Dataset& ds, nn::ParamStore& ps, int c_e);
double nearest_centroid_accuracy(const data::Dataset& ds, nn::ParamStore& ps, const Tensor& centroids);

}  // namespace fmanet::ete
