#include "fmanetpp/ete.hpp"

#include <cmath>
#include <cstdio>

namespace fmanet::ete {

using namespace fmanet::ad;
using nn::Ctx;
using nn::init_conv;
using nn::init_linear;
using nn::ParamStore;

EteConfig EteConfig::from_config(const Config& cfg) {
    EteConfig e;
    e.c_e = static_cast<int>(cfg.get_int("ete.c_e", e.c_e));
    e.temperature = cfg.get_double("ete.temperature", e.temperature);
    e.batch = static_cast<int>(cfg.get_int("ete.batch", e.batch));
    e.steps = static_cast<int>(cfg.get_int("ete.steps", e.steps));
    e.lr = cfg.get_double("ete.lr", e.lr);
    e.seed = static_cast<std::uint64_t>(cfg.get_int("ete.seed", static_cast<long>(e.seed)));
    if (e.temperature <= 0) throw std::invalid_argument("ete: temperature must be positive");
    if (e.batch % 5 != 0 || e.batch < 10)
        throw std::invalid_argument("ete: batch must be a multiple of 5 and >= 10");
    return e;
}

namespace {
constexpr int kStages = 4;
const int kChannels[kStages + 1] = {3, 24, 48, 64, 64};
}  // namespace

void build(ParamStore& ps, Rng& rng, int c_e) {
    for (int i = 0; i < kStages; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "ete.conv%d.w", i);
        init_conv(ps.create(name, Shape{3, 3, kChannels[i], kChannels[i + 1]}).value, rng);
        std::snprintf(name, sizeof(name), "ete.conv%d.b", i);
        ps.create(name, Shape{kChannels[i + 1]});
    }
    init_linear(ps.create("ete.fc1.w", Shape{kChannels[kStages], kChannels[kStages]}).value, rng);
    ps.create("ete.fc1.b", Shape{kChannels[kStages]});
    init_linear(ps.create("ete.fc2.w", Shape{kChannels[kStages], c_e}).value, rng);
    ps.create("ete.fc2.b", Shape{c_e});
}

Var forward(Ctx& ctx, Var frame, bool trainable) {
    if (frame.shape().rank() != 3 || frame.shape()[2] != 3)
        throw std::invalid_argument("ete: expected an H x W x 3 RGB frame, got " +
                                    frame.shape().str());
    Var x = add_scalar(frame, -0.5);
    for (int i = 0; i < kStages; ++i) {
        char w[64], b[64];
        std::snprintf(w, sizeof(w), "ete.conv%d.w", i);
        std::snprintf(b, sizeof(b), "ete.conv%d.b", i);
        x = lrelu(conv2d(x, ctx.p(w, trainable), ctx.p(b, trainable), 2, 1), 0.1);
    }
    Var pooled = reshape(mean_hw(x), Shape{1, kChannels[kStages]});
    Var h = lrelu(linear(pooled, ctx.p("ete.fc1.w", trainable), ctx.p("ete.fc1.b", trainable)), 0.1);
    Var e = linear(h, ctx.p("ete.fc2.w", trainable), ctx.p("ete.fc2.b", trainable));
    return l2_normalize_rows(e);
}

Var embed_batch(Ctx& ctx, const std::vector<Var>& frames, bool trainable) {
    std::vector<Var> rows;
    rows.reserve(frames.size());
    for (Var f : frames) rows.push_back(forward(ctx, f, trainable));
    return concat_rows(rows);
}

Var supcon_loss(Var embeddings, const std::vector<int>& labels, double temperature,
                int* zero_pos_out) {
    if (embeddings.shape().rank() != 2)
        throw std::invalid_argument("supcon_loss: embeddings must be B x C");
    const int b = embeddings.shape()[0];
    if (b < 2) throw std::invalid_argument("supcon_loss: batch must be >= 2");
    if (static_cast<int>(labels.size()) != b)
        throw std::invalid_argument("supcon_loss: label count mismatch");
    if (temperature <= 0) throw std::invalid_argument("supcon_loss: temperature must be positive");

    Var sims = scale(matmul(embeddings, embeddings, false, true), 1.0 / temperature);

    std::vector<unsigned char> offdiag(static_cast<size_t>(b) * b, 1);
    for (int i = 0; i < b; ++i) offdiag[static_cast<size_t>(i) * b + i] = 0;
    Var lse = rows_logsumexp_masked(sims, offdiag);

    Tensor anchor_w(Shape{b});
    Tensor pos_w(Shape{b, b});
    int zero_pos = 0;
    for (int q = 0; q < b; ++q) {
        int npos = 0;
        for (int p = 0; p < b; ++p)
            if (p != q && labels[p] == labels[q]) ++npos;
        if (npos == 0) {
            ++zero_pos;
            continue;
        }
        anchor_w.v[q] = 1.0;
        for (int p = 0; p < b; ++p)
            if (p != q && labels[p] == labels[q])
                pos_w.v[static_cast<size_t>(q) * b + p] = 1.0 / npos;
    }
    if (zero_pos_out) *zero_pos_out = zero_pos;
    if (zero_pos > 0)
        std::fprintf(stderr, "supcon_loss: %d anchor(s) without positives contribute zero\n",
                     zero_pos);
    return sub(dot_const(lse, anchor_w), dot_const(sims, pos_w));
}

Tensor embed_frame(ParamStore& ps, const Tensor& frame) {
    Tape tape(false);
    Ctx ctx(tape, ps, false);
    Var e = forward(ctx, ctx.c(frame), false);
    return e.tensor();
}

namespace {

struct FrameRef {
    int sample, frame;
};

std::vector<std::vector<FrameRef>> frames_by_level(const data::Dataset& ds) {
    std::vector<std::vector<FrameRef>> by_level(6);
    for (size_t si = 0; si < ds.samples.size(); ++si) {
        const auto& s = ds.samples[si];
        if (!s.constant_level)
            throw std::invalid_argument("ete: dataset lacks constant exposure-level labels");
        for (int f = 0; f < s.t; ++f) by_level[s.level].push_back({static_cast<int>(si), f});
    }
    for (int lvl = 1; lvl <= 5; ++lvl)
        if (by_level[lvl].empty())
            throw std::invalid_argument("ete: level " + std::to_string(lvl) + " has no frames");
    return by_level;
}

}  // namespace

PretrainResult pretrain(const data::Dataset& train, const EteConfig& cfg, ParamStore& ps) {
    auto by_level = frames_by_level(train);
    Rng rng(cfg.seed);
    nn::Adam adam;
    adam.clip = 1.0;
    const int per = cfg.batch / 5;

    PretrainResult res;
    auto trainable = [](const std::string& n) { return n.rfind("ete.", 0) == 0; };
    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Ctx ctx(tape, ps, true);
        std::vector<Var> frames;
        std::vector<int> labels;
        for (int lvl = 1; lvl <= 5; ++lvl)
            for (int k = 0; k < per; ++k) {
                const auto& pool = by_level[lvl];
                const FrameRef ref = pool[rng.uniform_int(static_cast<int>(pool.size()))];
                frames.push_back(ctx.c(train.samples[ref.sample].lr[ref.frame].to_tensor()));
                labels.push_back(lvl);
            }
        Var emb = embed_batch(ctx, frames, true);
        Var loss = supcon_loss(emb, labels, cfg.temperature);
        res.loss_history.push_back(loss.scalar());
        ps.zero_grad();
        tape.backward(loss);
        ctx.harvest();
        adam.step(ps, cfg.lr, trainable);
    }

    res.centroids = compute_centroids(train, ps, cfg.c_e);
    res.train_accuracy = nearest_centroid_accuracy(train, ps, res.centroids);
    return res;
}

Tensor compute_centroids(const data::Dataset& ds, ParamStore& ps, int c_e) {
    auto by_level = frames_by_level(ds);
    Tensor centroids(Shape{5, c_e});
    for (int lvl = 1; lvl <= 5; ++lvl) {
        const auto& pool = by_level[lvl];
        std::vector<Tensor> embs(pool.size());
        parallel_for(static_cast<int>(pool.size()), [&](int i) {
            embs[i] = embed_frame(ps, ds.samples[pool[i].sample].lr[pool[i].frame].to_tensor());
        });
        for (const Tensor& e : embs)
            for (int c = 0; c < c_e; ++c) centroids.v[static_cast<size_t>(lvl - 1) * c_e + c] += e.v[c];
        double nrm = 0;
        for (int c = 0; c < c_e; ++c) {
            const double v = centroids.v[static_cast<size_t>(lvl - 1) * c_e + c];
            nrm += v * v;
        }
        nrm = std::sqrt(std::max(nrm, 1e-12));
        for (int c = 0; c < c_e; ++c) centroids.v[static_cast<size_t>(lvl - 1) * c_e + c] /= nrm;
    }
    return centroids;
}

double nearest_centroid_accuracy(const data::Dataset& ds, ParamStore& ps, const Tensor& centroids) {
    const int c_e = centroids.shape[1];
    std::vector<std::pair<Tensor, int>> items;
    for (const auto& s : ds.samples) {
        if (!s.constant_level)
            throw std::invalid_argument("ete: accuracy needs constant-level labels");
        for (int f = 0; f < s.t; ++f) items.emplace_back(s.lr[f].to_tensor(), s.level);
    }
    std::vector<int> correct(items.size(), 0);
    parallel_for(static_cast<int>(items.size()), [&](int i) {
        Tensor e = embed_frame(ps, items[i].first);
        int best = -1;
        double best_dot = -2;
        for (int lvl = 0; lvl < 5; ++lvl) {
            double d = 0;
            for (int c = 0; c < c_e; ++c) d += e.v[c] * centroids.v[static_cast<size_t>(lvl) * c_e + c];
            if (d > best_dot) {
                best_dot = d;
                best = lvl + 1;
            }
        }
        correct[i] = best == items[i].second ? 1 : 0;
    });
    double acc = 0;
    for (int c : correct) acc += c;
    return items.empty() ? 0.0 : acc / items.size();
}

}  // namespace fmanet::ete
