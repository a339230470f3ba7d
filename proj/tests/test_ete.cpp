#include <doctest.h>

#include <cmath>

#include "fmanetpp/ete.hpp"
#include "testutil.hpp"

using namespace fmanet;
using namespace fmanet::ad;
using namespace fmanet::ete;

namespace {

// Direct scalar transcription of the contrastive loss definition, fully
// independent of the tape implementation.
double supcon_oracle(const Tensor& e, const std::vector<int>& labels, double alpha) {
    const int b = e.shape[0], c = e.shape[1];
    auto dot = [&](int i, int j) {
        double acc = 0;
        for (int k = 0; k < c; ++k)
            acc += e.v[static_cast<size_t>(i) * c + k] * e.v[static_cast<size_t>(j) * c + k];
        return acc;
    };
    double total = 0;
    for (int q = 0; q < b; ++q) {
        std::vector<int> pos;
        for (int p = 0; p < b; ++p)
            if (p != q && labels[p] == labels[q]) pos.push_back(p);
        if (pos.empty()) continue;
        double denom = 0;
        for (int p = 0; p < b; ++p)
            if (p != q) denom += std::exp(dot(q, p) / alpha);
        double acc = 0;
        for (int p : pos) acc += std::log(std::exp(dot(q, p) / alpha) / denom);
        total += -acc / static_cast<double>(pos.size());
    }
    return total;
}

nn::ParamStore build_store(int c_e, unsigned seed) {
    nn::ParamStore ps;
    Rng rng(seed);
    build(ps, rng, c_e);
    return ps;
}

}  // namespace

TEST_CASE("ete forward: unit norm, determinism, channel check") {
    nn::ParamStore ps = build_store(16, 9);
    Rng rng(70);
    Tensor frame = testutil::random_tensor(Shape{12, 12, 3}, rng);

    Tensor e1 = embed_frame(ps, frame);
    Tensor e2 = embed_frame(ps, frame);
    REQUIRE(e1.shape == Shape{1, 16});
    double nrm = 0;
    for (double v : e1.v) nrm += v * v;
    CHECK(std::abs(std::sqrt(nrm) - 1.0) < 1e-5);
    CHECK(testutil::max_abs_diff(e1, e2) == 0.0);

    Tape t;
    nn::Ctx ctx(t, ps, false);
    Tensor bad(Shape{12, 12, 2});
    CHECK_THROWS_AS(forward(ctx, ctx.c(bad), false), std::invalid_argument);
}

TEST_CASE("supcon: identical embeddings give B log(B-1)") {
    const int b = 6, c = 4;
    Tensor e(Shape{b, c});
    for (int i = 0; i < b; ++i) e.v[static_cast<size_t>(i) * c + 1] = 1.0;
    std::vector<int> labels = {1, 1, 2, 2, 3, 3};
    Tape t;
    Var loss = supcon_loss(t.leaf(e, false), labels, 0.5);
    CHECK(loss.scalar() == doctest::Approx(b * std::log(b - 1.0)).epsilon(1e-12));
}

TEST_CASE("supcon: hand-built 2-d example matches the independent transcription") {
    Tensor e(Shape{4, 2});
    const double entries[4][2] = {{1, 0}, {0.8, 0.6}, {0, 1}, {-0.6, 0.8}};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) e.v[static_cast<size_t>(i) * 2 + j] = entries[i][j];
    std::vector<int> labels = {1, 1, 2, 2};
    Tape t;
    Var loss = supcon_loss(t.leaf(e, false), labels, 0.5);
    CHECK(std::abs(loss.scalar() - supcon_oracle(e, labels, 0.5)) <= 1e-8);
}

TEST_CASE("supcon: random batches match the oracle and permute invariantly") {
    for (unsigned seed = 0; seed < 10; ++seed) {
        Rng rng(700 + seed);
        const int b = 8, c = 5;
        Tensor e = testutil::random_tensor(Shape{b, c}, rng, -1, 1);
        std::vector<int> labels;
        for (int i = 0; i < b; ++i) labels.push_back(1 + rng.uniform_int(3));
        Tape t;
        Var loss = supcon_loss(t.leaf(e, false), labels, 0.5);
        CHECK(std::abs(loss.scalar() - supcon_oracle(e, labels, 0.5)) <= 1e-8);

        // permute the batch
        std::vector<int> perm(b);
        for (int i = 0; i < b; ++i) perm[i] = (i * 3 + 1) % b;
        Tensor ep(e.shape);
        std::vector<int> lp(b);
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < c; ++j)
                ep.v[static_cast<size_t>(i) * c + j] = e.v[static_cast<size_t>(perm[i]) * c + j];
            lp[i] = labels[perm[i]];
        }
        Var loss_p = supcon_loss(t.leaf(ep, false), lp, 0.5);
        CHECK(loss_p.scalar() == doctest::Approx(loss.scalar()).epsilon(1e-12));
    }
}

TEST_CASE("supcon: invariant under joint orthogonal rotation") {
    Rng rng(71);
    const int b = 7, c = 4;
    Tensor e = testutil::random_tensor(Shape{b, c}, rng, -1, 1);
    std::vector<int> labels = {1, 2, 1, 3, 2, 3, 1};

    // Gram-Schmidt a random orthogonal matrix
    double q[4][4];
    for (auto& row : q)
        for (auto& v : row) v = rng.normal();
    for (int i = 0; i < c; ++i) {
        for (int j = 0; j < i; ++j) {
            double d = 0;
            for (int k = 0; k < c; ++k) d += q[i][k] * q[j][k];
            for (int k = 0; k < c; ++k) q[i][k] -= d * q[j][k];
        }
        double nrm = 0;
        for (int k = 0; k < c; ++k) nrm += q[i][k] * q[i][k];
        nrm = std::sqrt(nrm);
        for (int k = 0; k < c; ++k) q[i][k] /= nrm;
    }
    Tensor er(e.shape);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0;
            for (int k = 0; k < c; ++k) acc += e.v[static_cast<size_t>(i) * c + k] * q[j][k];
            er.v[static_cast<size_t>(i) * c + j] = acc;
        }
    Tape t;
    double a = supcon_loss(t.leaf(e, false), labels, 0.5).scalar();
    double r = supcon_loss(t.leaf(er, false), labels, 0.5).scalar();
    CHECK(a == doctest::Approx(r).epsilon(1e-10));
}

TEST_CASE("supcon: gradient matches finite differences") {
    Rng rng(72);
    Tensor e = testutil::random_tensor(Shape{6, 4}, rng, -1, 1);
    std::vector<int> labels = {1, 1, 2, 2, 1, 2};
    CHECK(testutil::gradcheck(
              [&labels](Tape&, std::vector<Var>& v) { return supcon_loss(v[0], labels, 0.5); },
              {e}) < 1e-4);
}

TEST_CASE("supcon: anchors without positives contribute zero") {
    Rng rng(73);
    Tensor e = testutil::random_tensor(Shape{5, 3}, rng, -1, 1);
    std::vector<int> labels = {1, 1, 2, 2, 3};  // label 3 is a singleton
    Tape t;
    int zero_pos = -1;
    Var loss = supcon_loss(t.leaf(e, false), labels, 0.5, &zero_pos);
    CHECK(zero_pos == 1);
    CHECK(std::abs(loss.scalar() - supcon_oracle(e, labels, 0.5)) <= 1e-8);

    // batch preconditions
    Tensor single(Shape{1, 3});
    CHECK_THROWS_AS(supcon_loss(t.leaf(single, false), {1}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(supcon_loss(t.leaf(e, false), labels, 0.0), std::invalid_argument);
}

TEST_CASE("ete pretraining reduces the loss on a separable toy set") {
    // in-memory dataset: exposure level sets the texture contrast
    data::Dataset ds;
    Rng rng(74);
    for (int lvl = 1; lvl <= 5; ++lvl)
        for (int s = 0; s < 2; ++s) {
            data::Sample smp;
            smp.id = "toy";
            smp.t = 4;
            smp.constant_level = true;
            smp.level = lvl;
            smp.levels.assign(4, lvl);
            for (int f = 0; f < 4; ++f) {
                Tensor frame(Shape{12, 12, 3});
                for (auto& v : frame.v) v = 0.5 + (0.05 + 0.09 * lvl) * (rng.uniform() - 0.5);
                smp.lr.emplace_back(frame);
            }
            ds.samples.push_back(std::move(smp));
        }

    EteConfig cfg;
    cfg.c_e = 8;
    cfg.batch = 10;
    cfg.steps = 40;
    cfg.lr = 5e-3;
    cfg.seed = 11;

    nn::ParamStore ps = build_store(cfg.c_e, 75);
    PretrainResult res = pretrain(ds, cfg, ps);
    REQUIRE(res.loss_history.size() == 40);
    CHECK(res.loss_history.back() < res.loss_history.front());
    REQUIRE(res.centroids.shape == Shape{5, 8});
}
