#include <doctest.h>

#include "fmanetpp/tape.hpp"
#include "testutil.hpp"

using namespace fmanet;
using namespace fmanet::ad;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {
constexpr double kGradTol = 1e-4;
}

TEST_CASE("elementwise ops gradcheck") {
    Rng rng(11);
    Tensor a = random_tensor(Shape{3, 4}, rng, -1, 1);
    Tensor b = random_tensor(Shape{3, 4}, rng, -1, 1);

    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(mul(add(v[0], v[1]), v[0])); }, {a, b}) <
          kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sub(sqr(v[0]), scale(v[1], 0.7))); },
                    {a, b}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sigmoid(v[0])); }, {a}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(gelu(v[0])); }, {a}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(lrelu(v[0], 0.1)); }, {a}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return mean_all(add_scalar(v[0], 2.0)); }, {a}) <
          kGradTol);
}

TEST_CASE("l1 matches manual value and gradchecks") {
    Rng rng(12);
    Tensor a = random_tensor(Shape{5, 3}, rng);
    Tensor b = random_tensor(Shape{5, 3}, rng);
    Tape t;
    Var la = t.leaf(a, false), lb = t.leaf(b, false);
    double manual = 0;
    for (size_t i = 0; i < a.v.size(); ++i) manual += std::abs(a.v[i] - b.v[i]);
    manual /= a.v.size();
    CHECK(l1(la, lb).scalar() == doctest::Approx(manual).epsilon(1e-12));
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return l1(v[0], v[1]); }, {a, b}) < kGradTol);
}

TEST_CASE("matmul all transpose combinations gradcheck") {
    Rng rng(13);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            Tensor A = ta ? random_tensor(Shape{4, 3}, rng, -1, 1) : random_tensor(Shape{3, 4}, rng, -1, 1);
            Tensor B = tb ? random_tensor(Shape{5, 4}, rng, -1, 1) : random_tensor(Shape{4, 5}, rng, -1, 1);
            CHECK(gradcheck(
                      [ta, tb](Tape&, std::vector<Var>& v) { return sum(sqr(matmul(v[0], v[1], ta, tb))); },
                      {A, B}) < kGradTol);
        }
}

TEST_CASE("conv2d matches direct loop and gradchecks") {
    Rng rng(14);
    Tensor x = random_tensor(Shape{5, 6, 3}, rng, -1, 1);
    Tensor w = random_tensor(Shape{3, 3, 3, 4}, rng, -0.5, 0.5);
    Tensor b = random_tensor(Shape{4}, rng, -0.5, 0.5);

    Tape t;
    Var out = conv2d(t.leaf(x, false), t.leaf(w, false), t.leaf(b, false), 1, 1);
    REQUIRE(out.shape() == Shape{5, 6, 4});
    // direct dense loop
    for (int oy = 0; oy < 5; ++oy)
        for (int ox = 0; ox < 6; ++ox)
            for (int co = 0; co < 4; ++co) {
                double acc = b.v[co];
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx)
                        for (int ci = 0; ci < 3; ++ci) {
                            int iy = oy - 1 + ky, ix = ox - 1 + kx;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                            acc += x.at(iy, ix, ci) * w.at(ky, kx, ci, co);
                        }
                CHECK(out.val()[(static_cast<size_t>(oy) * 6 + ox) * 4 + co] ==
                      doctest::Approx(acc).epsilon(1e-12));
            }

    CHECK(gradcheck(
              [](Tape&, std::vector<Var>& v) { return sum(sqr(conv2d(v[0], v[1], v[2], 1, 1))); },
              {x, w, b}) < kGradTol);

    // strided, no pad
    CHECK(gradcheck(
              [](Tape&, std::vector<Var>& v) { return sum(sqr(conv2d(v[0], v[1], v[2], 2, 1))); },
              {random_tensor(Shape{6, 6, 2}, rng, -1, 1), random_tensor(Shape{3, 3, 2, 3}, rng, -1, 1),
               random_tensor(Shape{3}, rng, -1, 1)}) < kGradTol);
}

TEST_CASE("structure ops gradcheck") {
    Rng rng(15);
    Tensor a = random_tensor(Shape{4, 3, 2}, rng, -1, 1);
    Tensor b = random_tensor(Shape{4, 3, 3}, rng, -1, 1);
    CHECK(gradcheck(
              [](Tape&, std::vector<Var>& v) {
                  return sum(sqr(slice_last(concat_last({v[0], v[1]}), 1, 4)));
              },
              {a, b}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(reshape(v[0], Shape{6, 4}))); }, {a}) <
          kGradTol);
    CHECK(gradcheck(
              [](Tape&, std::vector<Var>& v) {
                  return sum(sqr(gather_rows(reshape(v[0], Shape{12, 2}), {0, 5, 5, 11, 3})));
              },
              {a}) < kGradTol);

    Tensor ps = random_tensor(Shape{2, 3, 8}, rng, -1, 1);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(pixel_shuffle(v[0], 2))); }, {ps}) <
          kGradTol);

    Tensor up = random_tensor(Shape{3, 4, 2}, rng, -1, 1);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(bilinear_upsample(v[0], 2))); }, {up}) <
          kGradTol);
}

TEST_CASE("pixel_shuffle layout") {
    // channel c*r^2 + dy*r + dx lands at output (y*r+dy, x*r+dx, c)
    Tape t;
    Tensor x(Shape{1, 1, 8});
    for (int i = 0; i < 8; ++i) x.v[i] = i;
    Var y = pixel_shuffle(t.leaf(x, false), 2);
    REQUIRE(y.shape() == Shape{2, 2, 2});
    CHECK(y.val()[0] == 0);  // (0,0,c=0) <- ch 0
    CHECK(y.val()[1] == 4);  // (0,0,c=1) <- ch 4
    CHECK(y.val()[2] == 1);  // (0,1,c=0) <- ch 1
    CHECK(y.val()[6] == 3);  // (1,1,c=0) <- ch 3
}

TEST_CASE("norm, softmax, attention-style ops gradcheck") {
    Rng rng(16);
    Tensor x = random_tensor(Shape{5, 6}, rng, -2, 2);
    Tensor g = random_tensor(Shape{6}, rng, 0.5, 1.5);
    Tensor be = random_tensor(Shape{6}, rng, -0.5, 0.5);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(layer_norm(v[0], v[1], v[2]))); },
                    {x, g, be}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(softmax_rows_scaled(v[0], 0.7))); },
                    {x}) < kGradTol);

    std::vector<unsigned char> mask(5 * 6, 1);
    for (int r = 0; r < 5; ++r) mask[r * 6 + r] = 0;  // drop one entry per row
    CHECK(gradcheck(
              [&mask](Tape&, std::vector<Var>& v) { return sum(rows_logsumexp_masked(v[0], mask)); },
              {x}) < kGradTol);

    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(l2_normalize_rows(v[0]))); }, {x}) <
          kGradTol);

    Tensor hx = random_tensor(Shape{3, 4, 5}, rng, -1, 1);
    Tensor al = random_tensor(Shape{5}, rng, -0.5, 0.5);
    Tensor bt = random_tensor(Shape{5}, rng, -0.5, 0.5);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(channel_affine(v[0], v[1], v[2]))); },
                    {hx, al, bt}) < kGradTol);
    CHECK(gradcheck([](Tape&, std::vector<Var>& v) { return sum(sqr(mean_hw(v[0]))); }, {hx}) < kGradTol);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(17);
    Tensor x = random_tensor(Shape{7, 9}, rng, -3, 3);
    Tape t;
    Var y = softmax_rows(t.leaf(x, false));
    for (int r = 0; r < 7; ++r) {
        double s = 0;
        for (int c = 0; c < 9; ++c) s += y.val()[r * 9 + c];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("linear with bias gradcheck") {
    Rng rng(18);
    CHECK(gradcheck(
              [](Tape&, std::vector<Var>& v) { return sum(sqr(linear(v[0], v[1], v[2]))); },
              {random_tensor(Shape{4, 3}, rng, -1, 1), random_tensor(Shape{3, 5}, rng, -1, 1),
               random_tensor(Shape{5}, rng, -1, 1)}) < kGradTol);
}

TEST_CASE("shape mismatch raises") {
    Tape t;
    Tensor a(Shape{2, 3}), b(Shape{3, 2});
    CHECK_THROWS_AS(add(t.leaf(a, false), t.leaf(b, false)), std::invalid_argument);
    CHECK_THROWS_AS(matmul(t.leaf(a, false), t.leaf(a, false)), std::invalid_argument);
}

TEST_CASE("backward frees intermediate buffers but keeps leaves") {
    Rng rng(19);
    Tensor a = random_tensor(Shape{3, 3}, rng);
    Tape t;
    Var la = t.leaf(a, true);
    Var mid = sqr(la);
    Var loss = sum(mid);
    t.backward(loss);
    CHECK(la.grad().size() == a.v.size());
    CHECK(mid.node()->val.empty());
}
