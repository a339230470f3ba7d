#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "fmanetpp/base.hpp"
#include "fmanetpp/config.hpp"
#include "fmanetpp/image_io.hpp"

using namespace fmanet;

TEST_CASE("rng determinism and bounds") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    Rng c(43);
    CHECK(a.next_u64() != c.next_u64());

    Rng d(7);
    auto st = d.state();
    double v1 = d.uniform();
    d.set_state(st);
    CHECK(d.uniform() == v1);
}

TEST_CASE("config parse, nesting, hash") {
    const std::string text =
        "# comment\n"
        "top = 1\n"
        "[data]\n"
        "scenes = 12\n"
        "hr_size = 128  ; inline comment\n"
        "[train.adam]\n"
        "lr = 2e-4\n";
    Config c = Config::parse(text);
    CHECK(c.get_int("top") == 1);
    CHECK(c.get_int("data.scenes") == 12);
    CHECK(c.get_int("data.hr_size") == 128);
    CHECK(c.get_double("train.adam.lr") == doctest::Approx(2e-4));
    CHECK(c.get_int("missing", 5) == 5);
    CHECK_THROWS_AS(c.get_int("nope"), std::invalid_argument);

    Config c2 = Config::parse("[data]\nscenes=12\nhr_size=128\n[train.adam]\nlr=2e-4\ntop=1\n");
    // different comments/ordering, same pairs -> same hash
    Config c3 = Config::parse("top=1\n[data]\nhr_size = 128\nscenes = 12\n[train.adam]\nlr = 2e-4\n");
    CHECK(c.hash() == c3.hash());
    CHECK(c.hash() != Config::parse("top=2\n").hash());
    (void)c2;
}

TEST_CASE("png round trip is exact at 8 bits") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "fmanetpp_test_io";
    fs::create_directories(dir);
    Rng rng(5);
    Tensor img(Shape{9, 7, 3});
    for (auto& v : img.v) v = std::round(rng.uniform() * 255.0) / 255.0;
    const std::string p = (dir / "t.png").string();
    io::write_png(p, img);
    Tensor back = io::read_png(p);
    REQUIRE(back.shape == img.shape);
    for (size_t i = 0; i < img.v.size(); ++i) CHECK(back.v[i] == doctest::Approx(img.v[i]).epsilon(1e-12));
}

TEST_CASE("raw f32 round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "fmanetpp_test_io";
    fs::create_directories(dir);
    Rng rng(6);
    Tensor t(Shape{4, 5, 2});
    for (auto& v : t.v) v = rng.uniform(-3, 3);
    const std::string p = (dir / "t.raw").string();
    io::write_raw_f32(p, t);
    Tensor back = io::read_raw_f32(p);
    REQUIRE(back.shape == t.shape);
    for (size_t i = 0; i < t.v.size(); ++i)
        CHECK(back.v[i] == doctest::Approx(t.v[i]).epsilon(1e-6));
}

TEST_CASE("parallel_for covers every index once") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, [&](int i) { hits[i] += 1; }, 4);
    for (int h : hits) CHECK(h == 1);
}
