#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmanet {

// Row-major dense shape, rank <= 4. Frames are H x W x C, videos T x H x W x C,
// kernel fields T x H x W x m^2.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<int> dims) {
        if (dims.size() > 4) throw std::invalid_argument("Shape: rank > 4");
        for (int d : dims) dims_[rank_++] = d;
    }
    static Shape of(const std::vector<int>& dims) {
        Shape s;
        if (dims.size() > 4) throw std::invalid_argument("Shape: rank > 4");
        for (int d : dims) s.dims_[s.rank_++] = d;
        return s;
    }

    int rank() const { return rank_; }
    int dim(int i) const { return dims_[i]; }
    int operator[](int i) const { return dims_[i]; }

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (int i = 0; i < rank_; ++i) n *= dims_[i];
        return n;
    }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (int i = 0; i < rank_; ++i)
            if (dims_[i] != o.dims_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < rank_; ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + ")";
    }

private:
    std::array<int, 4> dims_{1, 1, 1, 1};
    int rank_ = 0;
};

// Plain dense tensor of doubles. The autograd tape has its own node storage;
// Tensor is the value type used at module boundaries and in eval paths.
struct Tensor {
    Shape shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(s), v(static_cast<size_t>(s.numel()), fill) {}
    Tensor(Shape s, std::vector<double> data) : shape(s), v(std::move(data)) {
        if (static_cast<std::int64_t>(v.size()) != shape.numel())
            throw std::invalid_argument("Tensor: data size does not match shape " + shape.str());
    }

    std::int64_t numel() const { return shape.numel(); }

    // H x W x C accessors (rank-3).
    double& at(int y, int x, int c) {
        return v[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
    }
    double at(int y, int x, int c) const {
        return v[(static_cast<size_t>(y) * shape[1] + x) * shape[2] + c];
    }
    // Rank-4 accessor.
    double& at(int t, int y, int x, int c) {
        return v[((static_cast<size_t>(t) * shape[1] + y) * shape[2] + x) * shape[3] + c];
    }
    double at(int t, int y, int x, int c) const {
        return v[((static_cast<size_t>(t) * shape[1] + y) * shape[2] + x) * shape[3] + c];
    }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
};

// xoshiro256** with splitmix64 seeding. Self-contained so that sequences are
// reproducible across platforms and serializable into checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            si = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }
    // Box-Muller without cached spare so the state stays 4 words.
    double normal() {
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

private:
    std::array<std::uint64_t, 4> s_{};
};

// FNV-1a over raw bytes; used for config hashes and parameter checksums.
inline std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t checksum(const std::vector<double>& v, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(v.data(), v.size() * sizeof(double), h);
}

std::string hex64(std::uint64_t v);

// Static-partition parallel map; deterministic because each index writes only
// its own outputs. nthreads <= 0 picks the configured global default.
void parallel_for(int n, const std::function<void(int)>& fn, int nthreads = 0);
int default_threads();
void set_default_threads(int n);

}  // namespace fmanet
