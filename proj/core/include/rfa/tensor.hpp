#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfa {

/// Error type thrown by every shape or argument check in the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

/// Dense tensor of rank 1..4, 64-bit floats, row-major with the innermost
/// axis last. Rank-4 tensors follow the (batch, channel, height, width)
/// convention: element (n,c,h,w) lives at index ((n*C + c)*H + h)*W + w.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t extent(int64_t axis) const {
        if (axis < 0 || axis >= rank()) extent_error(axis);
        return shape[static_cast<size_t>(axis)];
    }

    // rank-4 accessors
    int64_t n() const { return extent4(0); }
    int64_t c() const { return extent4(1); }
    int64_t h() const { return extent4(2); }
    int64_t w() const { return extent4(3); }

    double& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    // rank-2 accessors
    double& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

private:
    int64_t extent4(int64_t axis) const {
        if (shape.size() != 4) rank4_error();
        return shape[static_cast<size_t>(axis)];
    }
    [[noreturn]] void extent_error(int64_t axis) const;
    [[noreturn]] void rank4_error() const;
};

Tensor zeros(Shape shape);
Tensor full(Shape shape, double value);
Tensor zeros_like(const Tensor& t);

Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<int64_t>& axes);
/// Zero padding of `p` cells on both sides of H and W (rank-4 only).
Tensor pad2d(const Tensor& t, int64_t p);

enum class EwiseOp { add, mul };
/// Elementwise op with broadcasting limited to singleton axes.
Tensor ewise(const Tensor& a, const Tensor& b, EwiseOp op);

enum class ReduceOp { sum, mean, max };
/// Reduce over the given axes, keeping them as extent 1. Summation walks
/// the input in row-major order, so results are bitwise reproducible.
Tensor reduce(const Tensor& t, const std::vector<int64_t>& axes, ReduceOp op);

/// (M x K) by (K x P) product, fixed i/j/k loop order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Deterministic 64-bit generator (splitmix64). The same seed yields the
/// same stream on every run and platform. Normal variates come from
/// Box-Muller applied to two uniform draws, with the second variate cached.
class SeededRng {
public:
    explicit SeededRng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64();
    /// Uniform double in [0, 1).
    double uniform();
    /// Standard normal variate.
    double normal();
    /// Uniform integer in [0, n).
    int64_t uniform_int(int64_t n);

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

Tensor randn(Shape shape, SeededRng& rng);
Tensor rand_uniform(Shape shape, SeededRng& rng);

} // namespace rfa
