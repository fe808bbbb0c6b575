#include "rfa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace rfa {

void fail(const std::string& msg) { throw Error(msg); }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

static int64_t shape_numel(const Shape& s) {
    check(!s.empty() && s.size() <= 4, "tensor rank must be 1..4, got shape " + shape_str(s));
    int64_t n = 1;
    for (int64_t e : s) {
        check(e >= 1, "all extents must be >= 1, got shape " + shape_str(s));
        n *= e;
    }
    return n;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    check(shape_numel(shape) == static_cast<int64_t>(data.size()),
          "data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
}

void Tensor::extent_error(int64_t axis) const {
    fail("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
}

void Tensor::rank4_error() const { fail("rank-4 accessor on shape " + shape_str(shape)); }

Tensor zeros(Shape shape) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor full(Shape shape, double value) {
    int64_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor zeros_like(const Tensor& t) { return zeros(t.shape); }

Tensor reshape(const Tensor& t, Shape shape) {
    check(shape_numel(shape) == t.numel(),
          "cannot reshape " + shape_str(t.shape) + " to " + shape_str(shape));
    return Tensor(std::move(shape), t.data);
}

Tensor permute(const Tensor& t, const std::vector<int64_t>& axes) {
    int64_t r = t.rank();
    check(static_cast<int64_t>(axes.size()) == r,
          "permute axes count " + std::to_string(axes.size()) + " does not match rank of " + shape_str(t.shape));
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int64_t a : axes) {
        check(a >= 0 && a < r && !seen[static_cast<size_t>(a)],
              "axes are not a permutation of 0.." + std::to_string(r - 1));
        seen[static_cast<size_t>(a)] = true;
    }

    Shape out_shape(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = t.shape[static_cast<size_t>(axes[static_cast<size_t>(i)])];
    Tensor out = zeros(out_shape);

    // strides of the input, row-major
    std::vector<int64_t> in_stride(static_cast<size_t>(r), 1);
    for (int64_t i = r - 2; i >= 0; --i)
        in_stride[static_cast<size_t>(i)] = in_stride[static_cast<size_t>(i + 1)] * t.shape[static_cast<size_t>(i + 1)];

    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
        int64_t rem = flat;
        for (int64_t i = r - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)] = rem % out_shape[static_cast<size_t>(i)];
            rem /= out_shape[static_cast<size_t>(i)];
        }
        int64_t src = 0;
        for (int64_t i = 0; i < r; ++i)
            src += idx[static_cast<size_t>(i)] * in_stride[static_cast<size_t>(axes[static_cast<size_t>(i)])];
        out.data[static_cast<size_t>(flat)] = t.data[static_cast<size_t>(src)];
    }
    return out;
}

Tensor pad2d(const Tensor& t, int64_t p) {
    check(t.rank() == 4, "pad2d expects a rank-4 tensor, got " + shape_str(t.shape));
    check(p >= 0, "pad2d padding must be non-negative");
    if (p == 0) return t;
    Tensor out = zeros({t.n(), t.c(), t.h() + 2 * p, t.w() + 2 * p});
    for (int64_t n = 0; n < t.n(); ++n)
        for (int64_t c = 0; c < t.c(); ++c)
            for (int64_t h = 0; h < t.h(); ++h)
                for (int64_t w = 0; w < t.w(); ++w)
                    out.at(n, c, h + p, w + p) = t.at(n, c, h, w);
    return out;
}

Tensor ewise(const Tensor& a, const Tensor& b, EwiseOp op) {
    check(a.rank() == b.rank(),
          "ewise rank mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    int64_t r = a.rank();
    Shape out_shape(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
        int64_t ea = a.shape[static_cast<size_t>(i)], eb = b.shape[static_cast<size_t>(i)];
        check(ea == eb || ea == 1 || eb == 1,
              "axis " + std::to_string(i) + " not broadcastable: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
        out_shape[static_cast<size_t>(i)] = std::max(ea, eb);
    }
    Tensor out = zeros(out_shape);

    std::vector<int64_t> sa(static_cast<size_t>(r), 1), sb(static_cast<size_t>(r), 1);
    for (int64_t i = r - 2; i >= 0; --i) {
        sa[static_cast<size_t>(i)] = sa[static_cast<size_t>(i + 1)] * a.shape[static_cast<size_t>(i + 1)];
        sb[static_cast<size_t>(i)] = sb[static_cast<size_t>(i + 1)] * b.shape[static_cast<size_t>(i + 1)];
    }

    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
        int64_t rem = flat;
        for (int64_t i = r - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)] = rem % out_shape[static_cast<size_t>(i)];
            rem /= out_shape[static_cast<size_t>(i)];
        }
        int64_t ia = 0, ib = 0;
        for (int64_t i = 0; i < r; ++i) {
            size_t ui = static_cast<size_t>(i);
            if (a.shape[ui] != 1) ia += idx[ui] * sa[ui];
            if (b.shape[ui] != 1) ib += idx[ui] * sb[ui];
        }
        double va = a.data[static_cast<size_t>(ia)], vb = b.data[static_cast<size_t>(ib)];
        out.data[static_cast<size_t>(flat)] = (op == EwiseOp::add) ? va + vb : va * vb;
    }
    return out;
}

Tensor reduce(const Tensor& t, const std::vector<int64_t>& axes, ReduceOp op) {
    int64_t r = t.rank();
    std::vector<bool> reduced(static_cast<size_t>(r), false);
    for (int64_t a : axes) {
        check(a >= 0 && a < r, "reduce axis " + std::to_string(a) + " out of range for " + shape_str(t.shape));
        reduced[static_cast<size_t>(a)] = true;
    }
    Shape out_shape = t.shape;
    int64_t count = 1;
    for (int64_t i = 0; i < r; ++i)
        if (reduced[static_cast<size_t>(i)]) {
            count *= out_shape[static_cast<size_t>(i)];
            out_shape[static_cast<size_t>(i)] = 1;
        }

    Tensor out = (op == ReduceOp::max)
                     ? full(out_shape, -std::numeric_limits<double>::infinity())
                     : zeros(out_shape);

    std::vector<int64_t> out_stride(static_cast<size_t>(r), 1);
    for (int64_t i = r - 2; i >= 0; --i)
        out_stride[static_cast<size_t>(i)] = out_stride[static_cast<size_t>(i + 1)] * out_shape[static_cast<size_t>(i + 1)];

    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    for (int64_t flat = 0; flat < t.numel(); ++flat) {
        int64_t rem = flat;
        for (int64_t i = r - 1; i >= 0; --i) {
            idx[static_cast<size_t>(i)] = rem % t.shape[static_cast<size_t>(i)];
            rem /= t.shape[static_cast<size_t>(i)];
        }
        int64_t dst = 0;
        for (int64_t i = 0; i < r; ++i)
            if (!reduced[static_cast<size_t>(i)]) dst += idx[static_cast<size_t>(i)] * out_stride[static_cast<size_t>(i)];
        double v = t.data[static_cast<size_t>(flat)];
        double& slot = out.data[static_cast<size_t>(dst)];
        if (op == ReduceOp::max)
            slot = std::max(slot, v);
        else
            slot += v;
    }
    if (op == ReduceOp::mean)
        for (double& v : out.data) v /= static_cast<double>(count);
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check(a.rank() == 2 && b.rank() == 2,
          "matmul expects rank-2 operands, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
    check(a.shape[1] == b.shape[0],
          "matmul inner extents differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
    Tensor out = zeros({m, p});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int64_t t = 0; t < k; ++t) acc += a.at2(i, t) * b.at2(t, j);
            out.at2(i, j) = acc;
        }
    return out;
}

uint64_t SeededRng::next_u64() {
    // splitmix64
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SeededRng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on two uniform draws; u1 pulled away from 0 for the log
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

int64_t SeededRng::uniform_int(int64_t n) {
    check(n > 0, "uniform_int bound must be positive");
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

Tensor randn(Shape shape, SeededRng& rng) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal();
    return t;
}

Tensor rand_uniform(Shape shape, SeededRng& rng) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform();
    return t;
}

} // namespace rfa
