#include "rfa/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rfa {

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t padding) {
    return (in + 2 * padding - k) / stride + 1;
}

BatchNormState BatchNormState::make(int64_t channels) {
    BatchNormState s;
    s.gamma = full({channels}, 1.0);
    s.beta = zeros({channels});
    s.running_mean = zeros({channels});
    s.running_var = full({channels}, 1.0);
    return s;
}

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    check(x.rank() == 4, "conv2d expects a rank-4 input, got " + shape_str(x.shape));
    check(p.weight.rank() == 4, "conv2d weight must be rank-4, got " + shape_str(p.weight.shape));
    check(p.weight.extent(2) == p.weight.extent(3), "conv2d kernel must be square");
    check(p.stride >= 1 && p.padding >= 0 && p.groups >= 1, "conv2d stride/padding/groups out of range");

    const int64_t cin = x.c(), cout = p.out_channels(), k = p.kernel(), g = p.groups;
    check(cin % g == 0 && cout % g == 0,
          "groups " + std::to_string(g) + " must divide C_in " + std::to_string(cin) +
              " and C_out " + std::to_string(cout));
    check(p.group_in_channels() == cin / g,
          "weight shape " + shape_str(p.weight.shape) + " does not match input channels " +
              std::to_string(cin) + " with groups " + std::to_string(g));
    if (p.bias)
        check(p.bias->rank() == 1 && p.bias->extent(0) == cout,
              "bias shape " + shape_str(p.bias->shape) + " does not match C_out " + std::to_string(cout));

    const int64_t oh = conv_out_extent(x.h(), k, p.stride, p.padding);
    const int64_t ow = conv_out_extent(x.w(), k, p.stride, p.padding);
    check(oh >= 1 && ow >= 1, "conv2d output extent <= 0 for input " + shape_str(x.shape));

    const int64_t cg_in = cin / g, cg_out = cout / g;
    Tensor y = zeros({x.n(), cout, oh, ow});

    const double* xd = x.data.data();
    const double* wd = p.weight.data.data();
    const int64_t H = x.h(), W = x.w();

    for (int64_t n = 0; n < x.n(); ++n) {
        for (int64_t co = 0; co < cout; ++co) {
            const int64_t grp = co / cg_out;
            const double b = p.bias ? p.bias->data[static_cast<size_t>(co)] : 0.0;
            for (int64_t out_h = 0; out_h < oh; ++out_h) {
                const int64_t ih0 = out_h * p.stride - p.padding;
                for (int64_t out_w = 0; out_w < ow; ++out_w) {
                    const int64_t iw0 = out_w * p.stride - p.padding;
                    double acc = b;
                    for (int64_t ci = 0; ci < cg_in; ++ci) {
                        const double* xrow = xd + ((n * cin + grp * cg_in + ci) * H) * W;
                        const double* wrow = wd + ((co * cg_in + ci) * k) * k;
                        for (int64_t u = 0; u < k; ++u) {
                            const int64_t ih = ih0 + u;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t v = 0; v < k; ++v) {
                                const int64_t iw = iw0 + v;
                                if (iw < 0 || iw >= W) continue;
                                acc += xrow[ih * W + iw] * wrow[u * k + v];
                            }
                        }
                    }
                    y.at(n, co, out_h, out_w) = acc;
                }
            }
        }
    }
    return y;
}

RfFeature unfold(const Tensor& x, int64_t k, int64_t stride, int64_t padding) {
    check(x.rank() == 4, "unfold expects a rank-4 input, got " + shape_str(x.shape));
    check(k >= 1 && stride >= 1 && padding >= 0, "unfold k/stride/padding out of range");
    const int64_t oh = conv_out_extent(x.h(), k, stride, padding);
    const int64_t ow = conv_out_extent(x.w(), k, stride, padding);
    check(oh >= 1 && ow >= 1, "unfold output extent <= 0 for input " + shape_str(x.shape));

    RfFeature f;
    f.channels = x.c();
    f.k = k;
    f.data = zeros({x.n(), x.c() * k * k, oh, ow});
    for (int64_t n = 0; n < x.n(); ++n)
        for (int64_t c = 0; c < x.c(); ++c)
            for (int64_t u = 0; u < k; ++u)
                for (int64_t v = 0; v < k; ++v) {
                    const int64_t j = u * k + v;
                    for (int64_t h = 0; h < oh; ++h) {
                        const int64_t ih = h * stride - padding + u;
                        if (ih < 0 || ih >= x.h()) continue; // zero already
                        for (int64_t w = 0; w < ow; ++w) {
                            const int64_t iw = w * stride - padding + v;
                            if (iw < 0 || iw >= x.w()) continue;
                            f.at(n, c, j, h, w) = x.at(n, c, ih, iw);
                        }
                    }
                }
    return f;
}

RfFeature rf_extract_groupconv(const Tensor& x, const ConvParams& p) {
    const int64_t c = x.c(), k = p.kernel();
    check(p.groups == c, "rf_extract_groupconv requires groups == C, got groups " +
                             std::to_string(p.groups) + " for " + std::to_string(c) + " channels");
    check(p.out_channels() == c * k * k,
          "rf_extract_groupconv weight must map C to C*k^2 channels, got " + shape_str(p.weight.shape));
    check(!p.bias, "rf_extract_groupconv path is bias-free");

    RfFeature f;
    f.channels = c;
    f.k = k;
    f.data = conv2d(x, p);
    return f;
}

ConvParams selector_weights(int64_t channels, int64_t k, int64_t stride, int64_t padding) {
    ConvParams p;
    p.weight = zeros({channels * k * k, 1, k, k});
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t j = 0; j < k * k; ++j)
            p.weight.at(c * k * k + j, 0, j / k, j % k) = 1.0;
    p.stride = stride;
    p.padding = padding;
    p.groups = channels;
    return p;
}

Tensor rf_rearrange(const RfFeature& f) {
    const int64_t k = f.k, c = f.channels, oh = f.data.h(), ow = f.data.w();
    check(f.data.c() == c * k * k,
          "malformed receptive-field feature: " + shape_str(f.data.shape) + " with C=" +
              std::to_string(c) + " k=" + std::to_string(k));
    Tensor out = zeros({f.data.n(), c, oh * k, ow * k});
    for (int64_t n = 0; n < f.data.n(); ++n)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t u = 0; u < k; ++u)
                for (int64_t v = 0; v < k; ++v)
                    for (int64_t h = 0; h < oh; ++h)
                        for (int64_t w = 0; w < ow; ++w)
                            out.at(n, ch, h * k + u, w * k + v) = f.at(n, ch, u * k + v, h, w);
    return out;
}

Tensor avgpool2d(const Tensor& x, int64_t k, int64_t stride, int64_t padding) {
    check(x.rank() == 4, "avgpool2d expects a rank-4 input");
    const int64_t oh = conv_out_extent(x.h(), k, stride, padding);
    const int64_t ow = conv_out_extent(x.w(), k, stride, padding);
    check(oh >= 1 && ow >= 1, "avgpool2d output extent <= 0 for input " + shape_str(x.shape));
    Tensor y = zeros({x.n(), x.c(), oh, ow});
    const double inv = 1.0 / static_cast<double>(k * k);
    for (int64_t n = 0; n < x.n(); ++n)
        for (int64_t c = 0; c < x.c(); ++c)
            for (int64_t h = 0; h < oh; ++h)
                for (int64_t w = 0; w < ow; ++w) {
                    double acc = 0.0;
                    for (int64_t u = 0; u < k; ++u) {
                        const int64_t ih = h * stride - padding + u;
                        if (ih < 0 || ih >= x.h()) continue;
                        for (int64_t v = 0; v < k; ++v) {
                            const int64_t iw = w * stride - padding + v;
                            if (iw < 0 || iw >= x.w()) continue;
                            acc += x.at(n, c, ih, iw);
                        }
                    }
                    y.at(n, c, h, w) = acc * inv;
                }
    return y;
}

Tensor maxpool2d(const Tensor& x, int64_t k, int64_t stride, int64_t padding) {
    check(x.rank() == 4, "maxpool2d expects a rank-4 input");
    const int64_t oh = conv_out_extent(x.h(), k, stride, padding);
    const int64_t ow = conv_out_extent(x.w(), k, stride, padding);
    check(oh >= 1 && ow >= 1, "maxpool2d output extent <= 0 for input " + shape_str(x.shape));
    Tensor y = zeros({x.n(), x.c(), oh, ow});
    for (int64_t n = 0; n < x.n(); ++n)
        for (int64_t c = 0; c < x.c(); ++c)
            for (int64_t h = 0; h < oh; ++h)
                for (int64_t w = 0; w < ow; ++w) {
                    double best = -std::numeric_limits<double>::infinity();
                    bool any = false;
                    for (int64_t u = 0; u < k; ++u) {
                        const int64_t ih = h * stride - padding + u;
                        if (ih < 0 || ih >= x.h()) continue;
                        for (int64_t v = 0; v < k; ++v) {
                            const int64_t iw = w * stride - padding + v;
                            if (iw < 0 || iw >= x.w()) continue;
                            double val = x.at(n, c, ih, iw);
                            if (!any || val > best) best = val;
                            any = true;
                        }
                    }
                    check(any, "maxpool2d window contains no valid cells");
                    y.at(n, c, h, w) = best;
                }
    return y;
}

Tensor global_avgpool(const Tensor& x) {
    check(x.rank() == 4, "global_avgpool expects a rank-4 input");
    return reduce(x, {2, 3}, ReduceOp::mean);
}

Tensor global_maxpool(const Tensor& x) {
    check(x.rank() == 4, "global_maxpool expects a rank-4 input");
    return reduce(x, {2, 3}, ReduceOp::max);
}

Tensor pool_h(const Tensor& x) {
    check(x.rank() == 4, "pool_h expects a rank-4 input");
    return reduce(x, {3}, ReduceOp::mean);
}

Tensor pool_w(const Tensor& x) {
    check(x.rank() == 4, "pool_w expects a rank-4 input");
    return reduce(x, {2}, ReduceOp::mean);
}

Tensor softmax_axis(const Tensor& x, int64_t axis) {
    check(axis >= 0 && axis < x.rank(),
          "softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape));
    const int64_t r = x.rank();
    int64_t stride = 1;
    for (int64_t i = axis + 1; i < r; ++i) stride *= x.shape[static_cast<size_t>(i)];
    const int64_t extent = x.shape[static_cast<size_t>(axis)];
    const int64_t inner = stride;
    int64_t outer = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= x.shape[static_cast<size_t>(i)];

    Tensor y = zeros_like(x);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * extent * inner + in;
            double m = -std::numeric_limits<double>::infinity();
            for (int64_t e = 0; e < extent; ++e) m = std::max(m, x.data[static_cast<size_t>(base + e * stride)]);
            double sum = 0.0;
            for (int64_t e = 0; e < extent; ++e) {
                double v = std::exp(x.data[static_cast<size_t>(base + e * stride)] - m);
                y.data[static_cast<size_t>(base + e * stride)] = v;
                sum += v;
            }
            for (int64_t e = 0; e < extent; ++e) y.data[static_cast<size_t>(base + e * stride)] /= sum;
        }
    return y;
}

Tensor softmax_taps(const Tensor& packed, int64_t group_count) {
    check(packed.rank() == 4, "softmax_taps expects a rank-4 packed tensor");
    check(group_count >= 1 && packed.c() % group_count == 0,
          "channel extent " + std::to_string(packed.c()) + " not divisible into " +
              std::to_string(group_count) + " groups");
    const int64_t taps = packed.c() / group_count;
    Tensor y = zeros_like(packed);
    for (int64_t n = 0; n < packed.n(); ++n)
        for (int64_t g = 0; g < group_count; ++g)
            for (int64_t h = 0; h < packed.h(); ++h)
                for (int64_t w = 0; w < packed.w(); ++w) {
                    double m = -std::numeric_limits<double>::infinity();
                    for (int64_t j = 0; j < taps; ++j) m = std::max(m, packed.at(n, g * taps + j, h, w));
                    double sum = 0.0;
                    for (int64_t j = 0; j < taps; ++j) {
                        double v = std::exp(packed.at(n, g * taps + j, h, w) - m);
                        y.at(n, g * taps + j, h, w) = v;
                        sum += v;
                    }
                    for (int64_t j = 0; j < taps; ++j) y.at(n, g * taps + j, h, w) /= sum;
                }
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

double sigmoid_scalar(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = sigmoid_scalar(v);
    return y;
}

Tensor hardswish(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v * std::clamp(v + 3.0, 0.0, 6.0) / 6.0;
    return y;
}

Tensor channel_meanmax(const Tensor& x) {
    check(x.rank() == 4, "channel_meanmax expects a rank-4 input");
    Tensor y = zeros({x.n(), 2, x.h(), x.w()});
    const double inv = 1.0 / static_cast<double>(x.c());
    for (int64_t n = 0; n < x.n(); ++n)
        for (int64_t h = 0; h < x.h(); ++h)
            for (int64_t w = 0; w < x.w(); ++w) {
                double sum = 0.0, best = -std::numeric_limits<double>::infinity();
                for (int64_t c = 0; c < x.c(); ++c) {
                    double v = x.at(n, c, h, w);
                    sum += v;
                    best = std::max(best, v);
                }
                y.at(n, 0, h, w) = sum * inv;
                y.at(n, 1, h, w) = best;
            }
    return y;
}

Tensor batchnorm2d(const Tensor& x, BatchNormState& s) {
    check(x.rank() == 4, "batchnorm2d expects a rank-4 input");
    const int64_t c = s.channels();
    check(x.c() == c, "batchnorm2d channel mismatch: input " + shape_str(x.shape) +
                          " vs state with " + std::to_string(c) + " channels");
    Tensor y = zeros_like(x);
    const int64_t m = x.n() * x.h() * x.w();

    if (s.mode == BatchNormState::Mode::train) {
        check(m >= 2, "batchnorm2d train mode needs N*H*W >= 2, got " + std::to_string(m));
        for (int64_t ch = 0; ch < c; ++ch) {
            double mean = 0.0;
            for (int64_t n = 0; n < x.n(); ++n)
                for (int64_t h = 0; h < x.h(); ++h)
                    for (int64_t w = 0; w < x.w(); ++w) mean += x.at(n, ch, h, w);
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t n = 0; n < x.n(); ++n)
                for (int64_t h = 0; h < x.h(); ++h)
                    for (int64_t w = 0; w < x.w(); ++w) {
                        double d = x.at(n, ch, h, w) - mean;
                        var += d * d;
                    }
            var /= static_cast<double>(m); // biased, used for normalization
            const double inv_std = 1.0 / std::sqrt(var + s.eps);
            const double g = s.gamma.data[static_cast<size_t>(ch)];
            const double b = s.beta.data[static_cast<size_t>(ch)];
            for (int64_t n = 0; n < x.n(); ++n)
                for (int64_t h = 0; h < x.h(); ++h)
                    for (int64_t w = 0; w < x.w(); ++w)
                        y.at(n, ch, h, w) = g * (x.at(n, ch, h, w) - mean) * inv_std + b;
            if (s.track_running) {
                const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
                s.running_mean.data[static_cast<size_t>(ch)] =
                    (1.0 - s.momentum) * s.running_mean.data[static_cast<size_t>(ch)] + s.momentum * mean;
                s.running_var.data[static_cast<size_t>(ch)] =
                    (1.0 - s.momentum) * s.running_var.data[static_cast<size_t>(ch)] + s.momentum * unbiased;
            }
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            const double mean = s.running_mean.data[static_cast<size_t>(ch)];
            const double inv_std = 1.0 / std::sqrt(s.running_var.data[static_cast<size_t>(ch)] + s.eps);
            const double g = s.gamma.data[static_cast<size_t>(ch)];
            const double b = s.beta.data[static_cast<size_t>(ch)];
            for (int64_t n = 0; n < x.n(); ++n)
                for (int64_t h = 0; h < x.h(); ++h)
                    for (int64_t w = 0; w < x.w(); ++w)
                        y.at(n, ch, h, w) = g * (x.at(n, ch, h, w) - mean) * inv_std + b;
        }
    }
    return y;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    check(x.rank() == 2, "linear expects a rank-2 input, got " + shape_str(x.shape));
    check(weight.rank() == 2 && weight.extent(1) == x.extent(1),
          "linear weight " + shape_str(weight.shape) + " does not match input " + shape_str(x.shape));
    check(bias.rank() == 1 && bias.extent(0) == weight.extent(0),
          "linear bias " + shape_str(bias.shape) + " does not match weight " + shape_str(weight.shape));
    const int64_t n = x.extent(0), fin = x.extent(1), fout = weight.extent(0);
    Tensor y = zeros({n, fout});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t o = 0; o < fout; ++o) {
            double acc = bias.data[static_cast<size_t>(o)];
            for (int64_t f = 0; f < fin; ++f) acc += x.at2(i, f) * weight.at2(o, f);
            y.at2(i, o) = acc;
        }
    return y;
}

Tensor concat_axis(const Tensor& a, const Tensor& b, int64_t axis) {
    check(a.rank() == b.rank(), "concat rank mismatch");
    check(axis >= 0 && axis < a.rank(), "concat axis out of range");
    for (int64_t i = 0; i < a.rank(); ++i)
        if (i != axis)
            check(a.shape[static_cast<size_t>(i)] == b.shape[static_cast<size_t>(i)],
                  "concat shapes differ off-axis: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    Shape out_shape = a.shape;
    out_shape[static_cast<size_t>(axis)] += b.shape[static_cast<size_t>(axis)];
    Tensor out = zeros(out_shape);

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= a.shape[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape[static_cast<size_t>(i)];
    const int64_t ea = a.shape[static_cast<size_t>(axis)], eb = b.shape[static_cast<size_t>(axis)];
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(a.data.begin() + o * ea * inner, ea * inner,
                    out.data.begin() + o * (ea + eb) * inner);
        std::copy_n(b.data.begin() + o * eb * inner, eb * inner,
                    out.data.begin() + o * (ea + eb) * inner + ea * inner);
    }
    return out;
}

Tensor narrow_axis(const Tensor& x, int64_t axis, int64_t start, int64_t len) {
    check(axis >= 0 && axis < x.rank(), "narrow axis out of range");
    const int64_t extent = x.shape[static_cast<size_t>(axis)];
    check(start >= 0 && len >= 1 && start + len <= extent,
          "narrow range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of bounds for extent " + std::to_string(extent));
    Shape out_shape = x.shape;
    out_shape[static_cast<size_t>(axis)] = len;
    Tensor out = zeros(out_shape);

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= x.shape[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[static_cast<size_t>(i)];
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(x.data.begin() + (o * extent + start) * inner, len * inner,
                    out.data.begin() + o * len * inner);
    return out;
}

} // namespace rfa
