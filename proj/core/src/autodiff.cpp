#include "rfa/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rfa {

Tape::Node& Tape::node_mut(int32_t id) {
    check(id >= 0 && id < size(), "tape node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<size_t>(id)];
}

const Tape::Node& Tape::node(int32_t id) const {
    check(id >= 0 && id < size(), "tape node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<size_t>(id)];
}

const Tensor& Tape::grad(int32_t id) const {
    const Node& n = node(id);
    check(!n.grad.data.empty(), "node " + std::to_string(id) + " (" + n.op + ") has no gradient");
    return n.grad;
}

int32_t Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int32_t>(nodes_.size()) - 1;
}

int32_t Tape::leaf(Tensor v, bool requires_grad, std::string label) {
    Node n;
    n.op = "leaf";
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.label = std::move(label);
    return push(std::move(n));
}

int32_t Tape::param(Param& p) {
    Node n;
    n.op = "param";
    n.value = p.value;
    n.requires_grad = true;
    n.label = p.name;
    n.sink = &p;
    return push(std::move(n));
}

void Tape::set_label(int32_t id, std::string label) { node_mut(id).label = std::move(label); }

void Tape::add_grad(int32_t id, const Tensor& g) {
    Node& n = node_mut(id);
    if (!n.requires_grad) return;
    if (n.grad.data.empty()) {
        n.grad = g;
        return;
    }
    check(n.grad.shape == g.shape, "gradient shape mismatch on node " + std::to_string(id));
    for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
}

int32_t Tape::unary(std::string op, int32_t x, Tensor value, std::function<void(Tape&, int32_t)> backward) {
    Node n;
    n.op = std::move(op);
    n.parents = {x};
    n.value = std::move(value);
    n.requires_grad = node(x).requires_grad;
    n.backward = std::move(backward);
    return push(std::move(n));
}

// Sum a broadcast gradient back down to the operand's shape.
static Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape == target) return g;
    std::vector<int64_t> axes;
    for (int64_t i = 0; i < g.rank(); ++i)
        if (target[static_cast<size_t>(i)] == 1 && g.shape[static_cast<size_t>(i)] != 1) axes.push_back(i);
    return reduce(g, axes, ReduceOp::sum);
}

void Tape::backward(int32_t output, const Tensor& output_grad) {
    const Node& out = node(output);
    check(out.value.shape == output_grad.shape,
          "output gradient shape " + shape_str(output_grad.shape) + " does not match output " +
              shape_str(out.value.shape));
    check(out.requires_grad, "backward from a node that does not require gradients");
    for (Node& n : nodes_) n.grad = Tensor();
    node_mut(output).grad = output_grad;
    for (int32_t id = output; id >= 0; --id) {
        Node& n = node_mut(id);
        if (!n.requires_grad || n.grad.data.empty() || !n.backward) continue;
        n.backward(*this, id);
    }
}

void Tape::accumulate_param_grads() {
    for (Node& n : nodes_) {
        if (!n.sink || n.grad.data.empty()) continue;
        check(n.sink->grad.shape == n.grad.shape, "param gradient shape mismatch for " + n.label);
        for (size_t i = 0; i < n.grad.data.size(); ++i) n.sink->grad.data[i] += n.grad.data[i];
    }
}

// ---------------------------------------------------------------------------
// convolution

int32_t Tape::conv2d(int32_t x, int32_t weight, int32_t bias, int64_t stride, int64_t padding, int64_t groups) {
    ConvParams p;
    p.weight = value(weight);
    if (bias >= 0) p.bias = value(bias);
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    Tensor y = rfa::conv2d(value(x), p);

    Node n;
    n.op = "conv2d";
    n.parents = {x, weight};
    if (bias >= 0) n.parents.push_back(bias);
    n.requires_grad = node(x).requires_grad || node(weight).requires_grad ||
                      (bias >= 0 && node(bias).requires_grad);
    n.value = std::move(y);
    n.backward = [x, weight, bias, stride, padding, groups](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(weight);
        const int64_t cin = xv.c(), cout = wv.extent(0), k = wv.extent(2);
        const int64_t cg_in = cin / groups, cg_out = cout / groups;
        const bool wants_x = t.node(x).requires_grad;
        const bool wants_w = t.node(weight).requires_grad;
        const bool wants_b = bias >= 0 && t.node(bias).requires_grad;

        Tensor gx = wants_x ? zeros_like(xv) : Tensor();
        Tensor gw = wants_w ? zeros_like(wv) : Tensor();
        Tensor gb = wants_b ? zeros_like(t.value(bias)) : Tensor();

        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t co = 0; co < cout; ++co) {
                const int64_t grp = co / cg_out;
                for (int64_t oh = 0; oh < gy.h(); ++oh) {
                    const int64_t ih0 = oh * stride - padding;
                    for (int64_t ow = 0; ow < gy.w(); ++ow) {
                        const int64_t iw0 = ow * stride - padding;
                        const double g = gy.at(n, co, oh, ow);
                        if (g == 0.0) continue;
                        if (wants_b) gb.data[static_cast<size_t>(co)] += g;
                        for (int64_t ci = 0; ci < cg_in; ++ci) {
                            const int64_t xc = grp * cg_in + ci;
                            for (int64_t u = 0; u < k; ++u) {
                                const int64_t ih = ih0 + u;
                                if (ih < 0 || ih >= xv.h()) continue;
                                for (int64_t v = 0; v < k; ++v) {
                                    const int64_t iw = iw0 + v;
                                    if (iw < 0 || iw >= xv.w()) continue;
                                    if (wants_x) {
                                        const double wval = t.corrupt_conv_backward
                                                                ? wv.at(co, ci, v, u)
                                                                : wv.at(co, ci, u, v);
                                        gx.at(n, xc, ih, iw) += g * wval;
                                    }
                                    if (wants_w) gw.at(co, ci, u, v) += g * xv.at(n, xc, ih, iw);
                                }
                            }
                        }
                    }
                }
            }
        if (wants_x) t.add_grad(x, gx);
        if (wants_w) t.add_grad(weight, gw);
        if (wants_b) t.add_grad(bias, gb);
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// receptive-field extraction and rearrangement

int32_t Tape::unfold_rf(int32_t x, int64_t k, int64_t stride, int64_t padding) {
    RfFeature f = rfa::unfold(value(x), k, stride, padding);
    return unary("unfold", x, std::move(f.data), [x, k, stride, padding](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        const int64_t c = xv.c();
        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t j = 0; j < k * k; ++j)
                    for (int64_t h = 0; h < gy.h(); ++h) {
                        const int64_t ih = h * stride - padding + j / k;
                        if (ih < 0 || ih >= xv.h()) continue;
                        for (int64_t w = 0; w < gy.w(); ++w) {
                            const int64_t iw = w * stride - padding + j % k;
                            if (iw < 0 || iw >= xv.w()) continue;
                            gx.at(n, ch, ih, iw) += gy.at(n, ch * k * k + j, h, w);
                        }
                    }
        t.add_grad(x, gx);
    });
}

int32_t Tape::rf_rearrange(int32_t f, int64_t channels, int64_t k) {
    RfFeature rf;
    rf.data = value(f);
    rf.channels = channels;
    rf.k = k;
    Tensor y = rfa::rf_rearrange(rf);
    return unary("rf_rearrange", f, std::move(y), [f, channels, k](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        Tensor gf = zeros_like(t.value(f));
        const int64_t oh = gy.h() / k, ow = gy.w() / k;
        for (int64_t n = 0; n < gy.n(); ++n)
            for (int64_t c = 0; c < channels; ++c)
                for (int64_t u = 0; u < k; ++u)
                    for (int64_t v = 0; v < k; ++v)
                        for (int64_t h = 0; h < oh; ++h)
                            for (int64_t w = 0; w < ow; ++w)
                                gf.at(n, c * k * k + u * k + v, h, w) = gy.at(n, c, h * k + u, w * k + v);
        t.add_grad(f, gf);
    });
}

// ---------------------------------------------------------------------------
// pooling

int32_t Tape::avgpool2d(int32_t x, int64_t k, int64_t stride, int64_t padding) {
    Tensor y = rfa::avgpool2d(value(x), k, stride, padding);
    return unary("avgpool2d", x, std::move(y), [x, k, stride, padding](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        const double inv = 1.0 / static_cast<double>(k * k);
        for (int64_t n = 0; n < gy.n(); ++n)
            for (int64_t c = 0; c < gy.c(); ++c)
                for (int64_t h = 0; h < gy.h(); ++h)
                    for (int64_t w = 0; w < gy.w(); ++w) {
                        const double g = gy.at(n, c, h, w) * inv;
                        for (int64_t u = 0; u < k; ++u) {
                            const int64_t ih = h * stride - padding + u;
                            if (ih < 0 || ih >= xv.h()) continue;
                            for (int64_t v = 0; v < k; ++v) {
                                const int64_t iw = w * stride - padding + v;
                                if (iw < 0 || iw >= xv.w()) continue;
                                gx.at(n, c, ih, iw) += g;
                            }
                        }
                    }
        t.add_grad(x, gx);
    });
}

int32_t Tape::maxpool2d(int32_t x, int64_t k, int64_t stride, int64_t padding) {
    const Tensor& xv = value(x);
    const int64_t oh = conv_out_extent(xv.h(), k, stride, padding);
    const int64_t ow = conv_out_extent(xv.w(), k, stride, padding);
    check(oh >= 1 && ow >= 1, "maxpool2d output extent <= 0");
    Tensor y = zeros({xv.n(), xv.c(), oh, ow});
    // argmax recorded at forward time, ties to the lowest linear index
    std::vector<int64_t> argmax(static_cast<size_t>(y.numel()), -1);
    int64_t out_i = 0;
    for (int64_t n = 0; n < xv.n(); ++n)
        for (int64_t c = 0; c < xv.c(); ++c)
            for (int64_t h = 0; h < oh; ++h)
                for (int64_t w = 0; w < ow; ++w, ++out_i) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_idx = -1;
                    for (int64_t u = 0; u < k; ++u) {
                        const int64_t ih = h * stride - padding + u;
                        if (ih < 0 || ih >= xv.h()) continue;
                        for (int64_t v = 0; v < k; ++v) {
                            const int64_t iw = w * stride - padding + v;
                            if (iw < 0 || iw >= xv.w()) continue;
                            const int64_t flat = ((n * xv.c() + c) * xv.h() + ih) * xv.w() + iw;
                            const double val = xv.data[static_cast<size_t>(flat)];
                            if (best_idx < 0 || val > best) {
                                best = val;
                                best_idx = flat;
                            }
                        }
                    }
                    check(best_idx >= 0, "maxpool2d window contains no valid cells");
                    y.data[static_cast<size_t>(out_i)] = best;
                    argmax[static_cast<size_t>(out_i)] = best_idx;
                }
    return unary("maxpool2d", x, std::move(y), [x, argmax](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        Tensor gx = zeros_like(t.value(x));
        for (int64_t i = 0; i < gy.numel(); ++i)
            gx.data[static_cast<size_t>(argmax[static_cast<size_t>(i)])] += gy.data[static_cast<size_t>(i)];
        t.add_grad(x, gx);
    });
}

int32_t Tape::global_avgpool(int32_t x) {
    Tensor y = rfa::global_avgpool(value(x));
    return unary("global_avgpool", x, std::move(y), [x](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        const double inv = 1.0 / static_cast<double>(xv.h() * xv.w());
        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t c = 0; c < xv.c(); ++c) {
                const double g = gy.at(n, c, 0, 0) * inv;
                for (int64_t h = 0; h < xv.h(); ++h)
                    for (int64_t w = 0; w < xv.w(); ++w) gx.at(n, c, h, w) = g;
            }
        t.add_grad(x, gx);
    });
}

int32_t Tape::global_maxpool(int32_t x) {
    const Tensor& xv = value(x);
    Tensor y = zeros({xv.n(), xv.c(), 1, 1});
    std::vector<int64_t> argmax(static_cast<size_t>(xv.n() * xv.c()));
    for (int64_t n = 0; n < xv.n(); ++n)
        for (int64_t c = 0; c < xv.c(); ++c) {
            double best = -std::numeric_limits<double>::infinity();
            int64_t best_idx = -1;
            for (int64_t h = 0; h < xv.h(); ++h)
                for (int64_t w = 0; w < xv.w(); ++w) {
                    const int64_t flat = ((n * xv.c() + c) * xv.h() + h) * xv.w() + w;
                    const double val = xv.data[static_cast<size_t>(flat)];
                    if (best_idx < 0 || val > best) {
                        best = val;
                        best_idx = flat;
                    }
                }
            y.at(n, c, 0, 0) = best;
            argmax[static_cast<size_t>(n * xv.c() + c)] = best_idx;
        }
    return unary("global_maxpool", x, std::move(y), [x, argmax](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        Tensor gx = zeros_like(t.value(x));
        for (size_t i = 0; i < argmax.size(); ++i)
            gx.data[static_cast<size_t>(argmax[i])] += gy.data[i];
        t.add_grad(x, gx);
    });
}

int32_t Tape::pool_h(int32_t x) {
    Tensor y = rfa::pool_h(value(x));
    return unary("pool_h", x, std::move(y), [x](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        const double inv = 1.0 / static_cast<double>(xv.w());
        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t c = 0; c < xv.c(); ++c)
                for (int64_t h = 0; h < xv.h(); ++h) {
                    const double g = gy.at(n, c, h, 0) * inv;
                    for (int64_t w = 0; w < xv.w(); ++w) gx.at(n, c, h, w) = g;
                }
        t.add_grad(x, gx);
    });
}

int32_t Tape::pool_w(int32_t x) {
    Tensor y = rfa::pool_w(value(x));
    return unary("pool_w", x, std::move(y), [x](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        const double inv = 1.0 / static_cast<double>(xv.h());
        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t c = 0; c < xv.c(); ++c)
                for (int64_t w = 0; w < xv.w(); ++w) {
                    const double g = gy.at(n, c, 0, w) * inv;
                    for (int64_t h = 0; h < xv.h(); ++h) gx.at(n, c, h, w) = g;
                }
        t.add_grad(x, gx);
    });
}

// ---------------------------------------------------------------------------
// activations and normalization

int32_t Tape::softmax_taps(int32_t x, int64_t group_count) {
    Tensor y = rfa::softmax_taps(value(x), group_count);
    return unary("softmax_taps", x, std::move(y), [x, group_count](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor gx = zeros_like(y);
        const int64_t taps = y.c() / group_count;
        for (int64_t n = 0; n < y.n(); ++n)
            for (int64_t g = 0; g < group_count; ++g)
                for (int64_t h = 0; h < y.h(); ++h)
                    for (int64_t w = 0; w < y.w(); ++w) {
                        double dot = 0.0;
                        for (int64_t j = 0; j < taps; ++j)
                            dot += gy.at(n, g * taps + j, h, w) * y.at(n, g * taps + j, h, w);
                        for (int64_t j = 0; j < taps; ++j)
                            gx.at(n, g * taps + j, h, w) =
                                y.at(n, g * taps + j, h, w) * (gy.at(n, g * taps + j, h, w) - dot);
                    }
        t.add_grad(x, gx);
    });
}

int32_t Tape::relu(int32_t x) {
    Tensor y = rfa::relu(value(x));
    return unary("relu", x, std::move(y), [x](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] = xv.data[i] > 0.0 ? gy.data[i] : 0.0;
        t.add_grad(x, gx);
    });
}

int32_t Tape::sigmoid(int32_t x) {
    Tensor y = rfa::sigmoid(value(x));
    return unary("sigmoid", x, std::move(y), [x](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor gx = zeros_like(y);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] = gy.data[i] * y.data[i] * (1.0 - y.data[i]);
        t.add_grad(x, gx);
    });
}

int32_t Tape::hardswish(int32_t x) {
    Tensor y = rfa::hardswish(value(x));
    return unary("hardswish", x, std::move(y), [x](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        for (size_t i = 0; i < gx.data.size(); ++i) {
            const double v = xv.data[i];
            double d;
            if (v <= -3.0)
                d = 0.0;
            else if (v >= 3.0)
                d = 1.0;
            else
                d = (2.0 * v + 3.0) / 6.0;
            gx.data[i] = gy.data[i] * d;
        }
        t.add_grad(x, gx);
    });
}

int32_t Tape::channel_meanmax(int32_t x) {
    const Tensor& xv = value(x);
    Tensor y = rfa::channel_meanmax(xv);
    // record the channel argmax per pixel, ties to the lowest channel
    std::vector<int64_t> argmax(static_cast<size_t>(xv.n() * xv.h() * xv.w()));
    int64_t i = 0;
    for (int64_t n = 0; n < xv.n(); ++n)
        for (int64_t h = 0; h < xv.h(); ++h)
            for (int64_t w = 0; w < xv.w(); ++w, ++i) {
                double best = -std::numeric_limits<double>::infinity();
                int64_t best_c = -1;
                for (int64_t c = 0; c < xv.c(); ++c) {
                    const double val = xv.at(n, c, h, w);
                    if (best_c < 0 || val > best) {
                        best = val;
                        best_c = c;
                    }
                }
                argmax[static_cast<size_t>(i)] = best_c;
            }
    return unary("channel_meanmax", x, std::move(y), [x, argmax](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        const double inv = 1.0 / static_cast<double>(xv.c());
        int64_t i = 0;
        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t h = 0; h < xv.h(); ++h)
                for (int64_t w = 0; w < xv.w(); ++w, ++i) {
                    const double gmean = gy.at(n, 0, h, w) * inv;
                    for (int64_t c = 0; c < xv.c(); ++c) gx.at(n, c, h, w) += gmean;
                    gx.at(n, argmax[static_cast<size_t>(i)], h, w) += gy.at(n, 1, h, w);
                }
        t.add_grad(x, gx);
    });
}

int32_t Tape::batchnorm(int32_t x, int32_t gamma, int32_t beta, Tensor& running_mean, Tensor& running_var,
                        double eps, double momentum, bool train, bool track_running) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    const int64_t c = gv.extent(0);
    check(xv.rank() == 4 && xv.c() == c, "batchnorm channel mismatch: input " + shape_str(xv.shape));
    const int64_t m = xv.n() * xv.h() * xv.w();

    Tensor mean({c}, std::vector<double>(static_cast<size_t>(c), 0.0));
    Tensor var({c}, std::vector<double>(static_cast<size_t>(c), 0.0));
    if (train) {
        check(m >= 2, "batchnorm train mode needs N*H*W >= 2, got " + std::to_string(m));
        for (int64_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int64_t n = 0; n < xv.n(); ++n)
                for (int64_t h = 0; h < xv.h(); ++h)
                    for (int64_t w = 0; w < xv.w(); ++w) s += xv.at(n, ch, h, w);
            mean.data[static_cast<size_t>(ch)] = s / static_cast<double>(m);
            double v = 0.0;
            for (int64_t n = 0; n < xv.n(); ++n)
                for (int64_t h = 0; h < xv.h(); ++h)
                    for (int64_t w = 0; w < xv.w(); ++w) {
                        const double d = xv.at(n, ch, h, w) - mean.data[static_cast<size_t>(ch)];
                        v += d * d;
                    }
            var.data[static_cast<size_t>(ch)] = v / static_cast<double>(m);
        }
        if (track_running) {
            for (int64_t ch = 0; ch < c; ++ch) {
                const double unbiased =
                    var.data[static_cast<size_t>(ch)] * static_cast<double>(m) / static_cast<double>(m - 1);
                running_mean.data[static_cast<size_t>(ch)] =
                    (1.0 - momentum) * running_mean.data[static_cast<size_t>(ch)] +
                    momentum * mean.data[static_cast<size_t>(ch)];
                running_var.data[static_cast<size_t>(ch)] =
                    (1.0 - momentum) * running_var.data[static_cast<size_t>(ch)] + momentum * unbiased;
            }
        }
    } else {
        mean = running_mean;
        var = running_var;
    }

    Tensor y = zeros_like(xv);
    for (int64_t ch = 0; ch < c; ++ch) {
        const double mu = mean.data[static_cast<size_t>(ch)];
        const double inv_std = 1.0 / std::sqrt(var.data[static_cast<size_t>(ch)] + eps);
        const double g = gv.data[static_cast<size_t>(ch)];
        const double b = bv.data[static_cast<size_t>(ch)];
        for (int64_t n = 0; n < xv.n(); ++n)
            for (int64_t h = 0; h < xv.h(); ++h)
                for (int64_t w = 0; w < xv.w(); ++w)
                    y.at(n, ch, h, w) = g * (xv.at(n, ch, h, w) - mu) * inv_std + b;
    }

    Node node;
    node.op = "batchnorm";
    node.parents = {x, gamma, beta};
    node.requires_grad =
        this->node(x).requires_grad || this->node(gamma).requires_grad || this->node(beta).requires_grad;
    node.value = std::move(y);
    node.backward = [x, gamma, beta, mean, var, eps, train](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        const Tensor& gv = t.value(gamma);
        const int64_t c = gv.extent(0);
        const int64_t m = xv.n() * xv.h() * xv.w();

        Tensor gx = zeros_like(xv);
        Tensor ggamma = zeros({c});
        Tensor gbeta = zeros({c});

        for (int64_t ch = 0; ch < c; ++ch) {
            const double mu = mean.data[static_cast<size_t>(ch)];
            const double inv_std = 1.0 / std::sqrt(var.data[static_cast<size_t>(ch)] + eps);
            const double g = gv.data[static_cast<size_t>(ch)];

            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int64_t n = 0; n < xv.n(); ++n)
                for (int64_t h = 0; h < xv.h(); ++h)
                    for (int64_t w = 0; w < xv.w(); ++w) {
                        const double xhat = (xv.at(n, ch, h, w) - mu) * inv_std;
                        const double gyv = gy.at(n, ch, h, w);
                        sum_gy += gyv;
                        sum_gy_xhat += gyv * xhat;
                    }
            ggamma.data[static_cast<size_t>(ch)] = sum_gy_xhat;
            gbeta.data[static_cast<size_t>(ch)] = sum_gy;

            if (train) {
                // batch statistics treated as functions of the input
                const double inv_m = 1.0 / static_cast<double>(m);
                for (int64_t n = 0; n < xv.n(); ++n)
                    for (int64_t h = 0; h < xv.h(); ++h)
                        for (int64_t w = 0; w < xv.w(); ++w) {
                            const double xhat = (xv.at(n, ch, h, w) - mu) * inv_std;
                            gx.at(n, ch, h, w) =
                                g * inv_std *
                                (gy.at(n, ch, h, w) - sum_gy * inv_m - xhat * sum_gy_xhat * inv_m);
                        }
            } else {
                for (int64_t n = 0; n < xv.n(); ++n)
                    for (int64_t h = 0; h < xv.h(); ++h)
                        for (int64_t w = 0; w < xv.w(); ++w)
                            gx.at(n, ch, h, w) = gy.at(n, ch, h, w) * g * inv_std;
            }
        }
        t.add_grad(x, gx);
        t.add_grad(gamma, ggamma);
        t.add_grad(beta, gbeta);
    };
    return push(std::move(node));
}

int32_t Tape::linear(int32_t x, int32_t weight, int32_t bias) {
    Tensor y = rfa::linear(value(x), value(weight), value(bias));
    Node n;
    n.op = "linear";
    n.parents = {x, weight, bias};
    n.requires_grad = node(x).requires_grad || node(weight).requires_grad || node(bias).requires_grad;
    n.value = std::move(y);
    n.backward = [x, weight, bias](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        const Tensor& wv = t.value(weight);
        const int64_t n = xv.extent(0), fin = xv.extent(1), fout = wv.extent(0);
        Tensor gx = zeros_like(xv);
        Tensor gw = zeros_like(wv);
        Tensor gb = zeros({fout});
        for (int64_t i = 0; i < n; ++i)
            for (int64_t o = 0; o < fout; ++o) {
                const double g = gy.at2(i, o);
                gb.data[static_cast<size_t>(o)] += g;
                for (int64_t f = 0; f < fin; ++f) {
                    gx.at2(i, f) += g * wv.at2(o, f);
                    gw.at2(o, f) += g * xv.at2(i, f);
                }
            }
        t.add_grad(x, gx);
        t.add_grad(weight, gw);
        t.add_grad(bias, gb);
    };
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise and shape ops

int32_t Tape::mul(int32_t a, int32_t b) {
    Tensor y = ewise(value(a), value(b), EwiseOp::mul);
    Node n;
    n.op = "mul";
    n.parents = {a, b};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = std::move(y);
    n.backward = [a, b](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        if (t.node(a).requires_grad)
            t.add_grad(a, reduce_to_shape(ewise(gy, t.value(b), EwiseOp::mul), t.value(a).shape));
        if (t.node(b).requires_grad)
            t.add_grad(b, reduce_to_shape(ewise(gy, t.value(a), EwiseOp::mul), t.value(b).shape));
    };
    return push(std::move(n));
}

int32_t Tape::add(int32_t a, int32_t b) {
    Tensor y = ewise(value(a), value(b), EwiseOp::add);
    Node n;
    n.op = "add";
    n.parents = {a, b};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = std::move(y);
    n.backward = [a, b](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        if (t.node(a).requires_grad) t.add_grad(a, reduce_to_shape(gy, t.value(a).shape));
        if (t.node(b).requires_grad) t.add_grad(b, reduce_to_shape(gy, t.value(b).shape));
    };
    return push(std::move(n));
}

int32_t Tape::scale(int32_t x, double s) {
    Tensor y = value(x);
    for (double& v : y.data) v *= s;
    return unary("scale", x, std::move(y), [x, s](Tape& t, int32_t self) {
        Tensor g = t.grad(self);
        for (double& v : g.data) v *= s;
        t.add_grad(x, g);
    });
}

int32_t Tape::reshape_to(int32_t x, Shape shape) {
    Tensor y = reshape(value(x), shape);
    return unary("reshape", x, std::move(y), [x](Tape& t, int32_t self) {
        t.add_grad(x, reshape(t.grad(self), t.value(x).shape));
    });
}

int32_t Tape::permute_axes(int32_t x, std::vector<int64_t> axes) {
    Tensor y = permute(value(x), axes);
    std::vector<int64_t> inverse(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inverse[static_cast<size_t>(axes[i])] = static_cast<int64_t>(i);
    return unary("permute", x, std::move(y), [x, inverse](Tape& t, int32_t self) {
        t.add_grad(x, permute(t.grad(self), inverse));
    });
}

int32_t Tape::concat(int32_t a, int32_t b, int64_t axis) {
    Tensor y = concat_axis(value(a), value(b), axis);
    Node n;
    n.op = "concat";
    n.parents = {a, b};
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = std::move(y);
    const int64_t ea = value(a).shape[static_cast<size_t>(axis)];
    const int64_t eb = value(b).shape[static_cast<size_t>(axis)];
    n.backward = [a, b, axis, ea, eb](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        if (t.node(a).requires_grad) t.add_grad(a, narrow_axis(gy, axis, 0, ea));
        if (t.node(b).requires_grad) t.add_grad(b, narrow_axis(gy, axis, ea, eb));
    };
    return push(std::move(n));
}

int32_t Tape::narrow(int32_t x, int64_t axis, int64_t start, int64_t len) {
    Tensor y = narrow_axis(value(x), axis, start, len);
    return unary("narrow", x, std::move(y), [x, axis, start, len](Tape& t, int32_t self) {
        const Tensor& gy = t.grad(self);
        const Tensor& xv = t.value(x);
        Tensor gx = zeros_like(xv);
        int64_t outer = 1, inner = 1;
        for (int64_t i = 0; i < axis; ++i) outer *= xv.shape[static_cast<size_t>(i)];
        for (int64_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.shape[static_cast<size_t>(i)];
        const int64_t extent = xv.shape[static_cast<size_t>(axis)];
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(gy.data.begin() + o * len * inner, len * inner,
                        gx.data.begin() + (o * extent + start) * inner);
        t.add_grad(x, gx);
    });
}

int32_t Tape::cross_entropy(int32_t logits, std::vector<int64_t> labels) {
    const Tensor& lv = value(logits);
    check(lv.rank() == 2, "cross_entropy expects rank-2 logits, got " + shape_str(lv.shape));
    const int64_t n = lv.extent(0), k = lv.extent(1);
    check(static_cast<int64_t>(labels.size()) == n, "cross_entropy label count mismatch");
    for (int64_t label : labels)
        check(label >= 0 && label < k, "label " + std::to_string(label) + " out of range for " +
                                           std::to_string(k) + " classes");
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < k; ++j) m = std::max(m, lv.at2(i, j));
        double lse = 0.0;
        for (int64_t j = 0; j < k; ++j) lse += std::exp(lv.at2(i, j) - m);
        loss += m + std::log(lse) - lv.at2(i, labels[static_cast<size_t>(i)]);
    }
    loss /= static_cast<double>(n);

    return unary("cross_entropy", logits, Tensor({1}, {loss}),
                 [logits, labels = std::move(labels)](Tape& t, int32_t self) {
                     const double g = t.grad(self).data[0];
                     const Tensor& lv = t.value(logits);
                     const int64_t n = lv.extent(0), k = lv.extent(1);
                     Tensor gl = zeros_like(lv);
                     for (int64_t i = 0; i < n; ++i) {
                         double m = -std::numeric_limits<double>::infinity();
                         for (int64_t j = 0; j < k; ++j) m = std::max(m, lv.at2(i, j));
                         double lse = 0.0;
                         for (int64_t j = 0; j < k; ++j) lse += std::exp(lv.at2(i, j) - m);
                         for (int64_t j = 0; j < k; ++j) {
                             const double p = std::exp(lv.at2(i, j) - m) / lse;
                             const double onehot = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                             gl.at2(i, j) = g * (p - onehot) / static_cast<double>(n);
                         }
                     }
                     t.add_grad(logits, gl);
                 });
}

int32_t Tape::weighted_sum(int32_t x, Tensor weights) {
    const Tensor& xv = value(x);
    check(xv.shape == weights.shape, "weighted_sum shape mismatch: " + shape_str(xv.shape) + " vs " +
                                         shape_str(weights.shape));
    double s = 0.0;
    for (size_t i = 0; i < xv.data.size(); ++i) s += xv.data[i] * weights.data[i];
    return unary("weighted_sum", x, Tensor({1}, {s}), [x, w = std::move(weights)](Tape& t, int32_t self) {
        const double g = t.grad(self).data[0];
        Tensor gx = w;
        for (double& v : gx.data) v *= g;
        t.add_grad(x, gx);
    });
}

} // namespace rfa
