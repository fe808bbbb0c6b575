#include "rfa/gradcheck.hpp"

#include "rfa/rfa_layers.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace rfa {

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor g = zeros_like(x);
    Tensor probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const size_t ui = static_cast<size_t>(i);
        probe.data[ui] = x.data[ui] + h;
        const double fp = f(probe);
        probe.data[ui] = x.data[ui] - h;
        const double fm = f(probe);
        probe.data[ui] = x.data[ui];
        g.data[ui] = (fp - fm) / (2.0 * h);
    }
    return g;
}

static double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

// Compare one analytic gradient against its numeric counterpart, flagging
// the first non-finite coordinate by name.
static GradCheckEntry compare_grads(const std::string& name, const Tensor& analytic,
                                    const Tensor& numeric) {
    GradCheckEntry entry{name, 0.0};
    for (int64_t i = 0; i < analytic.numel(); ++i) {
        const double a = analytic.data[static_cast<size_t>(i)];
        const double n = numeric.data[static_cast<size_t>(i)];
        if (!std::isfinite(a) || !std::isfinite(n)) {
            entry.param = name + "[" + std::to_string(i) + "] non-finite";
            entry.max_rel_err = std::numeric_limits<double>::infinity();
            return entry;
        }
        entry.max_rel_err = std::max(entry.max_rel_err, rel_err(a, n));
    }
    return entry;
}

GradCheckReport gradcheck(const CheckTarget& target, uint64_t seed, bool corrupt_conv_backward) {
    GradCheckReport report;
    report.op = target.name;
    report.tol = target.tol;

    // analytic pass
    Tape tape;
    tape.corrupt_conv_backward = corrupt_conv_backward;
    const int32_t x_id = tape.leaf(target.x, target.check_input);
    const int32_t out = target.forward(tape, x_id);

    SeededRng proj_rng(seed * 0x9E3779B9ULL + 0x51ED);
    const Tensor projection = randn(tape.value(out).shape, proj_rng);
    const int32_t scalar = tape.weighted_sum(out, projection);

    for (Param* p : target.params) p->zero_grad();
    tape.backward(scalar, Tensor({1}, {1.0}));
    tape.accumulate_param_grads();

    // numeric oracle: same forward graph, same projection, fresh tape
    const auto eval_with_x = [&](const Tensor& x) -> double {
        Tape t;
        const int32_t xi = t.leaf(x);
        const int32_t o = target.forward(t, xi);
        const Tensor& ov = t.value(o);
        double s = 0.0;
        for (size_t i = 0; i < ov.data.size(); ++i) s += ov.data[i] * projection.data[i];
        return s;
    };

    if (target.check_input) {
        const Tensor numeric = finite_diff(eval_with_x, target.x);
        report.breakdown.push_back(compare_grads("input", tape.grad(x_id), numeric));
    }

    for (Param* p : target.params) {
        const Tensor original = p->value;
        const auto eval_with_param = [&](const Tensor& candidate) -> double {
            p->value = candidate;
            const double s = eval_with_x(target.x);
            return s;
        };
        const Tensor numeric = finite_diff(eval_with_param, original);
        p->value = original;
        report.breakdown.push_back(compare_grads(p->name.empty() ? "param" : p->name, p->grad, numeric));
    }

    for (const GradCheckEntry& e : report.breakdown)
        report.max_rel_err = std::max(report.max_rel_err, e.max_rel_err);
    report.pass = std::isfinite(report.max_rel_err) && report.max_rel_err <= report.tol;
    return report;
}

// ---------------------------------------------------------------------------
// the standard suite

static std::vector<Param*> collected(auto& block) {
    std::vector<Param*> out;
    block.collect(out);
    return out;
}

std::vector<GradCheckReport> gradcheck_suite(uint64_t seed, double primitive_tol, double layer_tol,
                                             bool corrupt_conv_backward) {
    std::vector<GradCheckReport> reports;
    SeededRng rng(seed);
    const auto run = [&](const CheckTarget& target) {
        reports.push_back(gradcheck(target, seed, corrupt_conv_backward));
    };

    {
        Conv conv = Conv::make(2, 4, 3, 1, 1, 1, true, rng, "conv");
        run({"conv2d", randn({1, 2, 5, 5}, rng),
             [&](Tape& t, int32_t x) { return conv.forward(t, x); },
             collected(conv), primitive_tol});
    }
    {
        Conv conv = Conv::make(4, 6, 3, 2, 1, 2, false, rng, "conv");
        run({"conv2d_grouped", randn({2, 4, 6, 6}, rng),
             [&](Tape& t, int32_t x) { return conv.forward(t, x); },
             collected(conv), primitive_tol});
    }
    run({"unfold", randn({1, 2, 5, 5}, rng),
         [](Tape& t, int32_t x) { return t.unfold_rf(x, 3, 1, 1); }, {}, primitive_tol});
    run({"rf_rearrange", randn({1, 2 * 9, 3, 3}, rng),
         [](Tape& t, int32_t x) { return t.rf_rearrange(x, 2, 3); }, {}, primitive_tol});
    run({"avgpool2d", randn({1, 3, 6, 6}, rng),
         [](Tape& t, int32_t x) { return t.avgpool2d(x, 3, 2, 1); }, {}, primitive_tol});
    run({"maxpool2d", randn({1, 3, 6, 6}, rng),
         [](Tape& t, int32_t x) { return t.maxpool2d(x, 3, 2, 1); }, {}, primitive_tol});
    run({"global_avgpool", randn({2, 3, 4, 5}, rng),
         [](Tape& t, int32_t x) { return t.global_avgpool(x); }, {}, primitive_tol});
    run({"global_maxpool", randn({2, 3, 4, 5}, rng),
         [](Tape& t, int32_t x) { return t.global_maxpool(x); }, {}, primitive_tol});
    run({"pool_h", randn({2, 3, 4, 5}, rng), [](Tape& t, int32_t x) { return t.pool_h(x); }, {},
         primitive_tol});
    run({"pool_w", randn({2, 3, 4, 5}, rng), [](Tape& t, int32_t x) { return t.pool_w(x); }, {},
         primitive_tol});
    run({"softmax_taps", randn({1, 2 * 9, 2, 2}, rng),
         [](Tape& t, int32_t x) { return t.softmax_taps(x, 2); }, {}, primitive_tol});
    run({"relu", randn({2, 3, 4, 4}, rng), [](Tape& t, int32_t x) { return t.relu(x); }, {},
         primitive_tol});
    run({"sigmoid", randn({2, 3, 4, 4}, rng), [](Tape& t, int32_t x) { return t.sigmoid(x); }, {},
         primitive_tol});
    run({"hardswish", randn({2, 3, 4, 4}, rng), [](Tape& t, int32_t x) { return t.hardswish(x); }, {},
         primitive_tol});
    run({"channel_meanmax", randn({2, 5, 4, 4}, rng),
         [](Tape& t, int32_t x) { return t.channel_meanmax(x); }, {}, primitive_tol});
    {
        BatchNorm bn = BatchNorm::make(3, "bn");
        // randomized affine so the check is not trivially gamma=1, beta=0
        bn.gamma.value = randn({3}, rng);
        bn.beta.value = randn({3}, rng);
        const ForwardOpts opts{.train = true, .track_running = false};
        run({"batchnorm2d", randn({2, 3, 4, 4}, rng),
             [&, opts](Tape& t, int32_t x) { return bn.forward(t, x, opts); },
             collected(bn), primitive_tol});
    }
    {
        Dense dense = Dense::make(6, 4, rng, "linear");
        run({"linear", randn({3, 6}, rng),
             [&](Tape& t, int32_t x) { return dense.forward(t, x); },
             collected(dense), primitive_tol});
    }
    {
        Param gate(randn({1, 3, 1, 1}, rng), "gate");
        run({"ewise_mul", randn({2, 3, 4, 4}, rng),
             [&](Tape& t, int32_t x) { return t.mul(x, t.param(gate)); }, {&gate}, primitive_tol});
    }

    const ForwardOpts layer_opts{.train = true, .track_running = false};
    {
        RfaConvLayer layer = RfaConvLayer::make(4, 6, 3, 1, rng);
        run({"rfaconv", randn({1, 4, 6, 6}, rng),
             [&, layer_opts](Tape& t, int32_t x) mutable { return layer.forward(t, x, layer_opts); },
             collected(layer), layer_tol});
    }
    {
        RfcbamConvLayer layer = RfcbamConvLayer::make(4, 4, 3, 1, rng);
        run({"rfcbamconv", randn({1, 4, 6, 6}, rng),
             [&, layer_opts](Tape& t, int32_t x) mutable { return layer.forward(t, x, layer_opts); },
             collected(layer), layer_tol});
    }
    {
        RfcaConvLayer layer = RfcaConvLayer::make(4, 4, 3, 1, rng);
        run({"rfcaconv", randn({1, 4, 6, 6}, rng),
             [&, layer_opts](Tape& t, int32_t x) mutable { return layer.forward(t, x, layer_opts); },
             collected(layer), layer_tol});
    }
    {
        NaiveSpatialAttnConv layer = NaiveSpatialAttnConv::make(3, 4, 3, 1, rng);
        run({"naive_spatial_attn_conv", randn({1, 3, 6, 6}, rng),
             [&, layer_opts](Tape& t, int32_t x) mutable { return layer.forward(t, x, layer_opts); },
             collected(layer), layer_tol});
    }
    return reports;
}

void write_gradcheck_csv(std::ostream& os, const std::vector<GradCheckReport>& reports) {
    os << "op,max_rel_err,pass\n";
    char buf[64];
    for (const GradCheckReport& r : reports) {
        std::snprintf(buf, sizeof(buf), "%.6e", r.max_rel_err);
        os << r.op << "," << buf << "," << (r.pass ? "1" : "0") << "\n";
    }
}

} // namespace rfa
