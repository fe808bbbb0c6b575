#include <gtest/gtest.h>

#include "rfa/rfa_layers.hpp"

#include <cmath>

using namespace rfa;

static Tensor layer_value(Tape& t, int32_t id) { return t.value(id); }

TEST(RfaAttentionTest, ZeroLogitsGiveUniformAttention) {
    SeededRng rng(60);
    RfaConvLayer layer = RfaConvLayer::make(3, 4, 3, 1, rng);
    for (double& v : layer.weight_branch.weight.value.data) v = 0.0;
    Tape t;
    const int32_t a = layer.attention(t, t.leaf(randn({1, 3, 6, 6}, rng)));
    for (double v : t.value(a).data) EXPECT_NEAR(v, 1.0 / 9.0, 1e-15);
}

TEST(RfaAttentionTest, KOneAttentionIsIdenticallyOne) {
    SeededRng rng(61);
    RfaConvLayer layer = RfaConvLayer::make(3, 4, 1, 1, rng);
    Tape t;
    const int32_t a = layer.attention(t, t.leaf(randn({1, 3, 5, 5}, rng)));
    for (double v : t.value(a).data) EXPECT_EQ(v, 1.0);
}

TEST(RfaAttentionTest, SumsToOnePerWindow) {
    SeededRng rng(62);
    for (int trial = 0; trial < 3; ++trial) {
        RfaConvLayer layer = RfaConvLayer::make(4, 4, 3, 1 + trial % 2, rng);
        Tape t;
        const int32_t a = layer.attention(t, t.leaf(randn({2, 4, 8, 8}, rng)));
        const Tensor& av = t.value(a);
        for (int64_t n = 0; n < av.n(); ++n)
            for (int64_t c = 0; c < 4; ++c)
                for (int64_t h = 0; h < av.h(); ++h)
                    for (int64_t w = 0; w < av.w(); ++w) {
                        double sum = 0.0;
                        for (int64_t j = 0; j < 9; ++j) sum += av.at(n, c * 9 + j, h, w);
                        EXPECT_NEAR(sum, 1.0, 1e-12);
                    }
    }
}

TEST(RfaConvTest, ShapeLawMatchesPaddedConvolution) {
    SeededRng rng(63);
    RfaConvLayer layer = RfaConvLayer::make(8, 16, 3, 1, rng);
    Tape t;
    const int32_t y = layer.forward(t, t.leaf(randn({2, 8, 16, 16}, rng)), ForwardOpts{});
    EXPECT_EQ(t.value(y).shape, (Shape{2, 16, 16, 16}));

    RfaConvLayer strided = RfaConvLayer::make(8, 16, 3, 2, rng);
    Tape t2;
    const int32_t y2 = strided.forward(t2, t2.leaf(randn({2, 8, 16, 16}, rng)), ForwardOpts{});
    EXPECT_EQ(t2.value(y2).shape, (Shape{2, 16, 8, 8}));
}

TEST(RfaConvTest, DebugModeReducesToStandardConvolution) {
    SeededRng rng(64);
    for (int64_t k : {1, 3}) {
        RfaConvLayer layer = RfaConvLayer::make(4, 6, k, 1, rng);
        layer.attention_override = RfaConvLayer::Attention::uniform;
        layer.feature_override = RfaConvLayer::Feature::selector;
        const Tensor x = randn({2, 4, 7, 7}, rng);

        Tape t;
        const int32_t y = layer.forward(t, t.leaf(x), ForwardOpts{});
        Tensor scaled = layer_value(t, y);
        for (double& v : scaled.data) v *= static_cast<double>(k * k);

        ConvParams dense;
        dense.weight = layer.mix.weight.value;
        dense.stride = 1;
        dense.padding = k / 2;
        const Tensor reference = conv2d(x, dense);
        ASSERT_EQ(scaled.shape, reference.shape);
        for (size_t i = 0; i < scaled.data.size(); ++i)
            EXPECT_NEAR(scaled.data[i], reference.data[i], 1e-10);
    }
}

TEST(RfaConvTest, UniformOverrideFillsExactly) {
    SeededRng rng(65);
    RfaConvLayer layer = RfaConvLayer::make(2, 2, 3, 1, rng);
    layer.attention_override = RfaConvLayer::Attention::uniform;
    layer.feature_override = RfaConvLayer::Feature::selector;
    Tape t;
    layer.forward(t, t.leaf(randn({1, 2, 5, 5}, rng)), ForwardOpts{});
    // the override materializes as a constant leaf with every entry 1/k^2
    bool found = false;
    for (int32_t id = 0; id < t.size(); ++id) {
        const Tape::Node& node = t.node(id);
        if (node.op == "leaf" && node.value.rank() == 4 && node.value.c() == 2 * 9) {
            found = true;
            for (double v : node.value.data) EXPECT_EQ(v, 1.0 / 9.0);
        }
    }
    EXPECT_TRUE(found);
}

TEST(RfaConvTest, ParameterCountClosedForm) {
    SeededRng rng(66);
    RfaConvLayer layer = RfaConvLayer::make(8, 16, 3, 1, rng);
    EXPECT_EQ(layer.weight_branch.param_count(), 8 * 9);
    EXPECT_EQ(layer.feature_branch.param_count(), 8 * 9 * 9);
    EXPECT_EQ(layer.feature_bn.param_count(), 2 * 72);
    EXPECT_EQ(layer.mix.param_count(), 16 * 8 * 9 + 16);
    EXPECT_EQ(layer.param_count(), 2032);

    // recount by enumerating the parameter tensors
    std::vector<Param*> params;
    layer.collect(params);
    int64_t total = 0;
    for (const Param* p : params) total += p->value.numel();
    EXPECT_EQ(total, 2032);
}

TEST(RfcbamConvTest, ForcedGatesReduceToHalvedMix) {
    SeededRng rng(67);
    RfcbamConvLayer layer = RfcbamConvLayer::make(4, 4, 3, 1, rng);
    // channel gate forced to 1: huge positive SE bias, zero SE weights
    for (double& v : layer.se_expand.weight.value.data) v = 0.0;
    for (double& v : layer.se_expand.bias.value.data) v = 1e6;
    // spatial gate forced to 0.5: zeroed spatial conv
    for (double& v : layer.spatial.weight.value.data) v = 0.0;

    const Tensor x = randn({1, 4, 6, 6}, rng);
    const ForwardOpts opts{.train = false, .track_running = false};
    Tape t;
    const int32_t y = layer.forward(t, t.leaf(x), opts);

    // reference: mix conv of 0.5 * rearranged feature
    Tape t2;
    const int32_t feat = t2.relu(layer.feature_bn.forward(t2, layer.feature_branch.forward(t2, t2.leaf(x)), opts));
    const int32_t re = t2.rf_rearrange(feat, 4, 3);
    const int32_t halved = t2.scale(re, 0.5);
    const int32_t ref = layer.mix.forward(t2, halved);

    const Tensor& a = t.value(y);
    const Tensor& b = t2.value(ref);
    ASSERT_EQ(a.shape, b.shape);
    for (size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
}

TEST(RfcbamConvTest, ShapeLaw) {
    SeededRng rng(68);
    RfcbamConvLayer layer = RfcbamConvLayer::make(4, 4, 3, 1, rng);
    Tape t;
    const int32_t y = layer.forward(t, t.leaf(randn({1, 4, 8, 8}, rng)), ForwardOpts{});
    EXPECT_EQ(t.value(y).shape, (Shape{1, 4, 8, 8}));
}

TEST(RfcbamConvTest, GatesLieInUnitInterval) {
    SeededRng rng(69);
    RfcbamConvLayer layer = RfcbamConvLayer::make(4, 4, 3, 1, rng);
    const Tensor x = randn({2, 4, 6, 6}, rng);
    Tape t;
    layer.forward(t, t.leaf(x), ForwardOpts{});
    int sigmoid_nodes = 0;
    for (int32_t id = 0; id < t.size(); ++id)
        if (t.node(id).op == "sigmoid") {
            ++sigmoid_nodes;
            for (double v : t.node(id).value.data) {
                EXPECT_GT(v, 0.0);
                EXPECT_LT(v, 1.0);
            }
        }
    EXPECT_EQ(sigmoid_nodes, 2); // channel and spatial gates
}

TEST(RfcaConvTest, UnitGatesReduceToMixOfRearranged) {
    SeededRng rng(70);
    RfcaConvLayer layer = RfcaConvLayer::make(4, 4, 3, 1, rng);
    // sigmoid(1e6) == 1.0 exactly in double arithmetic
    for (double& v : layer.attn_h.weight.value.data) v = 0.0;
    for (double& v : layer.attn_w.weight.value.data) v = 0.0;
    layer.attn_h.bias.emplace(Tensor({4}, std::vector<double>(4, 1e6)), "attn_h.bias");
    layer.attn_w.bias.emplace(Tensor({4}, std::vector<double>(4, 1e6)), "attn_w.bias");

    const Tensor x = randn({1, 4, 6, 6}, rng);
    const ForwardOpts opts{.train = false, .track_running = false};
    Tape t;
    const int32_t y = layer.forward(t, t.leaf(x), opts);

    Tape t2;
    const int32_t feat = t2.relu(layer.feature_bn.forward(t2, layer.feature_branch.forward(t2, t2.leaf(x)), opts));
    const int32_t re = t2.rf_rearrange(feat, 4, 3);
    const int32_t ref = layer.mix.forward(t2, re);

    const Tensor& a = t.value(y);
    const Tensor& b = t2.value(ref);
    ASSERT_EQ(a.shape, b.shape);
    for (size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
}

TEST(RfcaConvTest, ConstantInputGivesSpatiallyConstantOutputForPointwiseWindows) {
    SeededRng rng(71);
    RfcaConvLayer layer = RfcaConvLayer::make(4, 4, 1, 1, rng); // k=1: no border effects
    const Tensor x = full({1, 4, 6, 6}, 0.37);
    Tape t;
    const int32_t y = layer.forward(t, t.leaf(x), ForwardOpts{.train = false, .track_running = false});
    const Tensor& yv = t.value(y);
    for (int64_t c = 0; c < 4; ++c) {
        const double first = yv.at(0, c, 0, 0);
        for (int64_t h = 0; h < yv.h(); ++h)
            for (int64_t w = 0; w < yv.w(); ++w) EXPECT_NEAR(yv.at(0, c, h, w), first, 1e-12);
    }
}

TEST(RfcaConvTest, GateGeometry) {
    SeededRng rng(72);
    RfcaConvLayer layer = RfcaConvLayer::make(4, 4, 3, 1, rng);
    const Tensor x = randn({2, 4, 6, 6}, rng);
    Tape t;
    layer.forward(t, t.leaf(x), ForwardOpts{});
    // gates: (N,C,H'k,1) and (N,C,1,W'k), both strictly inside (0,1)
    std::vector<Shape> gate_shapes;
    for (int32_t id = 0; id < t.size(); ++id)
        if (t.node(id).op == "sigmoid") {
            gate_shapes.push_back(t.node(id).value.shape);
            for (double v : t.node(id).value.data) {
                EXPECT_GT(v, 0.0);
                EXPECT_LT(v, 1.0);
            }
        }
    ASSERT_EQ(gate_shapes.size(), 2u);
    EXPECT_EQ(gate_shapes[0], (Shape{2, 4, 18, 1}));
    EXPECT_EQ(gate_shapes[1], (Shape{2, 4, 1, 18}));
}

TEST(NaiveSpatialAttnTest, ZeroedAttentionConvHalvesLinearConv) {
    SeededRng rng(73);
    NaiveSpatialAttnConv layer = NaiveSpatialAttnConv::make(3, 4, 3, 1, rng);
    for (double& v : layer.attention.weight.value.data) v = 0.0; // sigmoid(0) = 0.5
    const Tensor x = randn({1, 3, 6, 6}, rng);

    Tape t;
    const int32_t y = layer.forward(t, t.leaf(x), ForwardOpts{});
    const Tensor reference = conv2d(x, layer.conv.as_params());
    const Tensor& yv = t.value(y);
    ASSERT_EQ(yv.shape, reference.shape);
    for (size_t i = 0; i < yv.data.size(); ++i)
        EXPECT_NEAR(yv.data[i], 0.5 * reference.data[i], 1e-12);
}

TEST(NaiveSpatialAttnTest, ComposedOraclesMatch) {
    SeededRng rng(74);
    NaiveSpatialAttnConv layer = NaiveSpatialAttnConv::make(3, 4, 3, 1, rng);
    const Tensor x = randn({2, 3, 6, 6}, rng);

    Tape t;
    const int32_t y = layer.forward(t, t.leaf(x), ForwardOpts{});

    const Tensor gate = sigmoid(conv2d(channel_meanmax(x), layer.attention.as_params()));
    const Tensor weighted = ewise(x, gate, EwiseOp::mul);
    const Tensor reference = conv2d(weighted, layer.conv.as_params());
    const Tensor& yv = t.value(y);
    ASSERT_EQ(yv.shape, (Shape{2, 4, 6, 6}));
    ASSERT_EQ(yv.shape, reference.shape);
    for (size_t i = 0; i < yv.data.size(); ++i) EXPECT_NEAR(yv.data[i], reference.data[i], 1e-12);
}

TEST(SharedWeightAuditTest, OverlapIdentitiesOnFourByFour) {
    SeededRng rng(75);
    const Tensor map = rand_uniform({1, 1, 4, 4}, rng);
    const AuditReport report = shared_weight_audit(map, 3);
    EXPECT_EQ(report.violations, 0);
    EXPECT_GT(report.overlapping_pairs, 0);
    EXPECT_EQ(report.windows, 4);
    EXPECT_EQ(report.dof_pixel, 16);
    EXPECT_EQ(report.dof_rf_per_channel, 9 * 2 * 2);

    // the specific forced equalities: horizontally adjacent windows share
    // columns, A(win(h,w), j=1) == A(win(h,w+1), j=0)
    const RfFeature f = unfold(map, 3, 1, 0);
    for (int64_t h = 0; h < 2; ++h)
        EXPECT_EQ(f.at(0, 0, 1, h, 0), f.at(0, 0, 0, h, 1));
}

TEST(SharedWeightAuditTest, NoOverlapForKOne) {
    SeededRng rng(76);
    const AuditReport report = shared_weight_audit(rand_uniform({1, 1, 5, 5}, rng), 1);
    EXPECT_EQ(report.overlapping_pairs, 0);
    EXPECT_EQ(report.violations, 0);
}

TEST(SharedWeightAuditTest, EveryKAtLeastTwoSharesPairs) {
    SeededRng rng(77);
    const Tensor map = rand_uniform({1, 1, 8, 8}, rng);
    for (int64_t k = 2; k <= 5; ++k) {
        const AuditReport report = shared_weight_audit(map, k);
        EXPECT_GE(report.overlapping_pairs, 1) << "k=" << k;
        EXPECT_EQ(report.violations, 0) << "k=" << k;
    }
}

TEST(SharedWeightAuditTest, RfaWindowsAreIndependentlyParameterized) {
    // perturbing one window's logits moves only that window's attention
    SeededRng rng(78);
    Tensor logits = randn({1, 2 * 9, 4, 4}, rng);
    const Tensor base = softmax_taps(logits, 2);
    const int64_t h = 2, w = 1, c = 1;
    for (int64_t j = 0; j < 9; ++j) logits.at(0, c * 9 + j, h, w) += 0.75;
    const Tensor bumped = softmax_taps(logits, 2);
    for (int64_t cc = 0; cc < 2; ++cc)
        for (int64_t j = 0; j < 9; ++j)
            for (int64_t hh = 0; hh < 4; ++hh)
                for (int64_t ww = 0; ww < 4; ++ww) {
                    const double delta =
                        std::abs(bumped.at(0, cc * 9 + j, hh, ww) - base.at(0, cc * 9 + j, hh, ww));
                    if (cc == c && hh == h && ww == w)
                        continue; // the shifted window itself may move (uniform shift: it does not)
                    EXPECT_EQ(delta, 0.0) << cc << " " << j << " " << hh << " " << ww;
                }
}

TEST(LayerGeometryTest, OutputExtentLawHoldsForAllThreeLayers) {
    SeededRng rng(79);
    const Tensor x = randn({1, 4, 9, 9}, rng);
    for (int64_t stride : {1, 2}) {
        const int64_t expected = (9 + 2 * 1 - 3) / stride + 1;
        RfaConvLayer rfa = RfaConvLayer::make(4, 5, 3, stride, rng);
        RfcbamConvLayer rfcbam = RfcbamConvLayer::make(4, 5, 3, stride, rng);
        RfcaConvLayer rfca = RfcaConvLayer::make(4, 5, 3, stride, rng);
        Tape t;
        EXPECT_EQ(t.value(rfa.forward(t, t.leaf(x), ForwardOpts{})).h(), expected);
        EXPECT_EQ(t.value(rfcbam.forward(t, t.leaf(x), ForwardOpts{})).h(), expected);
        EXPECT_EQ(t.value(rfca.forward(t, t.leaf(x), ForwardOpts{})).h(), expected);
    }
}

TEST(LayerIoTest, NamedTensorsRoundTrip) {
    SeededRng rng(80);
    RfaConvLayer layer = RfaConvLayer::make(3, 4, 3, 1, rng);
    NamedTensors sections;
    layer.named_tensors("layer1.0.rfa", sections);
    std::map<std::string, Tensor> as_map(sections.begin(), sections.end());
    EXPECT_TRUE(as_map.count("layer1.0.rfa.weight_branch.weight"));
    EXPECT_TRUE(as_map.count("layer1.0.rfa.feature_bn.running_mean"));

    RfaConvLayer other = RfaConvLayer::make(3, 4, 3, 1, rng);
    other.load_tensors("layer1.0.rfa", as_map);
    EXPECT_EQ(other.mix.weight.value.data, layer.mix.weight.value.data);
}
