#include <gtest/gtest.h>

#include "rfa/model_zoo.hpp"
#include "rfa/tensor_io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

using namespace rfa;

TEST(CostTest, SingleConvClosedForm) {
    SeededRng rng(90);
    Conv conv = Conv::make(8, 16, 3, 1, 1, 1, true, rng, "conv");
    EXPECT_EQ(conv.param_count(), 16 * 8 * 9 + 16);
    EXPECT_EQ(conv.macs(16, 16), 16 * 16 * 16 * 8 * 9);
}

TEST(CostTest, ResNet18StandardMatchesPublishedCounts) {
    SeededRng rng(91);
    Network net = build_model(resnet18_spec(ConvKind::standard), rng);
    const CostReport cost = count_cost(net, 224, 224);
    EXPECT_EQ(cost.params, 11689512);
    EXPECT_NEAR(static_cast<double>(cost.macs), 1.82e9, 0.02 * 1.82e9);
}

TEST(CostTest, ResNet34StandardMatchesPublishedCounts) {
    SeededRng rng(92);
    Network net = build_model(resnet34_spec(ConvKind::standard), rng);
    const CostReport cost = count_cost(net, 224, 224);
    EXPECT_EQ(cost.params, 21797672);
    EXPECT_NEAR(static_cast<double>(cost.macs) / 1e9, 3.68, 0.08);
}

TEST(CostTest, RfaVariantIncrementIsClosedForm) {
    SeededRng rng(93);
    Network standard = build_model(resnet18_spec(ConvKind::standard), rng);
    Network rfa = build_model(resnet18_spec(ConvKind::rfa), rng);
    const int64_t measured =
        count_cost(rfa, 224, 224).params - count_cost(standard, 224, 224).params;

    // per replaced conv: weight branch C*k^2, feature branch C*k^4,
    // normalization 2*C*k^2, and the mix bias C_out the original conv lacked
    int64_t formula = 0;
    const std::vector<std::pair<int64_t, int64_t>> blocks = {
        {64, 64}, {64, 64}, {64, 128}, {128, 128}, {128, 256}, {256, 256}, {256, 512}, {512, 512}};
    for (const auto& [c_in, c_out] : blocks)
        formula += c_in * 9 + c_in * 81 + 2 * c_in * 9 + c_out;
    EXPECT_EQ(measured, formula);
    EXPECT_EQ(measured, 160896);
}

TEST(CostTest, RfaRatiosSitInPaperWindow) {
    SeededRng rng(94);
    Network standard = build_model(resnet18_spec(ConvKind::standard), rng);
    Network rfa = build_model(resnet18_spec(ConvKind::rfa), rng);
    const CostReport base = count_cost(standard, 224, 224);
    const CostReport variant = count_cost(rfa, 224, 224);
    const double param_ratio = static_cast<double>(variant.params) / static_cast<double>(base.params);
    const double mac_ratio = static_cast<double>(variant.macs) / static_cast<double>(base.macs);
    EXPECT_GE(param_ratio, 1.010);
    EXPECT_LE(param_ratio, 1.016);
    EXPECT_GE(mac_ratio, 1.03);
    EXPECT_LE(mac_ratio, 1.07);
}

TEST(BuildTest, TinyNetRunsForwardAtMnistScale) {
    SeededRng rng(95);
    Network net = build_model(tinynet_spec(ConvKind::standard, 10, 1), rng);
    Tape t;
    const auto trace = net.forward(t, t.leaf(zeros({1, 1, 28, 28})), ForwardOpts{});
    EXPECT_EQ(t.value(trace.logits).shape, (Shape{1, 10}));
}

TEST(BuildTest, FactoryGeometryInterchangeable) {
    SeededRng data_rng(96);
    const Tensor x = randn({1, 3, 64, 64}, data_rng);
    Shape expected;
    for (ConvKind kind : {ConvKind::standard, ConvKind::rfa, ConvKind::rfcbam, ConvKind::rfca,
                          ConvKind::naive_sa}) {
        SeededRng rng(97);
        Network net = build_model(resnet18_spec(kind, 10), rng);
        Tape t;
        const auto trace = net.forward(t, t.leaf(x), ForwardOpts{.train = false});
        if (expected.empty())
            expected = t.value(trace.logits).shape;
        else
            EXPECT_EQ(t.value(trace.logits).shape, expected) << to_string(kind);
        EXPECT_EQ(t.value(trace.last_stage).shape, (Shape{1, 512, 2, 2})) << to_string(kind);
    }
}

TEST(BuildTest, RejectsChannelMismatch) {
    SeededRng rng(98);
    Network net = build_model(tinynet_spec(ConvKind::standard, 10, 1), rng);
    Tape t;
    EXPECT_THROW(net.forward(t, t.leaf(zeros({1, 3, 16, 16})), ForwardOpts{}), Error);
}

TEST(TopkTest, PerfectAndTiedPredictions) {
    // logits equal to one-hot labels: everything correct
    Tensor logits = zeros({4, 10});
    std::vector<int64_t> labels = {0, 3, 7, 9};
    for (int64_t i = 0; i < 4; ++i) logits.at2(i, labels[static_cast<size_t>(i)]) = 1.0;
    EXPECT_EQ(topk_hits(logits, labels, 1), 4);
    EXPECT_EQ(topk_hits(logits, labels, 5), 4);

    // all-equal logits: ties break toward the lower class index
    Tensor flat = zeros({1, 10});
    EXPECT_EQ(topk_hits(flat, {0}, 1), 1);
    EXPECT_EQ(topk_hits(flat, {4}, 5), 1);
    EXPECT_EQ(topk_hits(flat, {5}, 5), 0);
}

TEST(TopkTest, UniformRandomPredictorMatchesBinomialExpectation) {
    SeededRng rng(99);
    const int64_t n = 10000;
    Tensor logits = randn({n, 10}, rng);
    std::vector<int64_t> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = rng.uniform_int(10);
    const double top1 = static_cast<double>(topk_hits(logits, labels, 1)) / n;
    const double top5 = static_cast<double>(topk_hits(logits, labels, 5)) / n;
    EXPECT_NEAR(top1, 0.10, 0.03);
    EXPECT_NEAR(top5, 0.50, 0.03);
    EXPECT_GE(top5, top1);
}

TEST(TrainTest, ZeroLearningRateLeavesParametersBitwiseUnchanged) {
    SeededRng rng(100);
    Network net = build_model(tinynet_spec(ConvKind::standard, 2, 1), rng);
    const SyntheticBars bars = make_oriented_bars(64, 16, 5);

    std::vector<Tensor> before;
    for (Param* p : net.parameters()) before.push_back(p->value);

    TrainOptions opts;
    opts.epochs = 1;
    opts.batch = 16;
    opts.lr0 = 0.0;
    opts.seed = 5;
    train(net, bars.data, opts);

    const auto params = net.parameters();
    for (size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i]->value.data, before[i].data);
}

TEST(TrainTest, SameSeedSameTrainLog) {
    const SyntheticBars bars = make_oriented_bars(128, 16, 6);
    TrainOptions opts;
    opts.epochs = 2;
    opts.batch = 16;
    opts.lr0 = 0.05;
    opts.seed = 11;

    TrainLog logs[2];
    Tensor finals[2];
    for (int run = 0; run < 2; ++run) {
        SeededRng rng(101);
        Network net = build_model(tinynet_spec(ConvKind::standard, 2, 1), rng);
        logs[run] = train(net, bars.data, opts);
        finals[run] = net.parameters()[0]->value;
    }
    ASSERT_EQ(logs[0].size(), logs[1].size());
    for (size_t i = 0; i < logs[0].size(); ++i) {
        EXPECT_EQ(logs[0][i].loss, logs[1][i].loss);
        EXPECT_EQ(logs[0][i].top1, logs[1][i].top1);
    }
    EXPECT_EQ(finals[0].data, finals[1].data);
}

TEST(TrainTest, FreshTenClassHeadStartsNearLogTen) {
    SeededRng rng(102);
    Network net = build_model(tinynet_spec(ConvKind::standard, 10, 1), rng);
    SeededRng data_rng(103);
    const Tensor batch = rand_uniform({32, 1, 16, 16}, data_rng);
    std::vector<int64_t> labels(32);
    for (auto& l : labels) l = data_rng.uniform_int(10);

    Tape t;
    const auto trace = net.forward(t, t.leaf(batch), ForwardOpts{.train = true});
    const int32_t loss = t.cross_entropy(trace.logits, labels);
    EXPECT_NEAR(t.value(loss).data[0], std::log(10.0), 0.2);
}

TEST(TrainTest, SingleBatchOverfitReachesNearZeroLoss) {
    SeededRng rng(104);
    Network net = build_model(tinynet_spec(ConvKind::standard, 2, 1), rng);
    const SyntheticBars bars = make_oriented_bars(16, 16, 7);

    // 200 plain SGD steps on one fixed batch
    TrainOptions opts;
    opts.epochs = 200;
    opts.batch = 16;
    opts.lr0 = 0.05;
    opts.decay_epochs = {};
    opts.seed = 8;
    const TrainLog log = train(net, bars.data, opts);
    EXPECT_LE(log.back().loss, 0.01);
}

TEST(TrainTest, NonFiniteLossNamesTheLayer) {
    SeededRng rng(105);
    Network net = build_model(tinynet_spec(ConvKind::standard, 2, 1), rng);
    // poison the head so the divergence reaches the loss
    net.fc.bias.value.data[0] = std::numeric_limits<double>::infinity();
    const SyntheticBars bars = make_oriented_bars(16, 16, 9);
    TrainOptions opts;
    opts.epochs = 1;
    opts.batch = 16;
    try {
        train(net, bars.data, opts);
        FAIL() << "expected a non-finite diagnostic";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("fc"), std::string::npos);
    }
}

TEST(EvalTest, CheckpointRoundTripPreservesPredictions) {
    SeededRng rng(106);
    Network net = build_model(tinynet_spec(ConvKind::rfa, 2, 1), rng);
    const SyntheticBars bars = make_oriented_bars(64, 16, 10);
    TrainOptions opts;
    opts.epochs = 1;
    opts.batch = 16;
    opts.lr0 = 0.05;
    train(net, bars.data, opts);

    const std::string path = "/tmp/rfa_model_zoo_ckpt_test.rfat";
    const NamedTensors sections = net.named_tensors();
    save_checkpoint(path, sections);

    SeededRng rng2(107); // different init, then fully overwritten by the load
    Network restored = build_model(tinynet_spec(ConvKind::rfa, 2, 1), rng2);
    restored.load_tensors(load_checkpoint(path));

    const EvalResult a = evaluate(net, bars.data);
    const EvalResult b = evaluate(restored, bars.data);
    EXPECT_EQ(a.top1, b.top1);
    EXPECT_EQ(a.top5, b.top5);
    std::remove(path.c_str());
}
