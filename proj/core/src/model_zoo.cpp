#include "rfa/model_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace rfa {

ConvKind conv_kind_from_string(const std::string& s) {
    if (s == "standard") return ConvKind::standard;
    if (s == "rfa") return ConvKind::rfa;
    if (s == "rfcbam") return ConvKind::rfcbam;
    if (s == "rfca") return ConvKind::rfca;
    if (s == "naive_sa") return ConvKind::naive_sa;
    fail("unknown convolution factory '" + s + "' (expected standard|rfa|rfcbam|rfca|naive_sa)");
}

std::string to_string(ConvKind kind) {
    switch (kind) {
    case ConvKind::standard: return "standard";
    case ConvKind::rfa: return "rfa";
    case ConvKind::rfcbam: return "rfcbam";
    case ConvKind::rfca: return "rfca";
    case ConvKind::naive_sa: return "naive_sa";
    }
    fail("invalid ConvKind");
}

// ---------------------------------------------------------------------------
// NewConv

NewConv NewConv::make(ConvKind kind, int64_t c_in, int64_t c_out, int64_t k, int64_t stride,
                      SeededRng& rng) {
    NewConv nc;
    nc.kind_ = kind;
    switch (kind) {
    case ConvKind::standard:
        nc.impl_ = Conv::make(c_in, c_out, k, stride, k / 2, 1, false, rng, "conv1");
        break;
    case ConvKind::rfa:
        nc.impl_ = RfaConvLayer::make(c_in, c_out, k, stride, rng);
        break;
    case ConvKind::rfcbam:
        nc.impl_ = RfcbamConvLayer::make(c_in, c_out, k, stride, rng);
        break;
    case ConvKind::rfca:
        nc.impl_ = RfcaConvLayer::make(c_in, c_out, k, stride, rng);
        break;
    case ConvKind::naive_sa:
        nc.impl_ = NaiveSpatialAttnConv::make(c_in, c_out, k, stride, rng);
        break;
    }
    return nc;
}

int32_t NewConv::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    return std::visit(
        [&](auto& layer) -> int32_t {
            using T = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<T, Conv>)
                return layer.forward(t, x);
            else
                return layer.forward(t, x, opts);
        },
        impl_);
}

void NewConv::collect(std::vector<Param*>& out) {
    std::visit([&](auto& layer) { layer.collect(out); }, impl_);
}

int64_t NewConv::param_count() const {
    return std::visit([](const auto& layer) { return layer.param_count(); }, impl_);
}

int64_t NewConv::macs(int64_t h, int64_t w) const {
    return std::visit([&](const auto& layer) { return layer.macs(h, w); }, impl_);
}

std::string NewConv::path_name() const {
    return kind_ == ConvKind::standard ? "conv1" : to_string(kind_);
}

void NewConv::named_tensors(const std::string& prefix, NamedTensors& out) const {
    const std::string base = prefix + "." + path_name();
    std::visit([&](const auto& layer) { layer.named_tensors(base, out); }, impl_);
}

void NewConv::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    const std::string base = prefix + "." + path_name();
    std::visit([&](auto& layer) { layer.load_tensors(base, sections); }, impl_);
}

// ---------------------------------------------------------------------------
// BasicBlock

BasicBlock BasicBlock::make(ConvKind kind, int64_t c_in, int64_t c_out, int64_t stride, SeededRng& rng) {
    BasicBlock b;
    b.c_in = c_in;
    b.c_out = c_out;
    b.stride = stride;
    b.conv1 = NewConv::make(kind, c_in, c_out, 3, stride, rng);
    b.bn1 = BatchNorm::make(c_out, "bn1");
    b.conv2 = Conv::make(c_out, c_out, 3, 1, 1, 1, false, rng, "conv2");
    b.bn2 = BatchNorm::make(c_out, "bn2");
    if (stride != 1 || c_in != c_out) {
        b.down_conv = Conv::make(c_in, c_out, 1, stride, 0, 1, false, rng, "downsample.conv");
        b.down_bn = BatchNorm::make(c_out, "downsample.bn");
    }
    return b;
}

int32_t BasicBlock::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    int32_t branch = t.relu(bn1.forward(t, conv1.forward(t, x, opts), opts));
    branch = bn2.forward(t, conv2.forward(t, branch), opts);
    int32_t shortcut = x;
    if (down_conv) shortcut = down_bn->forward(t, down_conv->forward(t, x), opts);
    const int32_t out = t.relu(t.add(branch, shortcut));
    if (!label.empty()) t.set_label(out, label);
    return out;
}

void BasicBlock::collect(std::vector<Param*>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
    if (down_conv) {
        down_conv->collect(out);
        down_bn->collect(out);
    }
}

int64_t BasicBlock::param_count() const {
    int64_t total = conv1.param_count() + bn1.param_count() + conv2.param_count() + bn2.param_count();
    if (down_conv) total += down_conv->param_count() + down_bn->param_count();
    return total;
}

int64_t BasicBlock::macs(int64_t h, int64_t w) const {
    const int64_t oh = out_extent(h), ow = out_extent(w);
    int64_t total = conv1.macs(h, w) + conv2.macs(oh, ow);
    if (down_conv) total += down_conv->macs(h, w);
    return total;
}

void BasicBlock::named_tensors(const std::string& prefix, NamedTensors& out) const {
    conv1.named_tensors(prefix, out);
    bn1.named_tensors(prefix + ".bn1", out);
    conv2.named_tensors(prefix + ".conv2", out);
    bn2.named_tensors(prefix + ".bn2", out);
    if (down_conv) {
        down_conv->named_tensors(prefix + ".downsample.conv", out);
        down_bn->named_tensors(prefix + ".downsample.bn", out);
    }
}

void BasicBlock::load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections) {
    conv1.load_tensors(prefix, sections);
    bn1.load_tensors(prefix + ".bn1", sections);
    conv2.load_tensors(prefix + ".conv2", sections);
    bn2.load_tensors(prefix + ".bn2", sections);
    if (down_conv) {
        down_conv->load_tensors(prefix + ".downsample.conv", sections);
        down_bn->load_tensors(prefix + ".downsample.bn", sections);
    }
}

// ---------------------------------------------------------------------------
// specs and construction

ModelSpec resnet18_spec(ConvKind factory, int64_t num_classes) {
    ModelSpec spec;
    spec.name = "resnet18";
    spec.num_classes = num_classes;
    spec.stages = {{2, 64, 1}, {2, 128, 2}, {2, 256, 2}, {2, 512, 2}};
    spec.factory = factory;
    return spec;
}

ModelSpec resnet34_spec(ConvKind factory, int64_t num_classes) {
    ModelSpec spec;
    spec.name = "resnet34";
    spec.num_classes = num_classes;
    spec.stages = {{3, 64, 1}, {4, 128, 2}, {6, 256, 2}, {3, 512, 2}};
    spec.factory = factory;
    return spec;
}

ModelSpec tinynet_spec(ConvKind factory, int64_t num_classes, int64_t in_channels) {
    ModelSpec spec;
    spec.name = "tinynet";
    spec.in_channels = in_channels;
    spec.num_classes = num_classes;
    spec.stem = {.out_channels = 8, .kernel = 3, .stride = 1, .padding = 1, .maxpool = false};
    spec.stages = {{1, 16, 2}, {1, 32, 2}};
    spec.factory = factory;
    return spec;
}

Network build_model(const ModelSpec& spec, SeededRng& rng) {
    check(!spec.stages.empty(), "model spec has no stages");
    Network net;
    net.spec = spec;
    net.stem_conv = Conv::make(spec.in_channels, spec.stem.out_channels, spec.stem.kernel,
                               spec.stem.stride, spec.stem.padding, 1, false, rng, "stem.conv");
    net.stem_bn = BatchNorm::make(spec.stem.out_channels, "stem.bn");

    int64_t c_in = spec.stem.out_channels;
    for (size_t s = 0; s < spec.stages.size(); ++s) {
        const StageSpec& stage = spec.stages[s];
        check(stage.blocks >= 1 && stage.channels >= 1, "invalid stage spec");
        std::vector<BasicBlock> blocks;
        for (int64_t b = 0; b < stage.blocks; ++b) {
            const int64_t stride = (b == 0) ? stage.stride : 1;
            BasicBlock block = BasicBlock::make(spec.factory, c_in, stage.channels, stride, rng);
            block.label = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
            blocks.push_back(std::move(block));
            c_in = stage.channels;
        }
        net.stages.push_back(std::move(blocks));
    }
    net.fc = Dense::make(c_in, spec.num_classes, rng, "fc");
    return net;
}

Network::Trace Network::forward(Tape& t, int32_t x, const ForwardOpts& opts) {
    check(t.value(x).c() == spec.in_channels,
          spec.name + ": input has " + std::to_string(t.value(x).c()) + " channels, expected " +
              std::to_string(spec.in_channels));
    int32_t cur = t.relu(stem_bn.forward(t, stem_conv.forward(t, x), opts));
    t.set_label(cur, "stem");
    if (spec.stem.maxpool) cur = t.maxpool2d(cur, 3, 2, 1);
    for (auto& stage : stages)
        for (auto& block : stage) cur = block.forward(t, cur, opts);

    Trace trace;
    trace.last_stage = cur;
    const int32_t pooled = t.global_avgpool(cur);
    const int32_t flat = t.reshape_to(pooled, {t.value(pooled).n(), t.value(pooled).c()});
    trace.logits = fc.forward(t, flat);
    t.set_label(trace.logits, "fc");
    return trace;
}

std::vector<Param*> Network::parameters() {
    std::vector<Param*> out;
    stem_conv.collect(out);
    stem_bn.collect(out);
    for (auto& stage : stages)
        for (auto& block : stage) block.collect(out);
    fc.collect(out);
    return out;
}

NamedTensors Network::named_tensors() const {
    NamedTensors out;
    stem_conv.named_tensors("stem.conv", out);
    stem_bn.named_tensors("stem.bn", out);
    for (size_t s = 0; s < stages.size(); ++s)
        for (size_t b = 0; b < stages[s].size(); ++b)
            stages[s][b].named_tensors("layer" + std::to_string(s + 1) + "." + std::to_string(b), out);
    fc.named_tensors("fc", out);
    return out;
}

void Network::load_tensors(const std::map<std::string, Tensor>& sections) {
    stem_conv.load_tensors("stem.conv", sections);
    stem_bn.load_tensors("stem.bn", sections);
    for (size_t s = 0; s < stages.size(); ++s)
        for (size_t b = 0; b < stages[s].size(); ++b)
            stages[s][b].load_tensors("layer" + std::to_string(s + 1) + "." + std::to_string(b), sections);
    fc.load_tensors("fc", sections);
}

CostReport count_cost(Network& net, int64_t in_h, int64_t in_w) {
    CostReport report;
    for (const Param* p : net.parameters()) report.params += p->value.numel();

    int64_t h = in_h, w = in_w;
    report.macs += net.stem_conv.macs(h, w);
    h = conv_out_extent(h, net.spec.stem.kernel, net.spec.stem.stride, net.spec.stem.padding);
    w = conv_out_extent(w, net.spec.stem.kernel, net.spec.stem.stride, net.spec.stem.padding);
    if (net.spec.stem.maxpool) {
        h = conv_out_extent(h, 3, 2, 1);
        w = conv_out_extent(w, 3, 2, 1);
    }
    for (const auto& stage : net.stages)
        for (const auto& block : stage) {
            report.macs += block.macs(h, w);
            h = block.out_extent(h);
            w = block.out_extent(w);
        }
    report.macs += net.fc.macs();
    return report;
}

// ---------------------------------------------------------------------------
// training and evaluation

int64_t topk_hits(const Tensor& logits, const std::vector<int64_t>& labels, int64_t k) {
    check(logits.rank() == 2, "topk_hits expects rank-2 logits");
    check(logits.extent(0) == static_cast<int64_t>(labels.size()), "topk_hits label count mismatch");
    const int64_t classes = logits.extent(1);
    int64_t hits = 0;
    for (int64_t i = 0; i < logits.extent(0); ++i) {
        const int64_t label = labels[static_cast<size_t>(i)];
        const double target = logits.at2(i, label);
        // rank of the label: classes that strictly beat it, plus equal-valued
        // classes with a lower index
        int64_t rank = 0;
        for (int64_t j = 0; j < classes; ++j) {
            if (j == label) continue;
            const double v = logits.at2(i, j);
            if (v > target || (v == target && j < label)) ++rank;
        }
        if (rank < k) ++hits;
    }
    return hits;
}

static Tensor slice_images(const Tensor& images, const std::vector<int64_t>& order, int64_t begin,
                           int64_t count) {
    Tensor out = zeros({count, images.c(), images.h(), images.w()});
    const int64_t stride = images.c() * images.h() * images.w();
    for (int64_t i = 0; i < count; ++i) {
        const int64_t src = order[static_cast<size_t>(begin + i)];
        std::copy_n(images.data.begin() + src * stride, stride, out.data.begin() + i * stride);
    }
    return out;
}

static void diagnose_non_finite(const Tape& tape, int64_t epoch, int64_t step) {
    for (int32_t id = 0; id < tape.size(); ++id) {
        const Tape::Node& n = tape.node(id);
        for (double v : n.value.data) {
            if (!std::isfinite(v)) {
                const std::string where = n.label.empty() ? n.op : n.label;
                fail("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                     std::to_string(step) + ": first non-finite activation in '" + where + "'");
            }
        }
    }
    fail("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
         " (no non-finite activation found on the tape)");
}

TrainLog train(Network& net, const IdxDataset& data, const TrainOptions& opts) {
    check(data.size() >= 1, "training set is empty");
    check(opts.batch >= 1 && opts.epochs >= 0, "bad batch/epoch settings");

    SeededRng rng(opts.seed);
    std::vector<Param*> params = net.parameters();
    std::vector<Tensor> velocity;
    velocity.reserve(params.size());
    for (const Param* p : params) velocity.push_back(zeros_like(p->value));

    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;

    TrainLog log;
    const ForwardOpts fwd{.train = true, .track_running = true};
    for (int64_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        double lr = opts.lr0;
        for (int64_t mark : opts.decay_epochs)
            if (epoch > mark) lr *= opts.decay_factor;

        // seeded Fisher-Yates shuffle
        for (int64_t i = data.size() - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);

        double loss_sum = 0.0;
        int64_t seen = 0, hits1 = 0, hits5 = 0;
        const int64_t top5_k = std::min<int64_t>(5, net.spec.num_classes);
        int64_t step = 0;
        for (int64_t begin = 0; begin < data.size(); begin += opts.batch, ++step) {
            const int64_t count = std::min(opts.batch, data.size() - begin);
            Tensor batch = slice_images(data.images, order, begin, count);
            std::vector<int64_t> labels(static_cast<size_t>(count));
            for (int64_t i = 0; i < count; ++i)
                labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(order[static_cast<size_t>(begin + i)])];

            Tape tape;
            const int32_t x = tape.leaf(std::move(batch));
            const Network::Trace trace = net.forward(tape, x, fwd);
            const int32_t loss = tape.cross_entropy(trace.logits, labels);
            const double loss_value = tape.value(loss).data[0];
            if (!std::isfinite(loss_value)) diagnose_non_finite(tape, epoch, step);

            for (Param* p : params) p->zero_grad();
            tape.backward(loss, Tensor({1}, {1.0}));
            tape.accumulate_param_grads();

            for (size_t i = 0; i < params.size(); ++i) {
                Param* p = params[i];
                Tensor& v = velocity[i];
                for (size_t j = 0; j < v.data.size(); ++j) {
                    v.data[j] = opts.momentum * v.data[j] + p->grad.data[j];
                    p->value.data[j] -= lr * v.data[j];
                }
            }

            loss_sum += loss_value * static_cast<double>(count);
            hits1 += topk_hits(tape.value(trace.logits), labels, 1);
            hits5 += topk_hits(tape.value(trace.logits), labels, top5_k);
            seen += count;
        }
        log.push_back({epoch, lr, loss_sum / static_cast<double>(seen),
                       static_cast<double>(hits1) / static_cast<double>(seen),
                       static_cast<double>(hits5) / static_cast<double>(seen)});
    }
    return log;
}

EvalResult evaluate(Network& net, const IdxDataset& data, int64_t batch) {
    check(data.size() >= 1, "evaluation set is empty");
    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) order[static_cast<size_t>(i)] = i;

    const ForwardOpts fwd{.train = false, .track_running = false};
    const int64_t top5_k = std::min<int64_t>(5, net.spec.num_classes);
    int64_t hits1 = 0, hits5 = 0;
    for (int64_t begin = 0; begin < data.size(); begin += batch) {
        const int64_t count = std::min(batch, data.size() - begin);
        Tensor images = slice_images(data.images, order, begin, count);
        std::vector<int64_t> labels(data.labels.begin() + begin, data.labels.begin() + begin + count);

        Tape tape;
        const int32_t x = tape.leaf(std::move(images));
        const Network::Trace trace = net.forward(tape, x, fwd);
        hits1 += topk_hits(tape.value(trace.logits), labels, 1);
        hits5 += topk_hits(tape.value(trace.logits), labels, top5_k);
    }
    return {static_cast<double>(hits1) / static_cast<double>(data.size()),
            static_cast<double>(hits5) / static_cast<double>(data.size())};
}

void write_train_log_csv(std::ostream& os, const TrainLog& log) {
    os << "epoch,lr,loss,top1,top5\n";
    char buf[160];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.8g,%.8g,%.6f,%.6f",
                      static_cast<long long>(e.epoch), e.lr, e.loss, e.top1, e.top5);
        os << buf << "\n";
    }
}

} // namespace rfa
