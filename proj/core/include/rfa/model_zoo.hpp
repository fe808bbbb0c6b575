#pragma once

#include "rfa/idx_dataset.hpp"
#include "rfa/rfa_layers.hpp"

#include <variant>

namespace rfa {

enum class ConvKind { standard, rfa, rfcbam, rfca, naive_sa };

ConvKind conv_kind_from_string(const std::string& s);
std::string to_string(ConvKind kind);

/// Factory-built first convolution of a BasicBlock. Every kind produces the
/// same output geometry for the same (C_in, C_out, k, stride).
class NewConv {
public:
    static NewConv make(ConvKind kind, int64_t c_in, int64_t c_out, int64_t k, int64_t stride,
                        SeededRng& rng);

    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);
    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    int64_t macs(int64_t h, int64_t w) const;
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
    ConvKind kind() const { return kind_; }
    /// Checkpoint path component ("conv1" for standard, else the kind name).
    std::string path_name() const;

private:
    ConvKind kind_ = ConvKind::standard;
    std::variant<Conv, RfaConvLayer, RfcbamConvLayer, RfcaConvLayer, NaiveSpatialAttnConv> impl_;
};

/// Residual block: factory conv + bn + relu, standard 3x3 conv + bn,
/// projection shortcut when the geometry changes, final relu.
struct BasicBlock {
    int64_t c_in = 0, c_out = 0, stride = 1;
    NewConv conv1;
    BatchNorm bn1;
    Conv conv2;
    BatchNorm bn2;
    std::optional<Conv> down_conv;
    std::optional<BatchNorm> down_bn;
    std::string label;

    static BasicBlock make(ConvKind kind, int64_t c_in, int64_t c_out, int64_t stride, SeededRng& rng);
    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);
    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    int64_t macs(int64_t h, int64_t w) const;
    int64_t out_extent(int64_t in) const { return conv_out_extent(in, 3, stride, 1); }
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

struct StemSpec {
    int64_t out_channels = 64;
    int64_t kernel = 7;
    int64_t stride = 2;
    int64_t padding = 3;
    bool maxpool = true; // 3x3, stride 2, padding 1
};

struct StageSpec {
    int64_t blocks = 2;
    int64_t channels = 64;
    int64_t stride = 1; // stride of the stage's first block
};

struct ModelSpec {
    std::string name = "resnet18";
    int64_t in_channels = 3;
    int64_t num_classes = 1000;
    StemSpec stem;
    std::vector<StageSpec> stages;
    ConvKind factory = ConvKind::standard;
};

ModelSpec resnet18_spec(ConvKind factory, int64_t num_classes = 1000);
ModelSpec resnet34_spec(ConvKind factory, int64_t num_classes = 1000);
/// Desk-scale network: 8-channel stem, one 16-channel and one 32-channel
/// stage (stride 2 each), global average pool head.
ModelSpec tinynet_spec(ConvKind factory, int64_t num_classes = 10, int64_t in_channels = 1);

class Network {
public:
    ModelSpec spec;
    Conv stem_conv;
    BatchNorm stem_bn;
    std::vector<std::vector<BasicBlock>> stages;
    Dense fc;

    struct Trace {
        int32_t logits = -1;
        int32_t last_stage = -1; // final activation of the last stage
    };

    Trace forward(Tape& t, int32_t x, const ForwardOpts& opts);
    std::vector<Param*> parameters();
    NamedTensors named_tensors() const;
    void load_tensors(const std::map<std::string, Tensor>& sections);
};

Network build_model(const ModelSpec& spec, SeededRng& rng);

/// Exact parameter and multiply-accumulate counts for one image at the
/// given input size. Bookkeeping rule: convolutions count
/// C_out*H'*W'*(C_in/groups)*k^2, linear layers F_in*F_out; pooling,
/// normalization and activations count zero.
struct CostReport {
    int64_t params = 0;
    int64_t macs = 0;
};

CostReport count_cost(Network& net, int64_t in_h, int64_t in_w);

struct TrainOptions {
    int64_t epochs = 12;
    int64_t batch = 32;
    double lr0 = 0.1;
    std::vector<int64_t> decay_epochs = {6, 9}; // lr *= decay_factor after these epochs
    double decay_factor = 0.1;
    double momentum = 0.9;
    uint64_t seed = 1;
};

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double top1 = 0.0; // fractions in [0,1]
    double top5 = 0.0;
};
using TrainLog = std::vector<EpochLog>;

/// SGD with momentum over the shuffled set; deterministic given the seed.
/// Aborts with a diagnostic naming the first non-finite activation if the
/// loss leaves the finite range.
TrainLog train(Network& net, const IdxDataset& data, const TrainOptions& opts);

struct EvalResult {
    double top1 = 0.0;
    double top5 = 0.0;
};

EvalResult evaluate(Network& net, const IdxDataset& data, int64_t batch = 64);

/// Counts samples whose label ranks in the top k logits; ties break toward
/// the lower class index.
int64_t topk_hits(const Tensor& logits, const std::vector<int64_t>& labels, int64_t k);

void write_train_log_csv(std::ostream& os, const TrainLog& log);

} // namespace rfa
