#pragma once

#include "rfa/autodiff.hpp"
#include "rfa/nn_ops.hpp"
#include "rfa/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rfa {

struct ForwardOpts {
    bool train = false;
    /// Keep running batchnorm statistics frozen (gradient checks, probes).
    bool track_running = true;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Convolution block: a weight Param (+ optional bias) with fixed geometry.
struct Conv {
    Param weight;
    std::optional<Param> bias;
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t groups = 1;

    static Conv make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, int64_t padding,
                     int64_t groups, bool with_bias, SeededRng& rng, const std::string& name);

    int32_t forward(Tape& t, int32_t x);
    ConvParams as_params() const;
    int64_t kernel() const { return weight.value.extent(2); }
    int64_t out_channels() const { return weight.value.extent(0); }
    int64_t in_channels() const { return weight.value.extent(1) * groups; }

    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    /// Multiply-accumulates for one image at the given input spatial size.
    int64_t macs(int64_t h, int64_t w) const;
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

struct BatchNorm {
    Param gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    static BatchNorm make(int64_t channels, const std::string& name);
    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);
    BatchNormState as_state(BatchNormState::Mode mode) const;
    void collect(std::vector<Param*>& out);
    int64_t param_count() const { return gamma.value.numel() + beta.value.numel(); }
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

struct Dense {
    Param weight, bias; // weight (F_out, F_in)

    static Dense make(int64_t f_in, int64_t f_out, SeededRng& rng, const std::string& name);
    int32_t forward(Tape& t, int32_t x);
    void collect(std::vector<Param*>& out);
    int64_t param_count() const { return weight.value.numel() + bias.value.numel(); }
    int64_t macs() const { return weight.value.extent(0) * weight.value.extent(1); }
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

/// Receptive-field attention convolution. The weight branch pools each
/// window, lifts it to k^2 logits per channel with a grouped 1x1 conv and
/// softmaxes over the taps; the feature branch lifts the input to the
/// receptive-field feature with a grouped k x k conv; the mix convolution
/// consumes the rearranged, attention-weighted map with stride k.
struct RfaConvLayer {
    int64_t k = 3, stride = 1, c_in = 0, c_out = 0;
    Conv weight_branch;  // grouped 1x1, C -> C*k^2, bias-free
    Conv feature_branch; // grouped k x k, C -> C*k^2, padding k/2, bias-free
    BatchNorm feature_bn;
    Conv mix; // C -> C_out, kernel k, stride k, padding 0, with bias

    enum class Attention { learned, uniform };
    enum class Feature { learned, selector };
    /// Debug overrides: uniform forces every attention entry to 1/k^2;
    /// selector replaces the whole feature branch with an exact unfold.
    Attention attention_override = Attention::learned;
    Feature feature_override = Feature::learned;

    std::string label = "rfa";

    static RfaConvLayer make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng);

    /// Packed (N, C*k^2, H', W') attention, softmax-normalized over taps.
    int32_t attention(Tape& t, int32_t x);
    int32_t features(Tape& t, int32_t x, const ForwardOpts& opts);
    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);

    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    int64_t macs(int64_t h, int64_t w) const;
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

/// RFCBAM convolution: the receptive-field feature is gated jointly by an
/// SE-style channel branch and a single-channel spatial branch, then mixed.
struct RfcbamConvLayer {
    int64_t k = 3, stride = 1, c_in = 0, c_out = 0;
    Conv feature_branch;
    BatchNorm feature_bn;
    Dense se_reduce, se_expand; // C -> max(C/16, 4) -> C
    Conv spatial;               // 2 -> 1, kernel 3, padding 1, bias-free
    Conv mix;
    /// When set, the SE branch pools the rearranged receptive-field feature
    /// instead of the raw input.
    bool se_from_rf_feature = false;

    std::string label = "rfcbam";

    static RfcbamConvLayer make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng);
    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);

    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    int64_t macs(int64_t h, int64_t w) const;
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

/// RFCA convolution: directional pooling over the rearranged feature yields
/// per-row and per-column gates in the coordinate-attention style.
struct RfcaConvLayer {
    int64_t k = 3, stride = 1, c_in = 0, c_out = 0, mid = 8; // mid = max(8, C/32)
    Conv feature_branch;
    BatchNorm feature_bn;
    Conv reduce_conv; // 1x1, C -> mid
    BatchNorm reduce_bn;
    Conv attn_h, attn_w; // 1x1, mid -> C
    Conv mix;

    std::string label = "rfca";

    static RfcaConvLayer make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng);
    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);

    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    int64_t macs(int64_t h, int64_t w) const;
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

/// Pixel-level spatial attention in front of a standard convolution: one
/// scalar gate per pixel, shared by every window that overlaps it.
struct NaiveSpatialAttnConv {
    int64_t k = 3, stride = 1, c_in = 0, c_out = 0;
    Conv attention; // 2 -> 1, kernel 7, padding 3, bias-free
    Conv conv;      // standard k x k, padding k/2, bias-free

    std::string label = "naive_sa";

    static NaiveSpatialAttnConv make(int64_t c_in, int64_t c_out, int64_t k, int64_t stride, SeededRng& rng);
    int32_t attention_map(Tape& t, int32_t x); // (N,1,H,W) in (0,1)
    int32_t forward(Tape& t, int32_t x, const ForwardOpts& opts);

    void collect(std::vector<Param*>& out);
    int64_t param_count() const;
    int64_t macs(int64_t h, int64_t w) const;
    void named_tensors(const std::string& prefix, NamedTensors& out) const;
    void load_tensors(const std::string& prefix, const std::map<std::string, Tensor>& sections);
};

struct AuditReport {
    int64_t windows = 0;           // k x k windows examined (stride 1, no padding)
    int64_t overlapping_pairs = 0; // window-entry pairs forced to read one source pixel
    int64_t violations = 0;        // forced pairs whose values differ
    int64_t dof_pixel = 0;         // free values in the pixel-level map: H*W
    int64_t dof_rf_per_channel = 0;// free values per channel in the RFA layout: k^2*H'*W'
    bool pass() const { return violations == 0; }
};

/// Unfolds a pixel-level attention map and verifies that every pair of
/// window entries referencing the same source pixel is identical, counting
/// how many entries the sliding windows are forced to share.
AuditReport shared_weight_audit(const Tensor& attention_map, int64_t k);

} // namespace rfa
