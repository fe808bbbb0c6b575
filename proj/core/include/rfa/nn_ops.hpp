#pragma once

#include "rfa/tensor.hpp"

#include <array>
#include <optional>

namespace rfa {

/// Square-kernel 2d convolution parameters. Weight layout is
/// (C_out, C_in/groups, k, k); groups must divide both channel counts.
struct ConvParams {
    Tensor weight;
    std::optional<Tensor> bias; // (C_out)
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t groups = 1;

    int64_t out_channels() const { return weight.extent(0); }
    int64_t group_in_channels() const { return weight.extent(1); }
    int64_t in_channels() const { return weight.extent(1) * groups; }
    int64_t kernel() const { return weight.extent(2); }
};

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t padding);

struct BatchNormState {
    Tensor gamma, beta;             // (C)
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;
    enum class Mode { train, eval } mode = Mode::train;
    /// When false, train mode still normalizes with batch statistics but
    /// leaves the running estimates untouched (used by gradient checks).
    bool track_running = true;

    static BatchNormState make(int64_t channels);
    int64_t channels() const { return gamma.extent(0); }
};

/// Receptive-field feature block, logically (N, C, k^2, H', W') with tap
/// index j = u*k + v. Stored packed as a rank-4 (N, C*k^2, H', W') tensor:
/// the two layouts coincide in row-major memory.
struct RfFeature {
    Tensor data;
    int64_t channels = 0;
    int64_t k = 0;

    int64_t taps() const { return k * k; }
    std::array<int64_t, 5> shape5() const {
        return {data.n(), channels, k * k, data.h(), data.w()};
    }
    double at(int64_t n, int64_t c, int64_t j, int64_t h, int64_t w) const {
        return data.at(n, c * k * k + j, h, w);
    }
    double& at(int64_t n, int64_t c, int64_t j, int64_t h, int64_t w) {
        return data.at(n, c * k * k + j, h, w);
    }
};

Tensor conv2d(const Tensor& x, const ConvParams& p);

/// Copy-only extraction of k x k windows; entry (n,c,j,h,w) is the input
/// pixel (n, c, h*stride - padding + j/k, w*stride - padding + j%k), zero
/// outside bounds.
RfFeature unfold(const Tensor& x, int64_t k, int64_t stride, int64_t padding);

/// Grouped-convolution extraction path: p must map C channels to C*k^2
/// with groups = C. With selector weights the result equals unfold exactly.
RfFeature rf_extract_groupconv(const Tensor& x, const ConvParams& p);

/// One-hot weights that make rf_extract_groupconv reproduce unfold.
ConvParams selector_weights(int64_t channels, int64_t k, int64_t stride, int64_t padding);

/// Bijective relocation to (N, C, H'*k, W'*k):
/// out(n, c, h*k + u, w*k + v) = f(n, c, u*k + v, h, w).
Tensor rf_rearrange(const RfFeature& f);

/// Average pool with count-including-pad semantics (always divides by k^2).
Tensor avgpool2d(const Tensor& x, int64_t k, int64_t stride, int64_t padding);
/// Max pool; padded cells are ignored, ties go to the lowest linear index.
Tensor maxpool2d(const Tensor& x, int64_t k, int64_t stride, int64_t padding);
Tensor global_avgpool(const Tensor& x); // (N,C,1,1)
Tensor global_maxpool(const Tensor& x); // (N,C,1,1)
Tensor pool_h(const Tensor& x);         // (N,C,H,1), mean over W
Tensor pool_w(const Tensor& x);         // (N,C,1,W), mean over H

/// Max-shifted softmax along one axis of a rank-1..4 tensor.
Tensor softmax_axis(const Tensor& x, int64_t axis);
/// Softmax over the tap sub-axis of a packed (N, G*T, H, W) tensor, i.e.
/// over j in channel blocks of size T = C/group_count.
Tensor softmax_taps(const Tensor& packed, int64_t group_count);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// x * clamp(x+3, 0, 6) / 6
Tensor hardswish(const Tensor& x);
/// Per-pixel channel mean and channel max stacked as (N, 2, H, W).
Tensor channel_meanmax(const Tensor& x);

Tensor batchnorm2d(const Tensor& x, BatchNormState& s);

/// x: (N, F_in), weight: (F_out, F_in), bias: (F_out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor concat_axis(const Tensor& a, const Tensor& b, int64_t axis);
Tensor narrow_axis(const Tensor& x, int64_t axis, int64_t start, int64_t len);

double sigmoid_scalar(double v);

} // namespace rfa
