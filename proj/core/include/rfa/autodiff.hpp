#pragma once

#include "rfa/nn_ops.hpp"
#include "rfa/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rfa {

/// Learnable tensor with a gradient slot.
struct Param {
    Tensor value;
    Tensor grad;
    std::string name;

    Param() = default;
    explicit Param(Tensor v, std::string n = {})
        : value(std::move(v)), grad(zeros_like(value)), name(std::move(n)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

/// Reverse-mode tape. Every differentiable op appends exactly one node;
/// node ids grow in topological order, so backward() is a reverse sweep.
/// Backward zeroes all adjoints first, making repeated calls identical.
class Tape {
public:
    struct Node {
        std::string op;
        std::vector<int32_t> parents;
        Tensor value;
        Tensor grad; // empty until touched by backward
        bool requires_grad = false;
        std::string label;
        Param* sink = nullptr;
        std::function<void(Tape&, int32_t)> backward;
    };

    /// Falsification hook for the gradient checker: when set, the
    /// convolution input adjoint reads the kernel with its taps transposed.
    bool corrupt_conv_backward = false;

    int32_t leaf(Tensor v, bool requires_grad = false, std::string label = {});
    int32_t param(Param& p);

    const Tensor& value(int32_t id) const { return node(id).value; }
    const Tensor& grad(int32_t id) const;
    const Node& node(int32_t id) const;
    int32_t size() const { return static_cast<int32_t>(nodes_.size()); }
    void set_label(int32_t id, std::string label);

    // differentiable ops; `bias` may be -1 for bias-free convolutions
    int32_t conv2d(int32_t x, int32_t weight, int32_t bias, int64_t stride, int64_t padding, int64_t groups);
    int32_t unfold_rf(int32_t x, int64_t k, int64_t stride, int64_t padding); // packed (N, C*k^2, H', W')
    int32_t rf_rearrange(int32_t f, int64_t channels, int64_t k);
    int32_t avgpool2d(int32_t x, int64_t k, int64_t stride, int64_t padding);
    int32_t maxpool2d(int32_t x, int64_t k, int64_t stride, int64_t padding);
    int32_t global_avgpool(int32_t x);
    int32_t global_maxpool(int32_t x);
    int32_t pool_h(int32_t x);
    int32_t pool_w(int32_t x);
    int32_t softmax_taps(int32_t x, int64_t group_count);
    int32_t relu(int32_t x);
    int32_t sigmoid(int32_t x);
    int32_t hardswish(int32_t x);
    int32_t channel_meanmax(int32_t x);
    int32_t batchnorm(int32_t x, int32_t gamma, int32_t beta, Tensor& running_mean, Tensor& running_var,
                      double eps, double momentum, bool train, bool track_running);
    int32_t linear(int32_t x, int32_t weight, int32_t bias);
    int32_t mul(int32_t a, int32_t b); // broadcast over singleton axes
    int32_t add(int32_t a, int32_t b);
    int32_t scale(int32_t x, double s);
    int32_t reshape_to(int32_t x, Shape shape);
    int32_t permute_axes(int32_t x, std::vector<int64_t> axes);
    int32_t concat(int32_t a, int32_t b, int64_t axis);
    int32_t narrow(int32_t x, int64_t axis, int64_t start, int64_t len);
    /// Mean cross-entropy over the batch, log-sum-exp stabilized; scalar output.
    int32_t cross_entropy(int32_t logits, std::vector<int64_t> labels);
    /// sum(x * weights): fixed projection used to scalarize gradient checks.
    int32_t weighted_sum(int32_t x, Tensor weights);

    void backward(int32_t output, const Tensor& output_grad);
    /// Fold each param-bound leaf's adjoint into its Param::grad slot.
    void accumulate_param_grads();

private:
    std::vector<Node> nodes_;

    Node& node_mut(int32_t id);
    int32_t push(Node n);
    int32_t unary(std::string op, int32_t x, Tensor value, std::function<void(Tape&, int32_t)> backward);
    void add_grad(int32_t id, const Tensor& g);
    friend struct TapeAccess;
};

} // namespace rfa
