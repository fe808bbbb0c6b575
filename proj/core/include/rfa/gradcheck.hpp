#pragma once

#include "rfa/autodiff.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace rfa {

struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
    std::vector<GradCheckEntry> breakdown;
};

/// Central finite difference (f(x + h*e) - f(x - h*e)) / 2h per element.
/// The oracle touches only the forward path of whatever f evaluates.
Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// A differentiable program under test. `forward` must be pure given the
/// current values of `params` (batchnorm runs train math with frozen
/// running statistics); `params` are recorded on the tape by forward itself.
struct CheckTarget {
    std::string name;
    Tensor x;
    std::function<int32_t(Tape&, int32_t)> forward;
    std::vector<Param*> params;
    double tol = 1e-5;
    bool check_input = true;
};

/// Compares analytic tape gradients against central differences through a
/// fixed random scalar projection of the output. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8), maximized over every coordinate of every
/// gradient.
GradCheckReport gradcheck(const CheckTarget& target, uint64_t seed, bool corrupt_conv_backward = false);

/// The standard suite: every forward primitive plus the attention layers
/// (and the naive pixel-attention pipeline), three seeds derive from `seed`.
std::vector<GradCheckReport> gradcheck_suite(uint64_t seed, double primitive_tol, double layer_tol,
                                             bool corrupt_conv_backward = false);

/// CSV rows: op,max_rel_err,pass
void write_gradcheck_csv(std::ostream& os, const std::vector<GradCheckReport>& reports);

} // namespace rfa
