#pragma once

#include "rfa/model_zoo.hpp"

namespace rfa {

struct GradCamResult {
    Tensor heat; // (1,1,H_in,W_in) in [0,1], nearest-neighbor upsampled
    Tensor raw;  // (1,1,h,w) rectified weighted activation sum, unnormalized
};

/// Class-activation heatmap from the last stage's final activation A:
/// alpha_c is the global average of d(logit[class])/dA_c, the heat map is
/// relu(sum_c alpha_c * A_c), min-max normalized to [0,1] (an all-zero map
/// stays all-zero) and upsampled to the input size.
GradCamResult grad_cam(Network& net, const Tensor& image, int64_t class_index);

/// Binary PGM (P5, maxval 255) of a [0,1]-valued (1,1,H,W) or (H,W) map.
void write_pgm(const std::string& path, const Tensor& map01);
Tensor read_pgm(const std::string& path); // (1,1,H,W), scaled back to [0,1]

} // namespace rfa
