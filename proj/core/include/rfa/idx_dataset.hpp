#pragma once

#include "rfa/tensor.hpp"

#include <string>
#include <vector>

namespace rfa {

/// Image/label pair set in the IDX binary layout (big-endian integers,
/// image magic 0x00000803, label magic 0x00000801). Pixels are stored as
/// bytes and held here scaled to [0,1] by 1/255.
struct IdxDataset {
    Tensor images; // (N, 1, H, W)
    std::vector<int64_t> labels;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

IdxDataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const IdxDataset& set, const std::string& images_path, const std::string& labels_path);

/// Seeded two-class set of oriented bars: class 0 draws a horizontal bar,
/// class 1 a vertical one, 2-3 pixels thick at a random offset over a dim
/// noise floor. Pixels are quantized to bytes so an IDX round trip is exact.
/// `bar_masks` marks the bar pixels of each image (1 on the bar, 0 off it).
struct SyntheticBars {
    IdxDataset data;
    Tensor bar_masks; // (N, 1, H, W) in {0,1}
};

SyntheticBars make_oriented_bars(int64_t count, int64_t hw, uint64_t seed);

} // namespace rfa
