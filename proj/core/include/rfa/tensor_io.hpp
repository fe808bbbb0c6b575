#pragma once

#include "rfa/tensor.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rfa {

// Flat binary tensor container: 8-byte magic "RFATNSR\0", u32 rank,
// u32 extents, then the f64 payload; all integers and doubles little-endian.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

/// Checkpoint: a sequence of named sections, each a u32 name length, the
/// name bytes (dotted path, e.g. "stage1.0.rfa.weight_branch"), then one
/// tensor in the container format above.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& sections);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

} // namespace rfa
