#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcn/tensor.hpp"

namespace gcn {

/// Maps [0,1] to 0..255, clamping and rounding half away from zero.
std::uint8_t quantize_unit(float v);

/// P5 for one channel, P6 for three. Image is [C,H,W] with values in [0,1].
std::string encode_netpbm(const Tensor<float>& image);
Tensor<float> decode_netpbm(const std::string& bytes);

void write_netpbm(const std::string& path, const Tensor<float>& image);
Tensor<float> read_netpbm(const std::string& path);

/// A decoded IDX file holding unsigned bytes (type code 0x08).
struct IdxArray {
  Shape dims;
  std::vector<std::uint8_t> data;
};

std::string encode_idx(const IdxArray& array);
IdxArray decode_idx(const std::string& bytes);
IdxArray read_idx(const std::string& path);
void write_idx(const std::string& path, const IdxArray& array);

struct IdxDataset {
  /// [N,1,H,W] scaled to [0,1].
  Tensor<float> images;
  std::vector<Index> labels;
};

/// Reads an image file (magic 0x00000803) and its label file (magic 0x00000801).
IdxDataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace gcn
