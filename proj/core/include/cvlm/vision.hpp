// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvlm/nn.hpp"
#include "cvlm/tensor.hpp"

namespace cvlm {

struct VisionConfig {
  int height = 32;
  int width = 32;
  int channels = 3;
  int patch = 8;
  int d_v = 32;
};

// Row-major pixel grid, values in [0,1], channel-interleaved.
struct ImageGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  double& at(int r, int c, int ch) {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  double at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  void validate() const;
};

// h_g plus per-patch embeddings, all rows of width d_v.
struct PatchSequence {
  Tensor global;   // [1, d_v]
  Tensor patches;  // [P, d_v]

  int d_v() const { return patches.cols(); }
  int n_patches() const { return patches.rows(); }
  // [1 + P, d_v] with the global token first.
  Tensor full() const;
};

struct Region {
  int row0 = 0, col0 = 0, row1 = 0, col1 = 0;  // half-open pixel box
  double confidence = 0.0;
  bool padded = false;  // repeated entry when fewer candidates than requested
};

// Patchify + linear embed + fixed sinusoidal position codes; the global
// token is a learnable linear map of the mean patch embedding.
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const VisionConfig& cfg, ParamStore& store, Rng& rng);

  PatchSequence encode(const ImageGrid& image) const;
  const VisionConfig& config() const { return cfg_; }

 private:
  VisionConfig cfg_;
  Tensor patch_w_, patch_b_;
  Tensor global_w_, global_b_;
  Tensor pos_;  // [P, d_v] constant
};

// Fixed candidate grid standing in for a learned segmenter: the four
// quadrants in reading order plus the center crop, scored by mean pixel
// energy above the background threshold, sorted descending (stable).
std::vector<Region> propose_regions(const ImageGrid& image, int k = 5);

// Nearest-neighbor resample of the boxed pixels back to the full image size.
ImageGrid crop_region(const ImageGrid& image, const Region& region);

// Binary raster format: "IMG0" magic, u32 H/W/C little-endian, f32 pixels.
std::vector<std::uint8_t> to_img0_bytes(const ImageGrid& image);
ImageGrid from_img0_bytes(const std::uint8_t* data, std::size_t len);
void save_img0(const std::string& path, const ImageGrid& image);
ImageGrid load_img0(const std::string& path);

}  // namespace cvlm
