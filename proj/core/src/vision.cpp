// SPDX-License-Identifier: Apache-2.0
#include "cvlm/vision.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cvlm/ops.hpp"

namespace cvlm {

namespace {
constexpr double kBackgroundThreshold = 0.2;
}

void ImageGrid::validate() const {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ShapeError("image: non-positive dimensions");
  }
  const std::size_t want = static_cast<std::size_t>(height) * width * channels;
  if (pixels.size() != want) {
    throw ShapeError("image: pixel count " + std::to_string(pixels.size()) +
                     " does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(channels));
  }
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw FormatError("image: pixel value outside [0,1]");
    }
  }
}

Tensor PatchSequence::full() const { return ops::concat_rows({global, patches}); }

VisionEncoder::VisionEncoder(const VisionConfig& cfg, ParamStore& store,
                             Rng& rng)
    : cfg_(cfg) {
  if (cfg.patch <= 0 || cfg.height % cfg.patch != 0 ||
      cfg.width % cfg.patch != 0) {
    throw ConfigError("vision: image " + std::to_string(cfg.height) + "x" +
                      std::to_string(cfg.width) +
                      " not divisible by patch size " +
                      std::to_string(cfg.patch));
  }
  const int in_dim = cfg.patch * cfg.patch * cfg.channels;
  patch_w_ = store
                 .add("vision.patch_embed.w",
                      gaussian_init(rng, {cfg.d_v, in_dim}), Group::kVision)
                 .tensor;
  patch_b_ = store.add("vision.patch_embed.b", Tensor::zeros({cfg.d_v}),
                       Group::kVision)
                 .tensor;
  global_w_ = store
                  .add("vision.global.w",
                       gaussian_init(rng, {cfg.d_v, cfg.d_v}), Group::kVision)
                  .tensor;
  global_b_ =
      store.add("vision.global.b", Tensor::zeros({cfg.d_v}), Group::kVision)
          .tensor;

  const int p_rows = cfg.height / cfg.patch;
  const int p_cols = cfg.width / cfg.patch;
  const int n_patches = p_rows * p_cols;
  pos_ = Tensor::zeros({n_patches, cfg.d_v});
  for (int p = 0; p < n_patches; ++p) {
    for (int i = 0; i < cfg.d_v; ++i) {
      const double rate =
          std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(cfg.d_v));
      const double angle = p * rate;
      pos_.at(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
}

PatchSequence VisionEncoder::encode(const ImageGrid& image) const {
  image.validate();
  if (image.height != cfg_.height || image.width != cfg_.width ||
      image.channels != cfg_.channels) {
    throw ConfigError("vision: image " + std::to_string(image.height) + "x" +
                      std::to_string(image.width) + "x" +
                      std::to_string(image.channels) +
                      " does not match encoder config");
  }
  const int p = cfg_.patch;
  const int p_rows = cfg_.height / p;
  const int p_cols = cfg_.width / p;
  const int n_patches = p_rows * p_cols;
  const int in_dim = p * p * cfg_.channels;
  Tensor x = Tensor::zeros({n_patches, in_dim});
  for (int pr = 0; pr < p_rows; ++pr) {
    for (int pc = 0; pc < p_cols; ++pc) {
      double* row = x.data() +
                    static_cast<std::size_t>(pr * p_cols + pc) * in_dim;
      int k = 0;
      for (int r = 0; r < p; ++r) {
        for (int c = 0; c < p; ++c) {
          for (int ch = 0; ch < cfg_.channels; ++ch) {
            row[k++] = image.at(pr * p + r, pc * p + c, ch);
          }
        }
      }
    }
  }
  Tensor embedded = ops::linear(x, patch_w_, patch_b_);
  Tensor patches = ops::add(embedded, pos_);
  Tensor global = ops::linear(ops::mean_rows(patches), global_w_, global_b_);
  return PatchSequence{std::move(global), std::move(patches)};
}

std::vector<Region> propose_regions(const ImageGrid& image, int k) {
  image.validate();
  const int h = image.height;
  const int w = image.width;
  std::vector<Region> cand = {
      {0, 0, h / 2, w / 2, 0.0, false},
      {0, w / 2, h / 2, w, 0.0, false},
      {h / 2, 0, h, w / 2, 0.0, false},
      {h / 2, w / 2, h, w, 0.0, false},
      {h / 4, w / 4, h - h / 4, w - w / 4, 0.0, false},
  };
  for (auto& r : cand) {
    double sum = 0.0;
    std::size_t n = 0;
    for (int row = r.row0; row < r.row1; ++row) {
      for (int col = r.col0; col < r.col1; ++col) {
        for (int ch = 0; ch < image.channels; ++ch) {
          const double p = image.at(row, col, ch);
          sum += p > kBackgroundThreshold ? p : 0.0;
          ++n;
        }
      }
    }
    r.confidence = n ? sum / static_cast<double>(n) : 0.0;
  }
  std::stable_sort(cand.begin(), cand.end(),
                   [](const Region& a, const Region& b) {
                     return a.confidence > b.confidence;
                   });
  if (k < static_cast<int>(cand.size())) {
    cand.resize(static_cast<std::size_t>(std::max(k, 0)));
  }
  for (std::size_t i = cand.size(); i < static_cast<std::size_t>(k); ++i) {
    Region r = cand[i % 5];
    r.padded = true;
    cand.push_back(r);
  }
  return cand;
}

ImageGrid crop_region(const ImageGrid& image, const Region& region) {
  image.validate();
  if (region.row0 < 0 || region.col0 < 0 || region.row1 > image.height ||
      region.col1 > image.width || region.row1 <= region.row0 ||
      region.col1 <= region.col0) {
    throw BoundsError("crop_region: box (" + std::to_string(region.row0) +
                      "," + std::to_string(region.col0) + "," +
                      std::to_string(region.row1) + "," +
                      std::to_string(region.col1) + ") outside " +
                      std::to_string(image.height) + "x" +
                      std::to_string(image.width));
  }
  ImageGrid out;
  out.height = image.height;
  out.width = image.width;
  out.channels = image.channels;
  out.pixels.resize(image.pixels.size());
  const int rh = region.row1 - region.row0;
  const int rw = region.col1 - region.col0;
  for (int r = 0; r < out.height; ++r) {
    const int sr = region.row0 + (r * rh) / out.height;
    for (int c = 0; c < out.width; ++c) {
      const int sc = region.col0 + (c * rw) / out.width;
      for (int ch = 0; ch < out.channels; ++ch) {
        out.at(r, c, ch) = image.at(sr, sc, ch);
      }
    }
  }
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> to_img0_bytes(const ImageGrid& image) {
  image.validate();
  std::vector<std::uint8_t> out;
  out.reserve(16 + image.pixels.size() * 4);
  out.insert(out.end(), {'I', 'M', 'G', '0'});
  put_u32(out, static_cast<std::uint32_t>(image.height));
  put_u32(out, static_cast<std::uint32_t>(image.width));
  put_u32(out, static_cast<std::uint32_t>(image.channels));
  for (double p : image.pixels) {
    const float f = static_cast<float>(p);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  return out;
}

ImageGrid from_img0_bytes(const std::uint8_t* data, std::size_t len) {
  if (len < 16 || std::memcmp(data, "IMG0", 4) != 0) {
    throw FormatError("img0: bad magic or truncated header");
  }
  ImageGrid img;
  img.height = static_cast<int>(get_u32(data + 4));
  img.width = static_cast<int>(get_u32(data + 8));
  img.channels = static_cast<int>(get_u32(data + 12));
  if (img.height <= 0 || img.width <= 0 || img.channels <= 0 ||
      img.height > 4096 || img.width > 4096 || img.channels > 16) {
    throw FormatError("img0: implausible dimensions in header");
  }
  const std::size_t n =
      static_cast<std::size_t>(img.height) * img.width * img.channels;
  if (len != 16 + n * 4) {
    throw TruncationError("img0: expected " + std::to_string(16 + n * 4) +
                          " bytes, got " + std::to_string(len));
  }
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(data + 16 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    img.pixels[i] = static_cast<double>(f);
  }
  img.validate();
  return img;
}

void save_img0(const std::string& path, const ImageGrid& image) {
  auto bytes = to_img0_bytes(image);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("img0: cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ParseError("img0: write failed for '" + path + "'");
}

ImageGrid load_img0(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("img0: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return from_img0_bytes(bytes.data(), bytes.size());
}

}  // namespace cvlm
