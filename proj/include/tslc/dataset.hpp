#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tslc/rng.hpp"
#include "tslc/tensor.hpp"

namespace tslc::data {

// On-disk layout, little-endian:
//   magic "TSDS" | u32 count | u16 feature_dim | u8 n_classes
//   | count x { label u8, feature_dim x F32 }

struct Dataset {
  int feature_dim = 0;
  int n_classes = 0;
  std::vector<std::uint8_t> labels;
  std::vector<float> features;  // row-major [count x feature_dim]

  std::size_t size() const { return labels.size(); }
  Tensor features_tensor() const;
  Tensor labels_tensor() const;
  Dataset subset(std::size_t start, std::size_t count) const;
};

std::vector<std::uint8_t> serialize_dataset(const Dataset& d);
Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Isotropic Gaussian mixture: one random mean per class (scaled by
/// mean_scale), samples are mean + noise * N(0, I).
Dataset make_gaussian_mixture(std::size_t n, int n_classes, int dim, float mean_scale,
                              float noise, Rng& rng);

/// Classic two-spirals in the plane, labels 0/1.
Dataset make_two_spirals(std::size_t n, float noise, Rng& rng);

/// Linearly separable two-class blobs in `dim` dimensions.
Dataset make_blobs2(std::size_t n, int dim, float separation, float noise, Rng& rng);

}  // namespace tslc::data
