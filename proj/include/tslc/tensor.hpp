#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tslc/error.hpp"
#include "tslc/rng.hpp"

namespace tslc {

enum class DType : std::uint8_t { F32 = 0, I64 = 1, Q8 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::I64: return 8;
    case DType::Q8: return 1;
  }
  return 0;
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_str(const std::vector<std::int64_t>& shape);

/// Dense row-major array. Copies are shallow (storage is shared); use
/// deep_clone() for an independent buffer. The grad buffer exists only
/// while requires_grad is set, and Q8/I64 tensors never carry one.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape, DType dtype = DType::F32);
  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<float> data);
  static Tensor from_labels(std::vector<std::int64_t> shape, std::vector<std::int64_t> labels);
  static Tensor from_q8(std::vector<std::int64_t> shape, std::vector<std::int8_t> values);
  static Tensor scalar(float v);
  /// Uniform init in [-bound, bound].
  static Tensor uniform(std::vector<std::int64_t> shape, float bound, Rng& rng);

  bool defined() const { return st_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t numel() const;
  DType dtype() const { return dtype_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t ndim() const { return shape_.size(); }

  std::span<float> f32();
  std::span<const float> f32() const;
  std::span<std::int64_t> i64();
  std::span<const std::int64_t> i64() const;
  std::span<std::int8_t> q8();
  std::span<const std::int8_t> q8() const;

  bool requires_grad() const;
  /// Enables or drops the grad slot. Only valid for F32 tensors.
  void set_requires_grad(bool on);
  std::span<float> grad();
  std::span<const float> grad() const;
  void zero_grad();

  /// Frozen == no grad slot; the trainer never touches such tensors.
  bool frozen() const { return !requires_grad(); }

  Tensor deep_clone() const;
  /// Same storage, new shape (numel must match).
  Tensor reshaped(std::vector<std::int64_t> new_shape) const;

  bool same_storage(const Tensor& other) const { return st_ == other.st_; }

  float item() const;

  // Autodiff bookkeeping (used by Tape).
  std::int64_t tape_id(std::uint64_t gen) const;
  void set_tape_id(std::uint64_t gen, std::int64_t id) const;

 private:
  struct Storage;
  std::vector<std::int64_t> shape_;
  DType dtype_ = DType::F32;
  std::shared_ptr<Storage> st_;
};

struct Tensor::Storage {
  std::vector<float> f;
  std::vector<std::int64_t> i;
  std::vector<std::int8_t> q;
  std::unique_ptr<std::vector<float>> grad;
  // Tape registration, valid only for a matching generation.
  std::uint64_t tape_gen = 0;
  std::int64_t tape_node = -1;
};

}  // namespace tslc
