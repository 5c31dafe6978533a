#include "tslc/tensor.hpp"

#include <numeric>
#include <sstream>

namespace tslc {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape, DType dtype) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = dtype;
  t.st_ = std::make_shared<Storage>();
  const auto n = static_cast<std::size_t>(shape_numel(t.shape_));
  switch (dtype) {
    case DType::F32: t.st_->f.assign(n, 0.0f); break;
    case DType::I64: t.st_->i.assign(n, 0); break;
    case DType::Q8: t.st_->q.assign(n, 0); break;
  }
  return t;
}

Tensor Tensor::from_data(std::vector<std::int64_t> shape, std::vector<float> data) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::F32;
  t.st_ = std::make_shared<Storage>();
  t.st_->f = std::move(data);
  return t;
}

Tensor Tensor::from_labels(std::vector<std::int64_t> shape, std::vector<std::int64_t> labels) {
  if (shape_numel(shape) != static_cast<std::int64_t>(labels.size()))
    throw DimensionError("label count does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::I64;
  t.st_ = std::make_shared<Storage>();
  t.st_->i = std::move(labels);
  return t;
}

Tensor Tensor::from_q8(std::vector<std::int64_t> shape, std::vector<std::int8_t> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw DimensionError("q8 value count does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.dtype_ = DType::Q8;
  t.st_ = std::make_shared<Storage>();
  t.st_->q = std::move(values);
  return t;
}

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

Tensor Tensor::uniform(std::vector<std::int64_t> shape, float bound, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.st_->f) v = rng.uniform(-bound, bound);
  return t;
}

std::int64_t Tensor::numel() const {
  if (!st_) return 0;
  std::int64_t n = 1;
  for (auto d : shape_) n *= d;
  return n;
}

std::span<float> Tensor::f32() {
  if (!st_ || dtype_ != DType::F32) throw ContractError("tensor is not F32");
  return st_->f;
}
std::span<const float> Tensor::f32() const {
  if (!st_ || dtype_ != DType::F32) throw ContractError("tensor is not F32");
  return st_->f;
}
std::span<std::int64_t> Tensor::i64() {
  if (!st_ || dtype_ != DType::I64) throw ContractError("tensor is not I64");
  return st_->i;
}
std::span<const std::int64_t> Tensor::i64() const {
  if (!st_ || dtype_ != DType::I64) throw ContractError("tensor is not I64");
  return st_->i;
}
std::span<std::int8_t> Tensor::q8() {
  if (!st_ || dtype_ != DType::Q8) throw ContractError("tensor is not Q8");
  return st_->q;
}
std::span<const std::int8_t> Tensor::q8() const {
  if (!st_ || dtype_ != DType::Q8) throw ContractError("tensor is not Q8");
  return st_->q;
}

bool Tensor::requires_grad() const { return st_ && st_->grad != nullptr; }

void Tensor::set_requires_grad(bool on) {
  if (!st_) throw ContractError("undefined tensor");
  if (on) {
    if (dtype_ != DType::F32) throw ContractError("only F32 tensors can carry grad");
    if (!st_->grad)
      st_->grad = std::make_unique<std::vector<float>>(static_cast<std::size_t>(numel()), 0.0f);
  } else {
    st_->grad.reset();
  }
}

std::span<float> Tensor::grad() {
  if (!requires_grad()) throw ContractError("tensor has no grad buffer");
  return *st_->grad;
}
std::span<const float> Tensor::grad() const {
  if (!requires_grad()) throw ContractError("tensor has no grad buffer");
  return *st_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(st_->grad->begin(), st_->grad->end(), 0.0f);
}

Tensor Tensor::deep_clone() const {
  if (!st_) return {};
  Tensor t;
  t.shape_ = shape_;
  t.dtype_ = dtype_;
  t.st_ = std::make_shared<Storage>();
  t.st_->f = st_->f;
  t.st_->i = st_->i;
  t.st_->q = st_->q;
  if (st_->grad) t.st_->grad = std::make_unique<std::vector<float>>(*st_->grad);
  return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                         " changes element count");
  Tensor t = *this;
  t.shape_ = std::move(new_shape);
  return t;
}

float Tensor::item() const {
  if (numel() != 1 || dtype_ != DType::F32) throw ContractError("item() needs a scalar F32 tensor");
  return st_->f[0];
}

std::int64_t Tensor::tape_id(std::uint64_t gen) const {
  if (!st_ || st_->tape_gen != gen) return -1;
  return st_->tape_node;
}

void Tensor::set_tape_id(std::uint64_t gen, std::int64_t id) const {
  st_->tape_gen = gen;
  st_->tape_node = id;
}

}  // namespace tslc
