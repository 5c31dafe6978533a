#include "tslc/field.hpp"

namespace tslc::secure {

void FieldSpec::validate() const {
  if (p <= 256) throw ConfigError("field modulus must exceed 2^8");
  if (p >= (1ull << 32)) throw ConfigError("field modulus must fit u32 residues");
  if (p % 2 == 0) throw ConfigError("field modulus must be prime");
  for (std::uint64_t d = 3; d * d <= p; d += 2)
    if (p % d == 0) throw ConfigError("field modulus must be prime");
}

std::uint32_t uniform_residue(Rng& rng, std::uint64_t p) {
  return static_cast<std::uint32_t>(rng.below(p));
}

std::size_t FieldLayer::input_numel() const {
  switch (kind) {
    case model::LayerKind::Linear: return static_cast<std::size_t>(c_in);
    case model::LayerKind::Conv2D:
      return static_cast<std::size_t>(c_in) * in_h * in_w;
    case model::LayerKind::BatchNorm:
      return static_cast<std::size_t>(c_in) * in_h * in_w;
    default: throw ContractError("unsupported field layer kind");
  }
}

std::size_t FieldLayer::output_numel() const {
  switch (kind) {
    case model::LayerKind::Linear: return static_cast<std::size_t>(c_out);
    case model::LayerKind::Conv2D:
      return static_cast<std::size_t>(c_out) * out_h * out_w;
    case model::LayerKind::BatchNorm:
      return static_cast<std::size_t>(c_in) * in_h * in_w;
    default: throw ContractError("unsupported field layer kind");
  }
}

std::vector<std::uint32_t> FieldLayer::input_dims() const {
  if (kind == model::LayerKind::Linear) return {static_cast<std::uint32_t>(c_in)};
  return {static_cast<std::uint32_t>(c_in), static_cast<std::uint32_t>(in_h),
          static_cast<std::uint32_t>(in_w)};
}

std::vector<std::uint32_t> FieldLayer::output_dims() const {
  if (kind == model::LayerKind::Linear) return {static_cast<std::uint32_t>(c_out)};
  if (kind == model::LayerKind::BatchNorm) return input_dims();
  return {static_cast<std::uint32_t>(c_out), static_cast<std::uint32_t>(out_h),
          static_cast<std::uint32_t>(out_w)};
}

namespace {

// y[rows, c_out] = x[rows, c_in] * W[c_in, c_out] mod p.
std::vector<std::uint32_t> linear_apply(const FieldLayer& l, std::span<const std::uint32_t> x,
                                        std::uint64_t p) {
  const std::size_t cin = static_cast<std::size_t>(l.c_in);
  const std::size_t cout = static_cast<std::size_t>(l.c_out);
  if (x.size() % cin != 0) throw DimensionError("field linear input is not a row multiple");
  const std::size_t rows = x.size() / cin;
  std::vector<std::uint32_t> y(rows * cout, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < cin; ++i) {
      const std::uint32_t xv = x[r * cin + i];
      if (xv == 0) continue;
      const std::uint32_t* wrow = l.weights.data() + i * cout;
      std::uint32_t* yrow = y.data() + r * cout;
      for (std::size_t j = 0; j < cout; ++j)
        yrow[j] = add_mod(yrow[j], mul_mod(xv, wrow[j], p), p);
    }
  return y;
}

std::vector<std::uint32_t> linear_apply_transpose(const FieldLayer& l,
                                                  std::span<const std::uint32_t> s,
                                                  std::uint64_t p) {
  const std::size_t cin = static_cast<std::size_t>(l.c_in);
  const std::size_t cout = static_cast<std::size_t>(l.c_out);
  if (s.size() % cout != 0) throw DimensionError("field transpose input is not a row multiple");
  const std::size_t rows = s.size() / cout;
  std::vector<std::uint32_t> out(rows * cin, 0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < cin; ++i) {
      std::uint64_t acc = 0;
      const std::uint32_t* wrow = l.weights.data() + i * cout;
      const std::uint32_t* srow = s.data() + r * cout;
      for (std::size_t j = 0; j < cout; ++j) acc = (acc + static_cast<std::uint64_t>(wrow[j]) * srow[j]) % p;
      out[r * cin + i] = static_cast<std::uint32_t>(acc);
    }
  return out;
}

std::vector<std::uint32_t> conv_apply(const FieldLayer& l, std::span<const std::uint32_t> x,
                                      std::uint64_t p) {
  if (x.size() != l.input_numel()) throw DimensionError("field conv input size mismatch");
  std::vector<std::uint32_t> y(l.output_numel(), 0);
  const int k = l.k;
  for (int co = 0; co < l.c_out; ++co)
    for (int oy = 0; oy < l.out_h; ++oy)
      for (int ox = 0; ox < l.out_w; ++ox) {
        std::uint64_t acc = 0;
        for (int ci = 0; ci < l.c_in; ++ci)
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * l.stride + ky - l.pad;
            if (iy < 0 || iy >= l.in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * l.stride + kx - l.pad;
              if (ix < 0 || ix >= l.in_w) continue;
              const std::uint32_t xv = x[(static_cast<std::size_t>(ci) * l.in_h + iy) * l.in_w + ix];
              const std::uint32_t wv =
                  l.weights[((static_cast<std::size_t>(co) * l.c_in + ci) * k + ky) * k + kx];
              acc = (acc + static_cast<std::uint64_t>(xv) * wv) % p;
            }
          }
        y[(static_cast<std::size_t>(co) * l.out_h + oy) * l.out_w + ox] =
            static_cast<std::uint32_t>(acc);
      }
  return y;
}

// Transposed conv: scatter each output-side s entry back through the kernel.
std::vector<std::uint32_t> conv_apply_transpose(const FieldLayer& l,
                                                std::span<const std::uint32_t> s,
                                                std::uint64_t p) {
  if (s.size() != l.output_numel()) throw DimensionError("field conv^T input size mismatch");
  std::vector<std::uint32_t> out(l.input_numel(), 0);
  const int k = l.k;
  for (int co = 0; co < l.c_out; ++co)
    for (int oy = 0; oy < l.out_h; ++oy)
      for (int ox = 0; ox < l.out_w; ++ox) {
        const std::uint32_t sv = s[(static_cast<std::size_t>(co) * l.out_h + oy) * l.out_w + ox];
        if (sv == 0) continue;
        for (int ci = 0; ci < l.c_in; ++ci)
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * l.stride + ky - l.pad;
            if (iy < 0 || iy >= l.in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * l.stride + kx - l.pad;
              if (ix < 0 || ix >= l.in_w) continue;
              const std::size_t at = (static_cast<std::size_t>(ci) * l.in_h + iy) * l.in_w + ix;
              const std::uint32_t wv =
                  l.weights[((static_cast<std::size_t>(co) * l.c_in + ci) * k + ky) * k + kx];
              out[at] = add_mod(out[at], mul_mod(sv, wv, p), p);
            }
          }
      }
  return out;
}

std::vector<std::uint32_t> bn_apply(const FieldLayer& l, std::span<const std::uint32_t> x,
                                    std::uint64_t p) {
  if (x.size() != l.input_numel()) throw DimensionError("field batchnorm input size mismatch");
  const std::size_t plane = static_cast<std::size_t>(l.in_h) * l.in_w;
  std::vector<std::uint32_t> y(x.size());
  for (int c = 0; c < l.c_in; ++c) {
    const std::uint32_t a = l.weights[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t at = static_cast<std::size_t>(c) * plane + i;
      y[at] = mul_mod(a, x[at], p);
    }
  }
  return y;
}

}  // namespace

std::vector<std::uint32_t> field_apply(const FieldLayer& l, std::span<const std::uint32_t> x,
                                       std::uint64_t p) {
  switch (l.kind) {
    case model::LayerKind::Linear: return linear_apply(l, x, p);
    case model::LayerKind::Conv2D: return conv_apply(l, x, p);
    case model::LayerKind::BatchNorm: return bn_apply(l, x, p);
    default: throw ContractError("unsupported field layer kind");
  }
}

std::vector<std::uint32_t> field_apply_transpose(const FieldLayer& l,
                                                 std::span<const std::uint32_t> s,
                                                 std::uint64_t p) {
  switch (l.kind) {
    case model::LayerKind::Linear: return linear_apply_transpose(l, s, p);
    case model::LayerKind::Conv2D: return conv_apply_transpose(l, s, p);
    case model::LayerKind::BatchNorm: return bn_apply(l, s, p);  // diagonal map
    default: throw ContractError("unsupported field layer kind");
  }
}

std::uint32_t dot_mod(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                      std::uint64_t p) {
  if (a.size() != b.size()) throw DimensionError("dot_mod length mismatch");
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc = (acc + static_cast<std::uint64_t>(a[i]) * b[i]) % p;
  return static_cast<std::uint32_t>(acc);
}

}  // namespace tslc::secure
