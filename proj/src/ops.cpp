#include "tslc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace tslc::ops {

namespace {

bool any_grad(std::initializer_list<const Tensor*> ins) {
  for (auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

std::vector<std::int64_t> tracked_ids(Tape& tape, std::initializer_list<const Tensor*> ins) {
  std::vector<std::int64_t> ids;
  for (auto* t : ins)
    if (t->requires_grad()) ids.push_back(tape.ensure_leaf(*t));
  return ids;
}

void require_f32(const Tensor& t, const char* what) {
  if (t.dtype() != DType::F32) throw DimensionError(std::string(what) + " must be F32");
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      float acc = 0.0f;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn(const float* a, const float* b, float* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    const float* brow = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      float* crow = c + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvDims {
  std::int64_t batch, c_in, h, w, c_out, k, oh, ow;
  bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (w.ndim() != 4) throw DimensionError("conv2d weight must be [c_out,c_in,k,k]");
  if (w.dim(2) != w.dim(3)) throw DimensionError("conv2d kernel must be square");
  ConvDims d{};
  d.batched = x.ndim() == 4;
  if (x.ndim() != 3 && x.ndim() != 4)
    throw DimensionError("conv2d input must be [c,h,w] or [n,c,h,w]");
  d.batch = d.batched ? x.dim(0) : 1;
  d.c_in = x.dim(d.batched ? 1 : 0);
  d.h = x.dim(d.batched ? 2 : 1);
  d.w = x.dim(d.batched ? 3 : 2);
  d.c_out = w.dim(0);
  d.k = w.dim(2);
  if (w.dim(1) != d.c_in)
    throw DimensionError("conv2d channel mismatch: input " + std::to_string(d.c_in) +
                         ", weight expects " + std::to_string(w.dim(1)));
  if (d.k > d.h + 2 * pad || d.k > d.w + 2 * pad)
    throw DimensionError("conv2d kernel larger than padded input");
  if ((d.h + 2 * pad - d.k) % stride != 0 || (d.w + 2 * pad - d.k) % stride != 0)
    throw DimensionError("conv2d output dims are not integral for stride " +
                         std::to_string(stride));
  d.oh = (d.h + 2 * pad - d.k) / stride + 1;
  d.ow = (d.w + 2 * pad - d.k) / stride + 1;
  return d;
}

// cols[(c_in*k*k) x (oh*ow)], zero-padded borders.
void im2col(const float* x, const ConvDims& d, int stride, int pad, float* cols) {
  const std::int64_t patch = d.k * d.k;
  for (std::int64_t c = 0; c < d.c_in; ++c) {
    const float* plane = x + c * d.h * d.w;
    for (std::int64_t ki = 0; ki < d.k; ++ki) {
      for (std::int64_t kj = 0; kj < d.k; ++kj) {
        float* row = cols + (c * patch + ki * d.k + kj) * (d.oh * d.ow);
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * stride + kj - pad;
            row[oy * d.ow + ox] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                      ? plane[iy * d.w + ix]
                                      : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* cols, const ConvDims& d, int stride, int pad, float* dx) {
  const std::int64_t patch = d.k * d.k;
  for (std::int64_t c = 0; c < d.c_in; ++c) {
    float* plane = dx + c * d.h * d.w;
    for (std::int64_t ki = 0; ki < d.k; ++ki) {
      for (std::int64_t kj = 0; kj < d.k; ++kj) {
        const float* row = cols + (c * patch + ki * d.k + kj) * (d.oh * d.ow);
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= d.h) continue;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * stride + kj - pad;
            if (ix < 0 || ix >= d.w) continue;
            plane[iy * d.w + ix] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_f32(a, "matmul lhs");
  require_f32(b, "matmul rhs");
  if (a.ndim() != 2 || b.ndim() != 2)
    throw DimensionError("matmul needs rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dims differ: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = Tensor::zeros({m, n});
  mm_nn(a.f32().data(), b.f32().data(), y.f32().data(), m, k, n);

  if (tape.recording() && any_grad({&a, &b})) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&a, &b});
    Tensor ac = a, bc = b, yc = y;
    tape.push(OpKind::MatMul, std::move(ids),
              [ac, bc, yc, m, k, n]() mutable {
                const float* dy = yc.grad().data();
                if (ac.requires_grad()) mm_nt(dy, bc.f32().data(), ac.grad().data(), m, n, k);
                if (bc.requires_grad()) mm_tn(ac.f32().data(), dy, bc.grad().data(), m, k, n);
              },
              y);
  }
  return y;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor* bias, int stride,
              int pad) {
  require_f32(x, "conv2d input");
  require_f32(w, "conv2d weight");
  if (stride <= 0) throw DimensionError("conv2d stride must be positive");
  const ConvDims d = conv_dims(x, w, stride, pad);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != d.c_out))
    throw DimensionError("conv2d bias must be [c_out]");

  const std::int64_t cik2 = d.c_in * d.k * d.k;
  const std::int64_t spatial = d.oh * d.ow;
  Tensor y = d.batched ? Tensor::zeros({d.batch, d.c_out, d.oh, d.ow})
                       : Tensor::zeros({d.c_out, d.oh, d.ow});

  std::vector<float> cols(static_cast<std::size_t>(cik2 * spatial));
  for (std::int64_t s = 0; s < d.batch; ++s) {
    const float* xs = x.f32().data() + s * d.c_in * d.h * d.w;
    float* ys = y.f32().data() + s * d.c_out * spatial;
    im2col(xs, d, stride, pad, cols.data());
    mm_nn(w.f32().data(), cols.data(), ys, d.c_out, cik2, spatial);
    if (bias) {
      const float* b = bias->f32().data();
      for (std::int64_t c = 0; c < d.c_out; ++c)
        for (std::int64_t i = 0; i < spatial; ++i) ys[c * spatial + i] += b[c];
    }
  }

  const bool has_bias_grad = bias && bias->requires_grad();
  if (tape.recording() && (any_grad({&x, &w}) || has_bias_grad)) {
    y.set_requires_grad(true);
    std::vector<std::int64_t> ids = bias ? tracked_ids(tape, {&x, &w, bias})
                                         : tracked_ids(tape, {&x, &w});
    Tensor xc = x, wc = w, yc = y;
    Tensor bc = bias ? *bias : Tensor();
    tape.push(OpKind::Conv2D, std::move(ids),
              [xc, wc, bc, yc, d, stride, pad, cik2, spatial]() mutable {
                std::vector<float> cols(static_cast<std::size_t>(cik2 * spatial));
                std::vector<float> dcols(static_cast<std::size_t>(cik2 * spatial));
                for (std::int64_t s = 0; s < d.batch; ++s) {
                  const float* dys = yc.grad().data() + s * d.c_out * spatial;
                  if (wc.requires_grad() || xc.requires_grad())
                    im2col(xc.f32().data() + s * d.c_in * d.h * d.w, d, stride, pad, cols.data());
                  if (wc.requires_grad())
                    mm_nt(dys, cols.data(), wc.grad().data(), d.c_out, spatial, cik2);
                  if (xc.requires_grad()) {
                    std::fill(dcols.begin(), dcols.end(), 0.0f);
                    mm_tn(wc.f32().data(), dys, dcols.data(), d.c_out, cik2, spatial);
                    col2im_acc(dcols.data(), d, stride, pad,
                               xc.grad().data() + s * d.c_in * d.h * d.w);
                  }
                  if (bc.defined() && bc.requires_grad()) {
                    float* db = bc.grad().data();
                    for (std::int64_t c = 0; c < d.c_out; ++c)
                      for (std::int64_t i = 0; i < spatial; ++i) db[c] += dys[c * spatial + i];
                  }
                }
              },
              y);
  }
  return y;
}

Tensor relu(Tape& tape, const Tensor& x) {
  require_f32(x, "relu input");
  Tensor y = Tensor::zeros(x.shape());
  auto xs = x.f32();
  auto ys = y.f32();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0f ? xs[i] : 0.0f;

  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::ReLU, std::move(ids),
              [xc, yc]() mutable {
                auto xs = xc.f32();
                auto dy = yc.grad();
                auto dx = xc.grad();
                for (std::size_t i = 0; i < xs.size(); ++i)
                  if (xs[i] > 0.0f) dx[i] += dy[i];
              },
              y);
  }
  return y;
}

Tensor batchnorm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 const Tensor& mean, const Tensor& var, float eps) {
  require_f32(x, "batchnorm input");
  if (gamma.requires_grad() || beta.requires_grad() || mean.requires_grad() ||
      var.requires_grad())
    throw ContractError("batchnorm runs in inference form; its parameters must be frozen");
  const bool batched = x.ndim() == 4;
  if (x.ndim() != 3 && x.ndim() != 4)
    throw DimensionError("batchnorm input must be [c,h,w] or [n,c,h,w]");
  const std::int64_t batch = batched ? x.dim(0) : 1;
  const std::int64_t c = x.dim(batched ? 1 : 0);
  const std::int64_t plane = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
  if (gamma.numel() != c || beta.numel() != c || mean.numel() != c || var.numel() != c)
    throw DimensionError("batchnorm parameter size must equal channel count");

  std::vector<float> a(static_cast<std::size_t>(c)), b(static_cast<std::size_t>(c));
  for (std::int64_t i = 0; i < c; ++i) {
    a[i] = gamma.f32()[i] / std::sqrt(var.f32()[i] + eps);
    b[i] = beta.f32()[i] - mean.f32()[i] * a[i];
  }
  Tensor y = Tensor::zeros(x.shape());
  for (std::int64_t s = 0; s < batch; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float* xp = x.f32().data() + (s * c + ch) * plane;
      float* yp = y.f32().data() + (s * c + ch) * plane;
      for (std::int64_t i = 0; i < plane; ++i) yp[i] = a[ch] * xp[i] + b[ch];
    }

  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::BatchNorm, std::move(ids),
              [xc, yc, a, batch, c, plane]() mutable {
                for (std::int64_t s = 0; s < batch; ++s)
                  for (std::int64_t ch = 0; ch < c; ++ch) {
                    const float* dy = yc.grad().data() + (s * c + ch) * plane;
                    float* dx = xc.grad().data() + (s * c + ch) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) dx[i] += a[ch] * dy[i];
                  }
              },
              y);
  }
  return y;
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const Tensor& labels) {
  require_f32(logits, "logits");
  if (logits.ndim() != 2) throw DimensionError("logits must be [n, classes]");
  if (labels.dtype() != DType::I64 || labels.ndim() != 1 || labels.dim(0) != logits.dim(0))
    throw DimensionError("labels must be I64 [n] matching the logits batch");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  for (auto l : labels.i64())
    if (l < 0 || l >= c)
      throw InputError("label " + std::to_string(l) + " out of range [0, " + std::to_string(c) +
                       ")");

  Tensor probs = Tensor::zeros({n, c});
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.f32().data() + i * c;
    float* prow = probs.f32().data() + i * c;
    float mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (std::int64_t j = 0; j < c; ++j) prow[j] = static_cast<float>(prow[j] / denom);
    total += -std::log(static_cast<double>(
        std::max(prow[labels.i64()[i]], 1e-30f)));
  }
  Tensor loss = Tensor::scalar(static_cast<float>(total / static_cast<double>(n)));

  if (tape.recording() && logits.requires_grad()) {
    loss.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&logits});
    Tensor lc = logits, lab = labels, lss = loss;
    tape.push(OpKind::SoftmaxCE, std::move(ids),
              [lc, lab, lss, probs, n, c]() mutable {
                const float g = lss.grad()[0] / static_cast<float>(n);
                float* dl = lc.grad().data();
                const float* p = probs.f32().data();
                for (std::int64_t i = 0; i < n; ++i) {
                  for (std::int64_t j = 0; j < c; ++j) dl[i * c + j] += g * p[i * c + j];
                  dl[i * c + lab.i64()[i]] -= g;
                }
              },
              loss);
  }
  return loss;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw DimensionError("concat supports axis 0 or 1");
  for (const auto& p : parts) require_f32(p, "concat input");

  Tensor y;
  if (axis == 0) {
    auto shape = parts[0].shape();
    std::int64_t rows = 0;
    for (const auto& p : parts) {
      if (p.ndim() != shape.size())
        throw DimensionError("concat rank mismatch");
      for (std::size_t i = 1; i < shape.size(); ++i)
        if (p.shape()[i] != shape[i]) throw DimensionError("concat trailing dims differ");
      rows += p.dim(0);
    }
    shape[0] = rows;
    y = Tensor::zeros(shape);
    std::int64_t off = 0;
    for (const auto& p : parts) {
      std::memcpy(y.f32().data() + off, p.f32().data(), p.numel() * sizeof(float));
      off += p.numel();
    }
  } else {
    const std::int64_t m = parts[0].dim(0);
    std::int64_t cols = 0;
    for (const auto& p : parts) {
      if (p.ndim() != 2 || p.dim(0) != m)
        throw DimensionError("concat axis-1 needs rank-2 tensors with equal rows");
      cols += p.dim(1);
    }
    y = Tensor::zeros({m, cols});
    std::int64_t off = 0;
    for (const auto& p : parts) {
      const std::int64_t pc = p.dim(1);
      for (std::int64_t r = 0; r < m; ++r)
        std::memcpy(y.f32().data() + r * cols + off, p.f32().data() + r * pc,
                    static_cast<std::size_t>(pc) * sizeof(float));
      off += pc;
    }
  }

  bool grad = false;
  if (tape.recording())
    for (const auto& p : parts)
      if (p.requires_grad()) grad = true;
  if (grad) {
    y.set_requires_grad(true);
    std::vector<std::int64_t> ids;
    std::vector<Tensor> held(parts.begin(), parts.end());
    for (const auto& p : held)
      if (p.requires_grad()) ids.push_back(tape.ensure_leaf(p));
    Tensor yc = y;
    tape.push(OpKind::Concat, std::move(ids),
              [held, yc, axis]() mutable {
                if (axis == 0) {
                  std::int64_t off = 0;
                  for (auto& p : held) {
                    if (p.requires_grad()) {
                      auto dy = yc.grad();
                      auto dx = p.grad();
                      for (std::int64_t i = 0; i < p.numel(); ++i) dx[i] += dy[off + i];
                    }
                    off += p.numel();
                  }
                } else {
                  const std::int64_t m = yc.dim(0), cols = yc.dim(1);
                  std::int64_t off = 0;
                  for (auto& p : held) {
                    const std::int64_t pc = p.dim(1);
                    if (p.requires_grad()) {
                      auto dy = yc.grad();
                      auto dx = p.grad();
                      for (std::int64_t r = 0; r < m; ++r)
                        for (std::int64_t j = 0; j < pc; ++j)
                          dx[r * pc + j] += dy[r * cols + off + j];
                    }
                    off += pc;
                  }
                }
              },
              y);
  }
  return y;
}

Tensor col_slice(Tape& tape, const Tensor& x, std::int64_t lo, std::int64_t hi) {
  require_f32(x, "col_slice input");
  if (x.ndim() != 2) throw DimensionError("col_slice needs a rank-2 tensor");
  if (lo < 0 || hi > x.dim(1) || lo >= hi) throw DimensionError("col_slice range invalid");
  const std::int64_t m = x.dim(0), n = x.dim(1), w = hi - lo;
  Tensor y = Tensor::zeros({m, w});
  for (std::int64_t r = 0; r < m; ++r)
    std::memcpy(y.f32().data() + r * w, x.f32().data() + r * n + lo,
                static_cast<std::size_t>(w) * sizeof(float));

  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::ColSlice, std::move(ids),
              [xc, yc, lo, m, n, w]() mutable {
                auto dy = yc.grad();
                auto dx = xc.grad();
                for (std::int64_t r = 0; r < m; ++r)
                  for (std::int64_t j = 0; j < w; ++j) dx[r * n + lo + j] += dy[r * w + j];
              },
              y);
  }
  return y;
}

Tensor transpose2d(Tape& tape, const Tensor& x) {
  require_f32(x, "transpose input");
  if (x.ndim() != 2) throw DimensionError("transpose2d needs a rank-2 tensor");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor y = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) y.f32()[j * m + i] = x.f32()[i * n + j];

  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::Transpose2D, std::move(ids),
              [xc, yc, m, n]() mutable {
                auto dy = yc.grad();
                auto dx = xc.grad();
                for (std::int64_t i = 0; i < m; ++i)
                  for (std::int64_t j = 0; j < n; ++j) dx[i * n + j] += dy[j * m + i];
              },
              y);
  }
  return y;
}

namespace {

Tensor softmax_axis(Tape& tape, const Tensor& x, bool rows) {
  require_f32(x, "softmax input");
  if (x.ndim() != 2) throw DimensionError("softmax needs a rank-2 tensor");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor y = Tensor::zeros({m, n});
  const std::int64_t outer = rows ? m : n;
  const std::int64_t inner = rows ? n : m;
  auto at = [&](std::int64_t o, std::int64_t i) { return rows ? o * n + i : i * n + o; };
  for (std::int64_t o = 0; o < outer; ++o) {
    float mx = x.f32()[at(o, 0)];
    for (std::int64_t i = 1; i < inner; ++i) mx = std::max(mx, x.f32()[at(o, i)]);
    double denom = 0.0;
    for (std::int64_t i = 0; i < inner; ++i) {
      const float e = std::exp(x.f32()[at(o, i)] - mx);
      y.f32()[at(o, i)] = e;
      denom += e;
    }
    for (std::int64_t i = 0; i < inner; ++i)
      y.f32()[at(o, i)] = static_cast<float>(y.f32()[at(o, i)] / denom);
  }

  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(rows ? OpKind::SoftmaxRows : OpKind::SoftmaxCols, std::move(ids),
              [xc, yc, m, n, rows]() mutable {
                const std::int64_t outer = rows ? m : n;
                const std::int64_t inner = rows ? n : m;
                auto at = [&](std::int64_t o, std::int64_t i) {
                  return rows ? o * n + i : i * n + o;
                };
                auto p = yc.f32();
                auto dy = yc.grad();
                auto dx = xc.grad();
                for (std::int64_t o = 0; o < outer; ++o) {
                  double dot = 0.0;
                  for (std::int64_t i = 0; i < inner; ++i) dot += p[at(o, i)] * dy[at(o, i)];
                  for (std::int64_t i = 0; i < inner; ++i)
                    dx[at(o, i)] += p[at(o, i)] * (dy[at(o, i)] - static_cast<float>(dot));
                }
              },
              y);
  }
  return y;
}

}  // namespace

Tensor softmax_rows(Tape& tape, const Tensor& x) { return softmax_axis(tape, x, true); }
Tensor softmax_cols(Tape& tape, const Tensor& x) { return softmax_axis(tape, x, false); }

Tensor scale(Tape& tape, const Tensor& x, const Tensor& alpha) {
  require_f32(x, "scale input");
  if (alpha.numel() != 1 || alpha.dtype() != DType::F32)
    throw DimensionError("scale gate must be a [1] F32 tensor");
  const float a = alpha.f32()[0];
  Tensor y = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y.f32()[i] = a * x.f32()[i];

  if (tape.recording() && any_grad({&x, &alpha})) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x, &alpha});
    Tensor xc = x, ac = alpha, yc = y;
    tape.push(OpKind::Scale, std::move(ids),
              [xc, ac, yc]() mutable {
                auto dy = yc.grad();
                if (xc.requires_grad()) {
                  const float a = ac.f32()[0];
                  auto dx = xc.grad();
                  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += a * dy[i];
                }
                if (ac.requires_grad()) {
                  double acc = 0.0;
                  auto xs = xc.f32();
                  for (std::size_t i = 0; i < dy.size(); ++i) acc += xs[i] * dy[i];
                  ac.grad()[0] += static_cast<float>(acc);
                }
              },
              y);
  }
  return y;
}

Tensor one_minus(Tape& tape, const Tensor& a) {
  if (a.numel() != 1 || a.dtype() != DType::F32)
    throw DimensionError("one_minus needs a [1] F32 tensor");
  Tensor y = Tensor::scalar(1.0f - a.f32()[0]);
  if (tape.recording() && a.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&a});
    Tensor ac = a, yc = y;
    tape.push(OpKind::OneMinus, std::move(ids),
              [ac, yc]() mutable { ac.grad()[0] -= yc.grad()[0]; }, y);
  }
  return y;
}

Tensor const_mul(Tape& tape, const Tensor& x, float c) {
  require_f32(x, "const_mul input");
  Tensor y = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y.f32()[i] = c * x.f32()[i];
  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::ConstMul, std::move(ids),
              [xc, yc, c]() mutable {
                auto dy = yc.grad();
                auto dx = xc.grad();
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += c * dy[i];
              },
              y);
  }
  return y;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_f32(a, "add lhs");
  require_f32(b, "add rhs");
  if (a.shape() != b.shape())
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  Tensor y = Tensor::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.f32()[i] = a.f32()[i] + b.f32()[i];

  if (tape.recording() && any_grad({&a, &b})) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&a, &b});
    Tensor ac = a, bc = b, yc = y;
    tape.push(OpKind::Add, std::move(ids),
              [ac, bc, yc]() mutable {
                auto dy = yc.grad();
                if (ac.requires_grad()) {
                  auto da = ac.grad();
                  for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
                }
                if (bc.requires_grad()) {
                  auto db = bc.grad();
                  for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
                }
              },
              y);
  }
  return y;
}

Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& b) {
  require_f32(x, "bias_add input");
  require_f32(b, "bias");
  if (b.ndim() != 1) throw DimensionError("bias must be rank 1");
  std::int64_t groups, width, repeat;  // y[g, c, r] += b[c] layout
  if (x.ndim() == 2 && b.dim(0) == x.dim(1)) {
    groups = x.dim(0);
    width = x.dim(1);
    repeat = 1;
  } else if (x.ndim() == 3 && b.dim(0) == x.dim(0)) {
    groups = 1;
    width = x.dim(0);
    repeat = x.dim(1) * x.dim(2);
  } else if (x.ndim() == 4 && b.dim(0) == x.dim(1)) {
    groups = x.dim(0);
    width = x.dim(1);
    repeat = x.dim(2) * x.dim(3);
  } else {
    throw DimensionError("bias_add: bias " + shape_str(b.shape()) + " does not fit input " +
                         shape_str(x.shape()));
  }
  Tensor y = Tensor::zeros(x.shape());
  for (std::int64_t g = 0; g < groups; ++g)
    for (std::int64_t c = 0; c < width; ++c) {
      const float bv = b.f32()[c];
      const std::int64_t base = (g * width + c) * repeat;
      for (std::int64_t r = 0; r < repeat; ++r) y.f32()[base + r] = x.f32()[base + r] + bv;
    }

  if (tape.recording() && any_grad({&x, &b})) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x, &b});
    Tensor xc = x, bc = b, yc = y;
    tape.push(OpKind::BiasAdd, std::move(ids),
              [xc, bc, yc, groups, width, repeat]() mutable {
                auto dy = yc.grad();
                if (xc.requires_grad()) {
                  auto dx = xc.grad();
                  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                }
                if (bc.requires_grad()) {
                  auto db = bc.grad();
                  for (std::int64_t g = 0; g < groups; ++g)
                    for (std::int64_t c = 0; c < width; ++c) {
                      const std::int64_t base = (g * width + c) * repeat;
                      float acc = 0.0f;
                      for (std::int64_t r = 0; r < repeat; ++r) acc += dy[base + r];
                      db[c] += acc;
                    }
                }
              },
              y);
  }
  return y;
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require_f32(x, "mean_rows input");
  if (x.ndim() != 2) throw DimensionError("mean_rows needs a rank-2 tensor");
  const std::int64_t t = x.dim(0), d = x.dim(1);
  Tensor y = Tensor::zeros({1, d});
  for (std::int64_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (std::int64_t r = 0; r < t; ++r) acc += x.f32()[r * d + j];
    y.f32()[j] = static_cast<float>(acc / static_cast<double>(t));
  }
  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::MeanRows, std::move(ids),
              [xc, yc, t, d]() mutable {
                auto dy = yc.grad();
                auto dx = xc.grad();
                const float inv = 1.0f / static_cast<float>(t);
                for (std::int64_t r = 0; r < t; ++r)
                  for (std::int64_t j = 0; j < d; ++j) dx[r * d + j] += inv * dy[j];
              },
              y);
  }
  return y;
}

Tensor gather_flat(Tape& tape, const Tensor& x,
                   std::shared_ptr<const std::vector<std::int64_t>> idx,
                   std::vector<std::int64_t> out_shape) {
  require_f32(x, "gather input");
  if (shape_numel(out_shape) != static_cast<std::int64_t>(idx->size()))
    throw DimensionError("gather index count does not match output shape");
  Tensor y = Tensor::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const std::int64_t j = (*idx)[i];
    if (j < 0 || j >= x.numel()) throw DimensionError("gather index out of range");
    y.f32()[i] = x.f32()[j];
  }
  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto ids = tracked_ids(tape, {&x});
    Tensor xc = x, yc = y;
    tape.push(OpKind::Permute, std::move(ids),
              [xc, yc, idx]() mutable {
                auto dy = yc.grad();
                auto dx = xc.grad();
                for (std::size_t i = 0; i < idx->size(); ++i) dx[(*idx)[i]] += dy[i];
              },
              y);
  }
  return y;
}

Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != 2 || k.shape() != q.shape() || v.shape() != q.shape())
    throw DimensionError("attention expects q,k,v of identical [t,d] shapes");
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(q.dim(1)));
  Tensor scores = const_mul(tape, matmul(tape, q, transpose2d(tape, k)), inv_sqrt_d);
  return matmul(tape, softmax_rows(tape, scores), v);
}

Tensor multihead_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                           int n_heads, const Tensor& wo) {
  if (q.ndim() != 2) throw DimensionError("multihead_attention expects [t,d] inputs");
  const std::int64_t d = q.dim(1);
  if (n_heads <= 0 || d % n_heads != 0)
    throw DimensionError("d_model must be divisible by n_heads");
  const std::int64_t dh = d / n_heads;
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const std::int64_t lo = h * dh, hi = (h + 1) * dh;
    heads.push_back(attention(tape, col_slice(tape, q, lo, hi), col_slice(tape, k, lo, hi),
                              col_slice(tape, v, lo, hi)));
  }
  return matmul(tape, concat(tape, heads, 1), wo);
}

Tensor linear_attention(Tape& tape, const Tensor& xq, const Tensor& xk, const Tensor& xv,
                        const Tensor& w1, const Tensor& w2) {
  if (xq.ndim() != 2 || xk.shape() != xq.shape())
    throw DimensionError("linear_attention expects xq and xk of identical [t,d] shapes");
  if (xv.ndim() != 2 || xv.dim(0) != xq.dim(0))
    throw DimensionError("linear_attention xv must share the token count");
  const Tensor qk[] = {xq, xk};
  Tensor aw = softmax_cols(tape, matmul(tape, concat(tape, qk, 1), w1));
  const Tensor av[] = {aw, xv};
  return matmul(tape, concat(tape, av, 1), w2);
}

void sgd_step(std::span<Tensor> params, float lr, float weight_decay) {
  if (lr <= 0.0f) throw ContractError("sgd_step requires lr > 0");
  for (auto& p : params) {
    if (!p.requires_grad()) continue;
    auto w = p.f32();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + weight_decay * w[i]);
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace tslc::ops
