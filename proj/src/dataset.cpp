#include "tslc/dataset.hpp"

#include <cmath>
#include <cstring>

#include "tslc/checkpoint.hpp"
#include "tslc/error.hpp"

namespace tslc::data {

namespace {
const char kMagic[4] = {'T', 'S', 'D', 'S'};
}

Tensor Dataset::features_tensor() const {
  return Tensor::from_data({static_cast<std::int64_t>(size()), feature_dim}, features);
}

Tensor Dataset::labels_tensor() const {
  std::vector<std::int64_t> l(labels.begin(), labels.end());
  return Tensor::from_labels({static_cast<std::int64_t>(size())}, std::move(l));
}

Dataset Dataset::subset(std::size_t start, std::size_t count) const {
  if (start + count > size()) throw InputError("dataset subset out of range");
  Dataset d;
  d.feature_dim = feature_dim;
  d.n_classes = n_classes;
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(start),
                  labels.begin() + static_cast<std::ptrdiff_t>(start + count));
  const std::size_t fd = static_cast<std::size_t>(feature_dim);
  d.features.assign(features.begin() + static_cast<std::ptrdiff_t>(start * fd),
                    features.begin() + static_cast<std::ptrdiff_t>((start + count) * fd));
  return d;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& d) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  const std::uint32_t count = static_cast<std::uint32_t>(d.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((count >> (8 * i)) & 0xff));
  const std::uint16_t dim = static_cast<std::uint16_t>(d.feature_dim);
  out.push_back(static_cast<std::uint8_t>(dim & 0xff));
  out.push_back(static_cast<std::uint8_t>(dim >> 8));
  out.push_back(static_cast<std::uint8_t>(d.n_classes));
  const std::size_t fd = static_cast<std::size_t>(d.feature_dim);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.push_back(d.labels[i]);
    const std::size_t at = out.size();
    out.resize(at + fd * 4);
    std::memcpy(out.data() + at, d.features.data() + i * fd, fd * 4);
  }
  return out;
}

Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 11) throw FormatError("dataset truncated before header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad dataset magic");
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  const std::uint16_t dim =
      static_cast<std::uint16_t>(bytes[8] | (static_cast<std::uint16_t>(bytes[9]) << 8));
  Dataset d;
  d.feature_dim = dim;
  d.n_classes = bytes[10];
  const std::size_t rec = 1 + static_cast<std::size_t>(dim) * 4;
  if (bytes.size() != 11 + static_cast<std::size_t>(count) * rec)
    throw FormatError("dataset size does not match its header");
  d.labels.reserve(count);
  d.features.resize(static_cast<std::size_t>(count) * dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* at = bytes.data() + 11 + i * rec;
    if (*at >= d.n_classes) throw FormatError("dataset label out of range");
    d.labels.push_back(*at);
    std::memcpy(d.features.data() + static_cast<std::size_t>(i) * dim, at + 1,
                static_cast<std::size_t>(dim) * 4);
  }
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  model::write_file(path, serialize_dataset(d));
}

Dataset load_dataset(const std::string& path) {
  return deserialize_dataset(model::read_file(path));
}

Dataset make_gaussian_mixture(std::size_t n, int n_classes, int dim, float mean_scale,
                              float noise, Rng& rng) {
  if (n_classes < 2 || dim < 1 || n == 0) throw InputError("bad mixture parameters");
  std::vector<float> means(static_cast<std::size_t>(n_classes) * dim);
  for (auto& v : means) v = mean_scale * rng.normal();
  Dataset d;
  d.feature_dim = dim;
  d.n_classes = n_classes;
  d.labels.reserve(n);
  d.features.reserve(n * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_classes)));
    d.labels.push_back(static_cast<std::uint8_t>(cls));
    const float* mu = means.data() + static_cast<std::size_t>(cls) * dim;
    for (int j = 0; j < dim; ++j) d.features.push_back(mu[j] + noise * rng.normal());
  }
  return d;
}

Dataset make_two_spirals(std::size_t n, float noise, Rng& rng) {
  Dataset d;
  d.feature_dim = 2;
  d.n_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.below(2));
    const float t = 0.25f + 3.0f * static_cast<float>(rng.next_double());
    const float angle = t * 2.5f + (cls == 0 ? 0.0f : 3.14159265f);
    d.labels.push_back(static_cast<std::uint8_t>(cls));
    d.features.push_back(t * std::cos(angle) + noise * rng.normal());
    d.features.push_back(t * std::sin(angle) + noise * rng.normal());
  }
  return d;
}

Dataset make_blobs2(std::size_t n, int dim, float separation, float noise, Rng& rng) {
  std::vector<float> dir(static_cast<std::size_t>(dim));
  double norm = 0.0;
  for (auto& v : dir) {
    v = rng.normal();
    norm += static_cast<double>(v) * v;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& v : dir) v = static_cast<float>(v / norm);

  Dataset d;
  d.feature_dim = dim;
  d.n_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.below(2));
    const float sign = cls == 0 ? -1.0f : 1.0f;
    d.labels.push_back(static_cast<std::uint8_t>(cls));
    for (int j = 0; j < dim; ++j)
      d.features.push_back(sign * separation * dir[static_cast<std::size_t>(j)] +
                           noise * rng.normal());
  }
  return d;
}

}  // namespace tslc::data
