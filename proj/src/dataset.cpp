#include "resprop/dataset.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "resprop/ops.hpp"
#include "resprop/rng.hpp"

namespace resprop {

namespace {

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open: " + path);
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (!f.read(reinterpret_cast<char*>(bytes.data()), size))
    throw std::runtime_error("read failed: " + path);
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

struct Raw {
  Tensor<double> x;  // N x F
  std::vector<int> y;
  Shape feature_shape;
};

Raw make_blobs(const DatasetSpec& spec, Rng& rng) {
  const std::size_t k = static_cast<std::size_t>(spec.classes);
  if (k < 2) throw std::invalid_argument("gaussian-blobs: need at least 2 classes");
  if (k > 2 * spec.dim)
    throw std::invalid_argument("gaussian-blobs: classes must be <= 2 * dim");
  // Class means sit at +/- separation along distinct coordinate axes, so all
  // pairwise mean distances are at least separation * sqrt(2).
  std::vector<std::vector<double>> means(k, std::vector<double>(spec.dim, 0.0));
  for (std::size_t c = 0; c < k; ++c)
    means[c][c % spec.dim] = (c < spec.dim ? 1.0 : -1.0) * spec.separation;
  Raw raw;
  raw.x = Tensor<double>({spec.size, spec.dim});
  raw.y.resize(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t c = i % k;
    raw.y[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < spec.dim; ++j) raw.x(i, j) = means[c][j] + rng.gaussian();
  }
  raw.feature_shape = {spec.dim};
  return raw;
}

Raw make_spirals(const DatasetSpec& spec, Rng& rng) {
  const std::size_t k = static_cast<std::size_t>(spec.classes);
  if (k < 2) throw std::invalid_argument("spirals: need at least 2 classes");
  Raw raw;
  raw.x = Tensor<double>({spec.size, 2});
  raw.y.resize(spec.size);
  const std::size_t per_class = (spec.size + k - 1) / k;
  for (std::size_t i = 0; i < spec.size; ++i) {
    const std::size_t c = i % k;
    const double t = static_cast<double>(i / k) / static_cast<double>(per_class);
    const double r = 0.2 + t;
    const double theta =
        2.0 * std::numbers::pi * (1.5 * t + static_cast<double>(c) / static_cast<double>(k));
    raw.x(i, 0) = r * std::cos(theta) + 0.05 * rng.gaussian();
    raw.x(i, 1) = r * std::sin(theta) + 0.05 * rng.gaussian();
    raw.y[i] = static_cast<int>(c);
  }
  raw.feature_shape = {2};
  return raw;
}

Raw make_random_labels(const DatasetSpec& spec, Rng& rng) {
  Raw raw;
  raw.x = gaussian<double>({spec.size, spec.dim}, 0.0, 1.0, rng);
  raw.y.resize(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i)
    raw.y[i] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.classes)));
  raw.feature_shape = {spec.dim};
  return raw;
}

Raw load_idx(const DatasetSpec& spec) {
  Tensor<double> images = read_idx_images(spec.images_path);
  std::vector<int> labels = read_idx_labels(spec.labels_path);
  if (images.extent(0) != labels.size())
    throw std::runtime_error("idx: image and label counts differ");
  for (int y : labels)
    if (y < 0 || y >= spec.classes) throw std::runtime_error("idx: label exceeds class count");
  const std::size_t n = images.extent(0), rows = images.extent(1), cols = images.extent(2);
  Raw raw;
  raw.x = images.reshaped({n, rows * cols});
  raw.y = std::move(labels);
  raw.feature_shape = {rows, cols, 1};
  return raw;
}

Raw load_cifar(const DatasetSpec& spec) {
  auto [images, labels] = read_cifar_binary(spec.data_path);
  for (int y : labels)
    if (y < 0 || y >= spec.classes) throw std::runtime_error("cifar: label exceeds class count");
  Raw raw;
  raw.x = images.reshaped({images.extent(0), std::size_t(32) * 32 * 3});
  raw.y = std::move(labels);
  raw.feature_shape = {32, 32, 3};
  return raw;
}

}  // namespace

Dataset make_dataset(const DatasetSpec& spec) {
  Rng rng(spec.seed);
  Raw raw;
  if (spec.kind == "gaussian-blobs")
    raw = make_blobs(spec, rng);
  else if (spec.kind == "spirals")
    raw = make_spirals(spec, rng);
  else if (spec.kind == "random-labels")
    raw = make_random_labels(spec, rng);
  else if (spec.kind == "idx")
    raw = load_idx(spec);
  else if (spec.kind == "cifar-binary")
    raw = load_cifar(spec);
  else
    throw std::invalid_argument("make_dataset: unknown kind '" + spec.kind + "'");

  const std::size_t n = raw.x.extent(0);
  const std::size_t f = raw.x.extent(1);
  if (n < 2) throw std::invalid_argument("make_dataset: need at least 2 examples");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);

  std::size_t eval_n = static_cast<std::size_t>(std::llround(spec.eval_fraction * n));
  if (eval_n >= n) eval_n = n - 1;
  const std::size_t train_n = n - eval_n;

  Dataset ds;
  ds.classes = spec.classes;
  ds.feature_shape = raw.feature_shape;
  ds.train_x = Tensor<double>({train_n, f});
  ds.train_y.resize(train_n);
  // single placeholder row when the eval split is empty (eval_y stays empty)
  ds.eval_x = Tensor<double>({eval_n > 0 ? eval_n : 1, f});
  ds.eval_y.resize(eval_n);
  for (std::size_t i = 0; i < train_n; ++i) {
    const std::size_t src = order[i];
    for (std::size_t j = 0; j < f; ++j) ds.train_x(i, j) = raw.x(src, j);
    ds.train_y[i] = raw.y[src];
  }
  for (std::size_t i = 0; i < eval_n; ++i) {
    const std::size_t src = order[train_n + i];
    for (std::size_t j = 0; j < f; ++j) ds.eval_x(i, j) = raw.x(src, j);
    ds.eval_y[i] = raw.y[src];
  }

  // Standardize per feature with train-split statistics.
  for (std::size_t j = 0; j < f; ++j) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < train_n; ++i) {
      sum += ds.train_x(i, j);
      sumsq += ds.train_x(i, j) * ds.train_x(i, j);
    }
    const double mean = sum / static_cast<double>(train_n);
    double var = sumsq / static_cast<double>(train_n) - mean * mean;
    if (var < 1e-16) var = 1e-16;
    const double inv_std = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < train_n; ++i)
      ds.train_x(i, j) = (ds.train_x(i, j) - mean) * inv_std;
    for (std::size_t i = 0; i < eval_n; ++i)
      ds.eval_x(i, j) = (ds.eval_x(i, j) - mean) * inv_std;
  }
  return ds;
}

Tensor<double> read_idx_images(const std::string& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 16 || read_be32(bytes, 0) != 0x00000803u)
    throw std::runtime_error("idx: bad image magic in " + path);
  const std::size_t n = read_be32(bytes, 4);
  const std::size_t rows = read_be32(bytes, 8);
  const std::size_t cols = read_be32(bytes, 12);
  if (bytes.size() != 16 + n * rows * cols)
    throw std::runtime_error("idx: truncated image file " + path);
  Tensor<double> out({n, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i)
    out[i] = static_cast<double>(bytes[16 + i]);
  return out;
}

std::vector<int> read_idx_labels(const std::string& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 8 || read_be32(bytes, 0) != 0x00000801u)
    throw std::runtime_error("idx: bad label magic in " + path);
  const std::size_t n = read_be32(bytes, 4);
  if (bytes.size() != 8 + n) throw std::runtime_error("idx: truncated label file " + path);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(bytes[8 + i]);
  return labels;
}

std::pair<Tensor<double>, std::vector<int>> read_cifar_binary(const std::string& path) {
  const auto bytes = read_bytes(path);
  constexpr std::size_t record = 1 + 3 * 32 * 32;
  if (bytes.empty() || bytes.size() % record != 0)
    throw std::runtime_error("cifar: file size is not a whole number of records: " + path);
  const std::size_t n = bytes.size() / record;
  Tensor<double> images({n, 32, 32, 3});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t base = i * record;
    labels[i] = static_cast<int>(bytes[base]);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t h = 0; h < 32; ++h)
        for (std::size_t w = 0; w < 32; ++w)
          images(i, h, w, c) = static_cast<double>(bytes[base + 1 + c * 1024 + h * 32 + w]);
  }
  return {std::move(images), std::move(labels)};
}

}  // namespace resprop
