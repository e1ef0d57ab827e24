#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "resprop/tensor.hpp"

namespace resprop {

struct DatasetSpec {
  std::string kind = "gaussian-blobs";  // gaussian-blobs | spirals | random-labels | idx | cifar-binary
  int classes = 10;
  std::size_t size = 5000;   // total examples for synthetic kinds
  std::size_t dim = 16;      // feature dimension for synthetic kinds
  double separation = 3.0;   // blob mean separation in noise units
  double eval_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string images_path;   // idx
  std::string labels_path;   // idx
  std::string data_path;     // cifar-binary
};

/// Train/eval split with per-feature standardization fitted on the train
/// split. Features are stored flat; feature_shape records the logical
/// layout ({F} or {H, W, C}).
struct Dataset {
  Tensor<double> train_x;
  std::vector<int> train_y;
  Tensor<double> eval_x;
  std::vector<int> eval_y;
  Shape feature_shape;
  int classes = 0;
};

Dataset make_dataset(const DatasetSpec& spec);

/// IDX image file: magic 0x00000803, big-endian extents, raw ubyte pixels.
Tensor<double> read_idx_images(const std::string& path);
/// IDX label file: magic 0x00000801.
std::vector<int> read_idx_labels(const std::string& path);
/// One record = 1 label byte + 3072 channel-planar pixel bytes (32 x 32 x 3).
std::pair<Tensor<double>, std::vector<int>> read_cifar_binary(const std::string& path);

}  // namespace resprop
