#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace resprop {

/// Flat run configuration. Every field is optional so that a parsed config
/// re-serializes to exactly the keys it carried; unknown keys are rejected
/// at parse time. Command-line flags overlay file values.
struct RunConfig {
  std::optional<std::string> command;

  // network
  std::optional<std::string> family;   // fc-linear | fc-relu | conv-relu
  std::optional<std::string> variant;  // bn | skipinit:<a> | divide-sqrt2 | bn-skip | nonorm | fixup
  std::optional<bool> normalized;      // fc-linear shorthand: bn vs nonorm
  std::optional<double> alpha;         // overrides the skipinit multiplier
  std::optional<std::int64_t> width;
  std::optional<std::int64_t> depth;
  std::optional<std::int64_t> classes;
  std::optional<std::int64_t> branch_layers;
  std::optional<bool> use_biases;
  std::optional<bool> final_bn_only;
  std::optional<double> dropout;
  std::optional<double> bn_epsilon;
  std::optional<double> bn_momentum;

  // dataset
  std::optional<std::string> dataset;  // gaussian-blobs | spirals | random-labels | idx | cifar-binary
  std::optional<std::int64_t> dataset_size;
  std::optional<std::int64_t> dataset_dim;
  std::optional<double> separation;
  std::optional<double> eval_fraction;
  std::optional<std::string> images_path;
  std::optional<std::string> labels_path;
  std::optional<std::string> data_path;

  // optimization
  std::optional<double> lr;
  std::optional<std::int64_t> epochs;
  std::optional<std::int64_t> batch;
  std::optional<std::int64_t> ghost;         // 0 = full batch
  std::optional<std::string> ghost_policy;   // fixed | full-batch
  std::optional<double> momentum;
  std::optional<double> l2;
  std::optional<bool> l2_all_params;
  std::optional<std::int64_t> constant_epochs;
  std::optional<std::int64_t> decay_interval;
  std::optional<double> decay_factor;

  // grids and sweeps
  std::optional<std::int64_t> lr_exp_lo;
  std::optional<std::int64_t> lr_exp_hi;
  std::optional<std::int64_t> runs;
  std::optional<std::int64_t> keep;
  std::optional<std::string> metric;  // loss | accuracy
  std::optional<std::vector<std::int64_t>> depths;
  std::optional<std::vector<std::int64_t>> batch_sizes;
  std::optional<std::vector<std::string>> variants;

  // execution
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> seeds;  // statistics runs per analysis
  std::optional<std::string> precision;  // f32 | f64
  std::optional<std::string> out;
  std::optional<std::int64_t> image_hw;  // probe image size for conv analysis

  static RunConfig from_json_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
  std::string to_json_text() const;

  /// Engaged fields of overlay replace this config's fields.
  void merge_from(const RunConfig& overlay);
};

}  // namespace resprop
