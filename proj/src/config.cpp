#include "resprop/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace resprop {

namespace {

using json = nlohmann::json;

template <typename T>
void get_key(const json& j, const char* key, std::optional<T>& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("config: bad value type for key '") + key + "'");
  }
}

template <typename T>
void put_key(json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
}

// field list shared by the reader, the writer and the unknown-key check
#define RESPROP_CONFIG_KEYS(X)        \
  X(command)                          \
  X(family)                           \
  X(variant)                          \
  X(normalized)                       \
  X(alpha)                            \
  X(width)                            \
  X(depth)                            \
  X(classes)                          \
  X(branch_layers)                    \
  X(use_biases)                       \
  X(final_bn_only)                    \
  X(dropout)                          \
  X(bn_epsilon)                       \
  X(bn_momentum)                      \
  X(dataset)                          \
  X(dataset_size)                     \
  X(dataset_dim)                      \
  X(separation)                       \
  X(eval_fraction)                    \
  X(images_path)                      \
  X(labels_path)                      \
  X(data_path)                        \
  X(lr)                               \
  X(epochs)                           \
  X(batch)                            \
  X(ghost)                            \
  X(ghost_policy)                     \
  X(momentum)                         \
  X(l2)                               \
  X(l2_all_params)                    \
  X(constant_epochs)                  \
  X(decay_interval)                   \
  X(decay_factor)                     \
  X(lr_exp_lo)                        \
  X(lr_exp_hi)                        \
  X(runs)                             \
  X(keep)                             \
  X(metric)                           \
  X(depths)                           \
  X(batch_sizes)                      \
  X(variants)                         \
  X(seed)                             \
  X(seeds)                            \
  X(precision)                        \
  X(out)                              \
  X(image_hw)

bool known_key(const std::string& key) {
#define RESPROP_CHECK(name) \
  if (key == #name) return true;
  RESPROP_CONFIG_KEYS(RESPROP_CHECK)
#undef RESPROP_CHECK
  return false;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  for (const auto& item : j.items())
    if (!known_key(item.key()))
      throw std::invalid_argument("config: unknown key '" + item.key() + "'");

  RunConfig cfg;
#define RESPROP_GET(name) get_key(j, #name, cfg.name);
  RESPROP_CONFIG_KEYS(RESPROP_GET)
#undef RESPROP_GET
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j = json::object();
#define RESPROP_PUT(name) put_key(j, #name, name);
  RESPROP_CONFIG_KEYS(RESPROP_PUT)
#undef RESPROP_PUT
  return j.dump(2) + "\n";
}

void RunConfig::merge_from(const RunConfig& overlay) {
#define RESPROP_MERGE(name) \
  if (overlay.name) name = overlay.name;
  RESPROP_CONFIG_KEYS(RESPROP_MERGE)
#undef RESPROP_MERGE
}

}  // namespace resprop
