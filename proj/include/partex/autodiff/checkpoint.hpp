#pragma once

#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "partex/autodiff/nn.hpp"

namespace partex::ad {

/// Binary container:
///   8 bytes  magic "PTXCKPT1"
///   8 bytes  header length (u64, little endian)
///   header   JSON {"meta": {...}, "tensors": [{"name", "shape", "offset", "dtype": "f32"}]}
///   payload  little-endian float32 values; offsets are in bytes from payload start
struct CheckpointTensor {
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, CheckpointTensor> tensors;

  void put(const std::string& name, Shape shape, std::vector<float> data);
  const CheckpointTensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  /// Stores every parameter under `prefix + name`.
  void put_params(const ParamStore& ps, const std::string& prefix);
  /// Copies values back into an already-shaped store; throws on missing names or shape mismatch.
  void get_params(ParamStore& ps, const std::string& prefix) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  /// Merges another checkpoint's tensors and top-level meta keys into this one.
  void merge(const Checkpoint& other);
};

}  // namespace partex::ad
