#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "numerics/tensor.hpp"

namespace numerics {

/// Named-tensor container, saved in insertion order.
///
/// File layout (all integers little-endian):
///   bytes 0..7    magic "TNSRPK01"
///   bytes 8..15   u64 length of the JSON index that follows
///   index         UTF-8 JSON: {"tensors":[{"name","rows","cols","offset"}...],
///                 "meta":{...}}; offset counts bytes from the start of the
///                 data block
///   data          rows*cols f64 values per tensor, row-major, little-endian
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> tensors;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  void add(std::string name, Tensor t) {
    tensors.emplace_back(std::move(name), std::move(t));
  }
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace numerics
