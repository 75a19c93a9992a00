#pragma once

#include <map>
#include <string>

#include "model.hpp"
#include "tensor.hpp"

namespace dssc {

// Serialized model state. extra holds optimizer tensors under the reserved
// "opt." prefix; anything else there is rejected at save time so that a
// mistyped parameter name cannot slip through a round trip.
template <typename T>
struct CheckpointData {
  ModelT<T> model;
  std::map<std::string, TensorPtr<T>> extra;
  std::string corpus_id;
  std::string config_hash;
};

// Layout: "DSCK" magic, u16 version, u16 reserved, then length-prefixed
// arch JSON / corpus id / config hash, then a named-tensor table
// (name, dtype, shape, payload), all little-endian. Payloads are written
// as 64-bit floats, so a float model survives save -> load -> save
// byte-identically.
template <typename T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& data);

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path);

}  // namespace dssc
