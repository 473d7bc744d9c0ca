#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pastanet/tape.hpp"
#include "pastanet/tensor.hpp"

namespace pastanet::diff {

/// Binary tensor container used for checkpoints, feature files and embedding
/// tables. Bit-exact layout: magic "PASTAv1\0", little-endian u32 tensor
/// count, then per tensor: u32 name length, name bytes, u32 rank, u32 dims,
/// raw 32-bit little-endian values.
struct NamedTensor {
  std::string name;
  TensorF tensor;
};

void save_tensor_file(const std::vector<NamedTensor>& tensors, const std::string& path);
std::vector<NamedTensor> load_tensor_file(const std::string& path);

/// Serialize parameters in insertion order (the checkpoint contract).
template <typename T>
std::vector<NamedTensor> params_to_tensors(const ParamStore<T>& params) {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param<T>& p = params.at(i);
    out.push_back({p.name, p.value.template cast<float>()});
  }
  return out;
}

/// Load values into an existing parameter set; every parameter must be
/// present with a matching shape.
template <typename T>
void tensors_to_params(const std::vector<NamedTensor>& tensors, ParamStore<T>& params) {
  std::size_t matched = 0;
  for (const auto& nt : tensors) {
    Param<T>* p = params.find(nt.name);
    if (!p) throw data_error("checkpoint tensor '" + nt.name + "' has no matching parameter");
    if (p->value.shape != nt.tensor.shape)
      throw data_error("checkpoint tensor '" + nt.name + "' shape mismatch");
    p->value = nt.tensor.cast<T>();
    ++matched;
  }
  if (matched != params.size())
    throw data_error("checkpoint is missing " + std::to_string(params.size() - matched) +
                     " parameter(s)");
}

}  // namespace pastanet::diff
