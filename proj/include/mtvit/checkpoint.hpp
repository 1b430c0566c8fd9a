#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtvit/serialize.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit {

// Parameter checkpoint, magic "MTVT" version 1. Records follow in the order
// given: name-length u32, name bytes, rank u32, extents u32[], payload f32[].
// Payloads are f32 regardless of the in-memory scalar type; a write/read
// cycle of an f32 model round-trips byte-exactly.

constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<T>*>>& params) {
  auto os = open_output(path);
  os.write("MTVT", 4);
  write_u32(os, kCheckpointVersion);
  for (const auto& [name, tensor] : params) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(tensor->rank()));
    for (size_t e : tensor->shape()) write_u32(os, static_cast<uint32_t>(e));
    for (size_t i = 0; i < tensor->size(); ++i)
      write_f32(os, static_cast<float>((*tensor)[i]));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

// Loads into the given parameter set. Every record must match an existing
// parameter by name and shape, and every parameter must be filled.
template <typename T>
void load_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<T>*>>& params) {
  auto is = open_input(path);
  expect_magic(is, "MTVT", path);
  const uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version) + " in " + path);
  std::vector<bool> filled(params.size(), false);
  while (true) {
    const uint32_t name_len = read_u32(is);
    if (is.eof() || !is) break;
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_u32(is);
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = read_u32(is);
    const size_t n = shape_numel(shape);

    size_t target = params.size();
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i].first == name) {
        target = i;
        break;
      }
    if (target == params.size())
      throw std::runtime_error("checkpoint " + path + ": unknown parameter " + name);
    Tensor<T>* t = params[target].second;
    if (t->shape() != shape)
      throw std::runtime_error("checkpoint " + path + ": parameter " + name +
                               " has shape " + shape_str(shape) + ", expected " +
                               shape_str(t->shape()));
    for (size_t i = 0; i < n; ++i) (*t)[i] = static_cast<T>(read_f32(is));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    filled[target] = true;
  }
  for (size_t i = 0; i < params.size(); ++i)
    if (!filled[i])
      throw std::runtime_error("checkpoint " + path + ": missing parameter " +
                               params[i].first);
}

}  // namespace mtvit
