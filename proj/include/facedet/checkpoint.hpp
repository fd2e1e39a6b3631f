#ifndef FACEDET_CHECKPOINT_HPP
#define FACEDET_CHECKPOINT_HPP

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "facedet/tensor.hpp"

#include "json.hpp"

namespace facedet {

// On-disk layout: one ASCII decimal line with the manifest byte length, the
// JSON manifest, then the concatenated tensor payloads as little-endian
// IEEE-754 doubles. save(load(f)) reproduces f byte for byte.
struct Checkpoint {
  int format_version = 1;
  nlohmann::json configs;
  int64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
  std::vector<std::pair<std::string, Tensor>> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const Tensor& tensor(const std::string& name) const;
};

}  // namespace facedet

#endif  // FACEDET_CHECKPOINT_HPP
