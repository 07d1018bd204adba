// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "labelcon/model.hpp"

namespace labelcon {

// Everything needed to resume or evaluate a model: configs, parameters,
// optimizer moments and the seeds that produced them.
struct Checkpoint {
  ModelParams params;
  OptimizerState optimizer;
  std::map<std::string, std::uint64_t> seeds;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Container layout:
//   "LCONCKPT" | u32 version | u64 header length | JSON header | f64 blobs
// The header lists every tensor (group, name, shape) in blob order. Values are
// stored as little-endian IEEE-754 doubles, so decode(encode(c)) == c and
// encode(decode(bytes)) == bytes.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Raw bytes of one parameter group; used to assert freeze invariants.
std::string serialize_tensors(const std::vector<Tensor>& tensors);

}  // namespace labelcon
