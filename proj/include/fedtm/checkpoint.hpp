#pragma once

#include <string>

#include "fedtm/corpus.hpp"
#include "fedtm/model.hpp"
#include "fedtm/pruning.hpp"

namespace fedtm {

// Flat binary container, little-endian:
//   magic "FTMCKPT1"
//   u32 tensor count, then per tensor:
//     u16 name length, name bytes, u64 rows, u64 cols, rows*cols float64
//     (row-major)
//   u32 mask count, then per mask:
//     u16 name length, name bytes, u64 rows, u64 cols, ceil(n/8) bit-packed
//     bytes (flat row-major index i lives at byte i/8, bit i%8)
//   u32 vocabulary size, then per token: u16 length, bytes
// Tensor order follows for_each_tensor, so equal models produce identical
// files.
struct Checkpoint {
  ModelParams params;
  PruneMask mask;
  Vocabulary vocab;
};

void save_checkpoint(const std::string& path, const ModelParams& params, const PruneMask& mask,
                     const Vocabulary& vocab);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace fedtm
