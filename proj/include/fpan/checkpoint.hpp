#pragma once

#include <string>

#include "fpan/model.hpp"

namespace fpan {

// Binary checkpoint, little-endian regardless of host:
//   magic "FPAN", u32 version (currently 1)
//   u32 scale, channels, num_blocks, stage_depth, reduction
//   u8 pyramid-scale count, u32 per scale
//   u8 feedforward_skips, u8 feedback_skips, u8 attention (0 none, 1 gc, 2 pnlb)
//   u32 tensor count, then per tensor in store order:
//     u16 name length + UTF-8 bytes, u8 ndim (4), u32 dims[4],
//     f32 payload, row-major
// Round trips are bitwise exact; malformed files are rejected with the byte
// offset where parsing stopped.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const FpanModel<float>& model, const std::string& path);
FpanModel<float> load_checkpoint(const std::string& path);

}  // namespace fpan
