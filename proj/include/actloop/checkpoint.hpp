#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "actloop/mlp.hpp"

namespace actloop {

// Binary parameter checkpoint. Layout (all integers and reals little-endian):
//
//   offset  size  field
//   0       8     magic "ACTLCKPT"
//   8       4     u32 format version (currently 1)
//   12      4     u32 hidden activation (0 = tanh, 1 = linear)
//   16      4     u32 number of layer widths n
//   20      8n    u64 layer widths
//   ...     8     u64 number of extra scalars e
//   ...     8p    f64 network parameters in flatten() order
//   ...     8e    f64 extra scalars
//
// docs/checkpoint_format.md carries the same table.
struct Checkpoint {
    NetParams net;
    std::vector<double> extras;
    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace actloop
