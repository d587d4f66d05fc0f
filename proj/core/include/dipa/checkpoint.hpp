#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dipa/losses.hpp"
#include "dipa/model/protopnet.hpp"
#include "dipa/model/push.hpp"

namespace dipa {

// Complete model state: encoder, prototypes with mask and classes, head,
// accumulated antitypes and the latest push report.
struct Checkpoint {
  model::ProtoPNet net;
  loss::AntitypeSet antitypes;
  model::PushReport push;
  std::string meta_json = "{}";

  Checkpoint clone() const;
};

/*
 * Binary layout, all integers and floats little-endian:
 *
 *   offset  size  field
 *   0       8     magic "DIPACKPT"
 *   8       4     u32 format version (kCheckpointVersion)
 *   12      4     u32 header size in bytes (offset of the section table)
 *   16      4*3   u32 input height, width, channels
 *   28      4     u32 conv block count B
 *   32      8*B   (u32 channels, u32 stride) per block
 *   ..      4*3   u32 grid height, grid width, latent dim D
 *   ..      4*4   u32 N (prototypes), D, K (classes), prototypes per class
 *   ..      4     f32 epsilon
 *   header  4     u32 section count S
 *   +4      24*S  section table: (u32 tag, u32 reserved, u64 offset, u64 size)
 *
 * Sections, each addressed by absolute offset:
 *   1 ENCODER    u32 tensor count; per tensor u32 rank, u64 dims[rank], f32 data
 *   2 PROTOTYPES f32[N*D]
 *   3 ACTIVE     u8[N]
 *   4 CLASS_OF   u32[N]
 *   5 HEAD       f32[N*K]
 *   6 ANTITYPES  u32 count, u32 dim, f32[count*dim], (u32 round, u32 prototype)[count]
 *   7 PUSH       u32 count; per record i32 image index, u32 row, u32 col, f32 distance,
 *                u32 id length, id bytes
 *   8 META       UTF-8 JSON
 */
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Section : std::uint32_t {
  Encoder = 1,
  Prototypes = 2,
  Active = 3,
  ClassOf = 4,
  Head = 5,
  Antitypes = 6,
  Push = 7,
  Meta = 8,
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a 64 of arbitrary bytes, as 16 hex digits.
std::string content_hash(std::span<const std::uint8_t> bytes);

}  // namespace dipa
