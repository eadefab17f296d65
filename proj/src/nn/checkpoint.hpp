#pragma once

#include <cstdint>
#include <string>

#include "nn/model.hpp"

namespace advlab::nn {

// Binary checkpoint, little-endian throughout. Layout (see
// docs/checkpoint_format.md for the byte-level table):
//   magic "ADVLABCK" | u32 version | u32 record_kind | kind payload
// Classifier/decoder payload:
//   u32 output_width | u32 h,w,c | u32 epochs | u64 seed | u8 adv | f64 eps |
//   u32 layer_count | layers (i32 kind,a,b,c,d, u8 flag) |
//   u32 param_count | params (u16 name_len, name, u32 rank, u64 dims..., f64 data...)

inline constexpr char kCheckpointMagic[8] = {'A', 'D', 'V', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class RecordKind : std::uint32_t {
  Classifier = 1,
  Decoder = 2,
  LidDetector = 3,
};

struct CheckpointMeta {
  std::uint32_t epochs = 0;
  std::uint64_t seed = 0;
  bool adversarial = false;
  double epsilon = 0.0;
};

void save_network(const std::string& path, RecordKind kind, const Classifier& net,
                  const CheckpointMeta& meta);

struct LoadedNetwork {
  RecordKind kind;
  Classifier net;
  CheckpointMeta meta;
};

LoadedNetwork load_network(const std::string& path);

/// Peeks the record kind without loading the payload.
RecordKind checkpoint_kind(const std::string& path);

}  // namespace advlab::nn
