#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pvpl/transfer.hpp"

namespace pvpl {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Named tensor table plus an optional JSON config echo.
///
/// Layout: "PVPL" | u16 version | u32 entry count | entries | u32 CRC-32 of
/// every preceding byte. Entry: u32 name length, name bytes, u8 dtype, u8 rank,
/// u64 dims, payload. dtype 0 is f32; dtype 1 is a rank-1 u8 blob and is only
/// used for the config echo entry.
struct Checkpoint {
  NamedTensors tensors;
  std::string config_echo;  // empty: no echo entry

  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;  // IoError if absent
  void put(const NamedTensors& entries);            // replaces same-named entries
  /// Remove every entry whose name starts with prefix; returns the count.
  std::size_t erase_prefix(const std::string& prefix);
};

inline constexpr const char* kConfigEchoName = "config.echo";

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Refuses bad magic, unknown versions, CRC mismatches and trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::string& path, const std::string& text);

/// Rebuild models from their named entries.
PvpBank bank_from(const Checkpoint& ck);
TextPromptSet prompts_from(const Checkpoint& ck);
DualAdapter adapter_from(const Checkpoint& ck);

/// Image sets stored as a checkpoint: "image.<i>" [H x W x 3] and
/// "labels.<i>" [k] (class indices as floats).
Checkpoint images_to_checkpoint(const std::vector<LabeledImage>& images);
std::vector<LabeledImage> images_from(const Checkpoint& ck);

}  // namespace pvpl
