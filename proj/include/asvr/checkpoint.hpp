#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "asvr/nn.hpp"

namespace asvr {

enum class CheckpointErrc { io, bad_magic, bad_version, bad_checksum, malformed };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "ASVR", u32 version, u32 tensor_count, then per
// tensor u16 name_len, name bytes, u8 dtype (1 = f64), u8 rank, u32 dims,
// row-major payload; trailing u64 FNV-1a over all payload bytes.
std::string encode_checkpoint(const nn::ParamList& tensors);
nn::ParamList decode_checkpoint(const std::string& bytes);

void save_checkpoint(const nn::ParamList& tensors, const std::filesystem::path& path);
nn::ParamList load_checkpoint(const std::filesystem::path& path);

}  // namespace asvr
