#pragma once

#include <filesystem>
#include <stdexcept>

#include "bgpo/mdlm.hpp"

namespace bgpo {

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, truncated, mismatch };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kCheckpointMagic[8] = {'B', 'G', 'P', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers u32 little-endian):
///   magic "BGPOCKPT", version, vocab_size, embed_dim, depth, ffn_dim,
///   context_length, mask_id, pad_id, num_arrays, then per array:
///   name_len, name bytes, rows, cols, rows*cols float32 values.
/// Values are stored as float32, so doubles that are not float-representable
/// are rounded.
void save_checkpoint(const MaskPredictor& model, const Vocabulary& vocab,
                     const std::filesystem::path& path);

/// Reads the whole file before constructing anything; on error nothing is
/// returned. Fails with Kind::mismatch if the file's vocabulary differs
/// from `vocab`.
MaskPredictor load_checkpoint(const std::filesystem::path& path, const Vocabulary& vocab);

}  // namespace bgpo
