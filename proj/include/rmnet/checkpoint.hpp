#pragma once

#include <filesystem>
#include <string>

#include "rmnet/model.hpp"

namespace rmnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "RMNT", u32 version, then records until end of file. Each record is
// u32 path length, UTF-8 path, u8 dtype, u32 rank, u64 extents, raw values.
// All integers and values little-endian.
std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace rmnet
