#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "igmmgan/nn.hpp"

namespace igmmgan {

/// Flat binary weight format:
///
///   "IGGN" | version u32 | count u32 | per tensor:
///   name-length u16 | UTF-8 name | rank u8 | dims u64[rank] | values f64[...]
///
/// All integers and floats little-endian. A JSON manifest
/// (<file>.json) carries the shapes and SHA-256 checksums.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

std::string encode_weights(const std::vector<NamedTensor>& tensors,
                           std::uint32_t version = kWeightFormatVersion);
/// Throws FormatError on truncation/bad magic and VersionError on an unknown version.
std::vector<NamedTensor> decode_weights(const std::string& bytes);

/// Writes the weight file and its manifest side by side.
void write_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
/// Verifies the manifest checksums before decoding; throws ChecksumError on mismatch.
std::vector<NamedTensor> read_weights(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& weight_file);

/// ParamSet <-> NamedTensor conversions (every parameter, including running stats).
std::vector<NamedTensor> to_named_tensors(const ParamSet& params);
/// Picks the tensors whose names start with `prefix` into a ParamSet, in order.
ParamSet params_from_named(const std::vector<NamedTensor>& tensors, const std::string& prefix);

}  // namespace igmmgan
