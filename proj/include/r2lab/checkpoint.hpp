// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "r2lab/model.hpp"
#include "r2lab/palettizers.hpp"
#include "r2lab/regularizers.hpp"

namespace r2lab {

/// Quantizer configuration persisted next to the weights.
struct QuantCheckpoint {
  std::string method;  // empty when the checkpoint carries no quantizer
  int bits = 0;
  int act_bits = 0;
  double ewgs_delta = 0.1;
  std::map<std::string, double> step;      // per weight layer
  std::map<std::string, double> act_clip;  // per activation site

  bool present() const { return !method.empty(); }
};

/// Checkpoint = human-readable JSON manifest + one binary blob of
/// little-endian 32-bit floats (indices are packed bitfields). Training
/// math stays 64-bit in memory; storage rounds through f32, so
/// save -> load -> save is byte-identical.
struct Checkpoint {
  std::string arch;
  std::string phase;
  std::uint64_t seed = 0;
  std::string config_hash;
  Model model;
  RegState reg;
  QuantCheckpoint quant;
  std::vector<Palette> palettes;
};

/// Writes prefix.json and prefix.blob atomically (temp file + rename).
void save_checkpoint(const Checkpoint& ck, const std::string& prefix);

/// Accepts the prefix or the manifest path. Throws CorruptionError when
/// any manifest slot falls outside the blob or overlaps another slot.
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a 64-bit fingerprint, hex encoded.
std::string fnv1a64_hex(const std::string& text);

/// Packs per-group indices into a little-endian bitfield, bits per entry.
std::vector<std::uint8_t> pack_indices(const std::vector<std::uint32_t>& idx, int bits);
std::vector<std::uint32_t> unpack_indices(const std::vector<std::uint8_t>& bytes, int bits,
                                          std::size_t count);

}  // namespace r2lab
