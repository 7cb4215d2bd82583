#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "hvit/tensor.hpp"

namespace hvit {

/// Named parameter tensors, sorted by name so serialized bytes are stable.
using ParamSet = std::map<std::string, Tensor>;

/// Checkpoint wire format, bit-exact round trip:
///   magic "HVT1", then per tensor:
///     u32 LE name length, UTF-8 name,
///     u32 LE rank, u32 LE dims,
///     raw IEEE-754 64-bit little-endian values (row-major).
/// Tensors are written in name order; the stream ends at the last record.
void write_checkpoint(std::ostream& out, const ParamSet& params);
ParamSet read_checkpoint(std::istream& in);

void write_checkpoint_file(const std::string& path, const ParamSet& params);
ParamSet read_checkpoint_file(const std::string& path);

/// In-memory serialization; used for freeze-contract byte comparisons.
std::string checkpoint_bytes(const ParamSet& params);

}  // namespace hvit
