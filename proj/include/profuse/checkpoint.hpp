#pragma once

#include <string>
#include <vector>

#include "profuse/nn.hpp"
#include "profuse/types.hpp"

namespace profuse::checkpoint {

struct TensorRecord {
  std::string name;
  Matrix value;
};

/// Binary model snapshot: magic "PFMW", version u32, then per-tensor records
/// (name length u16, name bytes, rows u32, cols u32, little-endian f64
/// row-major values) until end of file. Round-trips bit-exactly.
void save_tensors(const std::string& path, const std::vector<TensorRecord>& tensors);
std::vector<TensorRecord> load_tensors(const std::string& path);

/// Writes the current values of a parameter list under their names.
void save_named_params(const std::string& path, const std::vector<nn::NamedParam>& params);

/// Loads values back into a parameter list. Every parameter must be present
/// in the file with a matching shape; extra file records are an error.
void load_named_params(const std::string& path, const std::vector<nn::NamedParam>& params);

}  // namespace profuse::checkpoint
