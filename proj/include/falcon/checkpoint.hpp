#pragma once

#include <string>
#include <vector>

#include "falcon/nncore.hpp"
#include "falcon/relations.hpp"

namespace falcon {

// Versioned little-endian binary container: shapes, theta, theta_ema, the
// momentum buffer, step counter, seed, and the learned relation matrices.
// Parameters round-trip bit-exactly.
struct Checkpoint {
  ClassifierState state;
  std::vector<RelationMatrix> relations;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace falcon
