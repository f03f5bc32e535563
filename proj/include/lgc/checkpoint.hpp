#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "lgc/optim.hpp"

namespace lgc::ad {

// Carried alongside the parameters so a run can resume exactly.
struct CheckpointMeta {
  long epoch = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra;  // architecture descriptor, config hash, shape roster, ...
};

// Layout: <dir>/manifest.json plus one <file>.f64 (raw little-endian doubles)
// per parameter, with Adam moments in <file>.m.f64 / <file>.v.f64.
// save followed by load round-trips every byte.
void save_checkpoint(const std::string& dir, const ParameterStore& store,
                     const CheckpointMeta& meta);

// Replaces the store's contents with the checkpoint's.
CheckpointMeta load_checkpoint(const std::string& dir, ParameterStore& store);

}  // namespace lgc::ad
