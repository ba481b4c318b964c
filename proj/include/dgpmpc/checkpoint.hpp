#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dgpmpc/dgp_model.hpp"

namespace dgpmpc {

// Text container, first line "DGPMPC1". Values are written with 17
// significant digits so a save/load cycle is exact.
inline constexpr const char* kCheckpointMagic = "DGPMPC1";

struct Checkpoint {
  DgpModel model;
  std::vector<PosteriorSample> samples;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dgpmpc
