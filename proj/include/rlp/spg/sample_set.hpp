#pragma once

#include <string>
#include <vector>

#include "rlp/taskworld/taskworld.hpp"

namespace rlp::spg {

// n responses drawn from one policy for one instruction; duplicates kept.
struct PolicySampleSet {
  world::Instruction x;
  std::vector<world::Response> ys;
  std::string producer = "ppo";
};

}  // namespace rlp::spg
