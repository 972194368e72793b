#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rlp/numerics/tensor.hpp"
#include "rlp/seqmodel/policy.hpp"

namespace rlp::seq {

// Binary container: magic, format version, kind ("policy" | "reward"),
// role tag, architecture, then named tensors stored as raw little-endian
// doubles. Round-trips are bit-exact.
struct Checkpoint {
  std::string kind;
  std::string role;
  TransformerConfig arch;
  std::vector<std::pair<std::string, num::Tensor>> sections;

  const num::Tensor& section(const std::string& name) const;
  bool has_section(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  // Throws FormatError on a bad magic, unknown version or truncated file.
  static Checkpoint load(const std::filesystem::path& path);
};

// Copies the network weights in/out of a checkpoint's sections.
void export_weights(const Transformer& net, Checkpoint& ck);
// Throws FormatError on a missing section or shape mismatch.
void import_weights(Transformer& net, const Checkpoint& ck);

void save_policy(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel load_policy(const std::filesystem::path& path);

}  // namespace rlp::seq
