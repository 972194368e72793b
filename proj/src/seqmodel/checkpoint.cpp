#include "rlp/seqmodel/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "rlp/common/error.hpp"

namespace rlp::seq {
namespace {

constexpr char kMagic[8] = {'R', 'L', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("checkpoint: truncated file");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw FormatError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw FormatError("checkpoint: truncated file");
  return s;
}

}  // namespace

const num::Tensor& Checkpoint::section(const std::string& name) const {
  for (const auto& [n, t] : sections)
    if (n == name) return t;
  throw FormatError("checkpoint: missing section " + name);
}

bool Checkpoint::has_section(const std::string& name) const {
  for (const auto& s : sections)
    if (s.first == name) return true;
  return false;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string());
  out.write(kMagic, sizeof kMagic);
  put(out, kVersion);
  put_string(out, kind);
  put_string(out, role);
  for (int v : {arch.vocab, arch.context, arch.width, arch.heads, arch.blocks, arch.mlp_hidden})
    put<std::int32_t>(out, v);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, t] : sections) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError("checkpoint: bad magic in " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = get_string(in);
  ck.role = get_string(in);
  ck.arch.vocab = get<std::int32_t>(in);
  ck.arch.context = get<std::int32_t>(in);
  ck.arch.width = get<std::int32_t>(in);
  ck.arch.heads = get<std::int32_t>(in);
  ck.arch.blocks = get<std::int32_t>(in);
  ck.arch.mlp_hidden = get<std::int32_t>(in);
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const auto rank = get<std::uint32_t>(in);
    if (rank > 4) throw FormatError("checkpoint: bad rank in section " + name);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in));
    std::size_t n = num::element_count(shape);
    if (n > (std::size_t{1} << 28)) throw FormatError("checkpoint: implausible section size " + name);
    std::vector<double> values(n);
    if (n && !in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double))))
      throw FormatError("checkpoint: truncated section " + name);
    ck.sections.emplace_back(std::move(name), num::Tensor(std::move(shape), std::move(values)));
  }
  return ck;
}

void export_weights(const Transformer& net, Checkpoint& ck) {
  ck.arch = net.config();
  const auto names = net.parameter_names();
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) ck.sections.emplace_back(names[i], num::Tensor(params[i]->shape(), std::vector<double>(params[i]->values().begin(), params[i]->values().end())));
}

void import_weights(Transformer& net, const Checkpoint& ck) {
  const auto names = net.parameter_names();
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ck.section(names[i]);
    if (!src.same_shape(*params[i]))
      throw FormatError("checkpoint: shape mismatch for " + names[i] + ": " + src.shape_string() + " vs " +
                        params[i]->shape_string());
    std::copy(src.values().begin(), src.values().end(), params[i]->values().begin());
  }
}

void save_policy(const PolicyModel& model, const std::filesystem::path& path) {
  Checkpoint ck;
  ck.kind = "policy";
  ck.role = model.role;
  export_weights(model.net, ck);
  ck.save(path);
}

PolicyModel load_policy(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "policy") throw FormatError("checkpoint: expected a policy, found " + ck.kind);
  ck.arch.validate();
  PolicyModel model(ck.arch, ck.role);
  import_weights(model.net, ck);
  return model;
}

}  // namespace rlp::seq
