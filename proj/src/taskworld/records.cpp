#include "rlp/taskworld/records.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "rlp/common/error.hpp"

namespace rlp::world {

Fields parse_fields(std::string_view line) {
  Fields out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    const std::size_t end = std::min(line.find('\t', pos), line.size());
    const std::string_view item = line.substr(pos, end - pos);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) throw FormatError("record field without '=': " + std::string(item));
    out.emplace(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
    pos = end + 1;
  }
  return out;
}

const std::string& field(const Fields& f, std::string_view key) {
  auto it = f.find(key);
  if (it == f.end()) throw FormatError("record is missing field '" + std::string(key) + "'");
  return it->second;
}

std::string format_instruction_fields(const Instruction& x) {
  return "id=" + std::to_string(x.id) + "\tfamily=" + std::string(family_name(x.family)) +
         "\tk=" + std::to_string(x.repeat) + "\targs=" + vocab::format_tokens(x.args);
}

Instruction parse_instruction_fields(const Fields& f) {
  Instruction x;
  try {
    x.id = std::stoull(field(f, "id"));
    x.repeat = std::stoi(field(f, "k"));
  } catch (const std::logic_error&) {
    throw FormatError("record has a non-numeric id or k");
  }
  x.family = parse_family(field(f, "family"));
  x.args = vocab::parse_tokens(field(f, "args"));
  return x;
}

namespace {

void write_header(std::ostream& os, std::string_view kind, std::string_view split) {
  os << "#rlp " << kind << " v1 split=" << split << '\n';
}

std::string read_header(std::istream& is, std::string_view kind) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty record file");
  const std::string prefix = "#rlp " + std::string(kind) + " v1 split=";
  if (line.rfind(prefix, 0) != 0) throw FormatError("bad header for " + std::string(kind) + " file: " + line);
  return line.substr(prefix.size());
}

template <class F>
void for_each_record(std::istream& is, F&& f) {
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    f(parse_fields(line));
  }
}

}  // namespace

void write_instructions(std::ostream& os, const InstructionSet& set) {
  write_header(os, "instructions", set.split);
  for (const auto& x : set.items) os << format_instruction_fields(x) << '\n';
}

InstructionSet read_instructions(std::istream& is) {
  InstructionSet set;
  set.split = read_header(is, "instructions");
  for_each_record(is, [&](const Fields& f) { set.items.push_back(parse_instruction_fields(f)); });
  return set;
}

void write_preferences(std::ostream& os, const PreferenceDataset& data) {
  write_header(os, "preferences", data.split());
  for (const auto& p : data.pairs()) {
    os << format_instruction_fields(p.x) << "\tchosen=" << vocab::format_tokens(p.chosen.tokens)
       << "\trejected=" << vocab::format_tokens(p.rejected.tokens) << "\tsource=" << source_name(p.source) << '\n';
  }
}

PreferenceDataset read_preferences(std::istream& is) {
  PreferenceDataset data(read_header(is, "preferences"));
  for_each_record(is, [&](const Fields& f) {
    PreferencePair p;
    p.x = parse_instruction_fields(f);
    p.chosen.tokens = vocab::parse_tokens(field(f, "chosen"));
    p.rejected.tokens = vocab::parse_tokens(field(f, "rejected"));
    p.source = parse_source(field(f, "source"));
    if (!data.add(std::move(p))) throw FormatError("duplicate preference record");
  });
  return data;
}

namespace {
std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}
std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  return is;
}
}  // namespace

void save_instructions(const std::filesystem::path& path, const InstructionSet& set) {
  auto os = open_out(path);
  write_instructions(os, set);
}
InstructionSet load_instructions(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_instructions(is);
}
void save_preferences(const std::filesystem::path& path, const PreferenceDataset& data) {
  auto os = open_out(path);
  write_preferences(os, data);
}
PreferenceDataset load_preferences(const std::filesystem::path& path) {
  auto is = open_in(path);
  return read_preferences(is);
}

}  // namespace rlp::world
