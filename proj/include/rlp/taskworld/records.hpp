#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

#include "rlp/taskworld/taskworld.hpp"

// Line-delimited record files. Each file starts with a header line
//   #rlp <kind> v1 split=<tag>
// followed by one record per line: tab-separated key=value fields, token
// sequences written as space-separated token names.
//
//   instructions:  id  family  k  args
//   preferences:   id  family  k  args  chosen  rejected  source
namespace rlp::world {

using Fields = std::map<std::string, std::string, std::less<>>;

Fields parse_fields(std::string_view line);
const std::string& field(const Fields& f, std::string_view key);

std::string format_instruction_fields(const Instruction& x);
Instruction parse_instruction_fields(const Fields& f);

void write_instructions(std::ostream& os, const InstructionSet& set);
InstructionSet read_instructions(std::istream& is);
void write_preferences(std::ostream& os, const PreferenceDataset& data);
PreferenceDataset read_preferences(std::istream& is);

void save_instructions(const std::filesystem::path& path, const InstructionSet& set);
InstructionSet load_instructions(const std::filesystem::path& path);
void save_preferences(const std::filesystem::path& path, const PreferenceDataset& data);
PreferenceDataset load_preferences(const std::filesystem::path& path);

}  // namespace rlp::world
