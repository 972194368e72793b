#include "rlp/taskworld/vocab.hpp"

#include "rlp/common/error.hpp"

namespace rlp::world {

namespace {
constexpr std::array<std::string_view, 6> kFamilyNames = {"copy", "reverse", "sort", "repeat", "dedup", "max-token"};
constexpr std::array<std::string_view, 6> kTagNames = {"COPY", "REVERSE", "SORT", "REPEAT", "DEDUP", "MAX"};
}  // namespace

std::string_view family_name(TaskFamily f) { return kFamilyNames[static_cast<std::size_t>(f)]; }

TaskFamily parse_family(std::string_view name) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i)
    if (kFamilyNames[i] == name) return kAllFamilies[i];
  throw FormatError("unknown task family '" + std::string(name) + "'");
}

namespace vocab {

std::string token_name(int token) {
  if (token == kEos) return "</s>";
  if (token == kSep) return "|";
  if (token == kFiller) return "~";
  if (token >= kTagBase && token < kCountBase) return std::string(kTagNames[static_cast<std::size_t>(token - kTagBase)]);
  if (token >= kCountBase && token < kContentBase) return "K" + std::to_string(token - kCountBase + kMinRepeat);
  if (is_content(token)) return std::string(1, static_cast<char>('a' + (token - kContentBase)));
  throw FormatError("token id " + std::to_string(token) + " outside the vocabulary");
}

int parse_token(std::string_view name) {
  for (int t = 0; t < kSize; ++t)
    if (token_name(t) == name) return t;
  throw FormatError("unknown token '" + std::string(name) + "'");
}

std::string format_tokens(std::span<const int> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += token_name(tokens[i]);
  }
  return out;
}

Tokens parse_tokens(std::string_view text) {
  Tokens out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find(' ', pos), text.size());
    if (end > pos) out.push_back(parse_token(text.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

}  // namespace vocab
}  // namespace rlp::world
