#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rlp::world {

using Tokens = std::vector<int>;

enum class TaskFamily { Copy, Reverse, Sort, Repeat, Dedup, MaxToken };

inline constexpr std::array<TaskFamily, 6> kAllFamilies = {
    TaskFamily::Copy, TaskFamily::Reverse, TaskFamily::Sort,
    TaskFamily::Repeat, TaskFamily::Dedup, TaskFamily::MaxToken};

std::string_view family_name(TaskFamily f);
TaskFamily parse_family(std::string_view name);

// Token layout:
//   0 terminator, 1 prompt separator, 2 filler (carries no meaning),
//   3..8 task tags, 9..10 repeat counts (2, 3), 11..31 content symbols a..u.
namespace vocab {
inline constexpr int kSize = 32;
inline constexpr int kEos = 0;
inline constexpr int kSep = 1;
inline constexpr int kFiller = 2;
inline constexpr int kTagBase = 3;
inline constexpr int kCountBase = 9;  // kCountBase + (k - 2)
inline constexpr int kMinRepeat = 2;
inline constexpr int kMaxRepeat = 3;
inline constexpr int kContentBase = 11;
inline constexpr int kContentCount = kSize - kContentBase;

inline int tag(TaskFamily f) { return kTagBase + static_cast<int>(f); }
inline int content(int i) { return kContentBase + i; }
inline bool is_content(int t) { return t >= kContentBase && t < kSize; }

std::string token_name(int token);
int parse_token(std::string_view name);

// Space-separated token names; the inverse of parse_tokens.
std::string format_tokens(std::span<const int> tokens);
Tokens parse_tokens(std::string_view text);
}  // namespace vocab

}  // namespace rlp::world
