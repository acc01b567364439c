#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sgpo {

// Unit-cost Levenshtein distance (two-row DP).
int levenshtein(std::string_view a, std::string_view b);

enum class EditOp { Substitute, Insert, Delete };

struct EditStep {
  EditOp op;
  char ch = '\0';  // the target character for Substitute/Insert
};

// Optimal edit script src -> dst from the canonical DP traceback: operations
// in left-to-right source order, preferring substitution over insertion over
// deletion on cost ties. Its length equals levenshtein(src, dst).
std::vector<EditStep> edit_script(std::string_view src, std::string_view dst);

// Applies the first `count` operations of the canonical script; count >= the
// script length yields dst exactly, count 0 yields src.
std::string apply_edit_prefix(std::string_view src, std::string_view dst, int count);

}  // namespace sgpo
