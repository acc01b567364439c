#include "sgpo/editdist.hpp"

#include <algorithm>

namespace sgpo {

int levenshtein(std::string_view a, std::string_view b) {
  const std::size_t n = b.size();
  std::vector<int> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 0; i < a.size(); ++i) {
    cur[0] = static_cast<int>(i) + 1;
    for (std::size_t j = 0; j < n; ++j) {
      const int sub = prev[j] + (a[i] == b[j] ? 0 : 1);
      cur[j + 1] = std::min({sub, cur[j] + 1, prev[j + 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

namespace {

// distance table over suffixes: dist[i][j] = levenshtein(src[i:], dst[j:])
std::vector<std::vector<int>> suffix_table(std::string_view src, std::string_view dst) {
  const std::size_t m = src.size(), n = dst.size();
  std::vector<std::vector<int>> dist(m + 1, std::vector<int>(n + 1, 0));
  for (std::size_t i = 0; i <= m; ++i) dist[i][n] = static_cast<int>(m - i);
  for (std::size_t j = 0; j <= n; ++j) dist[m][j] = static_cast<int>(n - j);
  for (std::size_t i = m; i-- > 0;) {
    for (std::size_t j = n; j-- > 0;) {
      const int sub = dist[i + 1][j + 1] + (src[i] == dst[j] ? 0 : 1);
      dist[i][j] = std::min({sub, dist[i][j + 1] + 1, dist[i + 1][j] + 1});
    }
  }
  return dist;
}

}  // namespace

std::vector<EditStep> edit_script(std::string_view src, std::string_view dst) {
  const auto dist = suffix_table(src, dst);
  const std::size_t m = src.size(), n = dst.size();
  std::vector<EditStep> script;
  std::size_t i = 0, j = 0;
  while (i < m || j < n) {
    if (i < m && j < n && src[i] == dst[j] && dist[i][j] == dist[i + 1][j + 1]) {
      ++i;
      ++j;
    } else if (i < m && j < n && dist[i][j] == dist[i + 1][j + 1] + 1) {
      script.push_back({EditOp::Substitute, dst[j]});
      ++i;
      ++j;
    } else if (j < n && dist[i][j] == dist[i][j + 1] + 1) {
      script.push_back({EditOp::Insert, dst[j]});
      ++j;
    } else {
      script.push_back({EditOp::Delete, '\0'});
      ++i;
    }
  }
  return script;
}

std::string apply_edit_prefix(std::string_view src, std::string_view dst, int count) {
  const auto dist = suffix_table(src, dst);
  const std::size_t m = src.size(), n = dst.size();
  std::string out;
  out.reserve(std::max(m, n));
  std::size_t i = 0, j = 0;
  int applied = 0;
  while (i < m || j < n) {
    if (i < m && j < n && src[i] == dst[j] && dist[i][j] == dist[i + 1][j + 1]) {
      out.push_back(src[i]);
      ++i;
      ++j;
    } else if (i < m && j < n && dist[i][j] == dist[i + 1][j + 1] + 1) {
      out.push_back(applied < count ? dst[j] : src[i]);
      ++applied;
      ++i;
      ++j;
    } else if (j < n && dist[i][j] == dist[i][j + 1] + 1) {
      if (applied < count) out.push_back(dst[j]);
      ++applied;
      ++j;
    } else {
      if (applied >= count) out.push_back(src[i]);
      ++applied;
      ++i;
    }
  }
  return out;
}

}  // namespace sgpo
