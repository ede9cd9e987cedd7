#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "memorag/text/tokenizer.hpp"

namespace memorag::evalbench {

/// Harmonic mean of precision and recall; 0 when both are 0.
inline double f_measure(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

/// Multiset token-overlap F1.
inline double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = text::terms(prediction);
  const auto ref = text::terms(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return f_measure(static_cast<double>(overlap) / static_cast<double>(pred.size()),
                   static_cast<double>(overlap) / static_cast<double>(ref.size()));
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// LCS-based F-measure with P and R weighted equally.
inline double rouge_l(std::string_view prediction, std::string_view gold) {
  const auto pred = text::terms(prediction);
  const auto ref = text::terms(gold);
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(pred, ref));
  return f_measure(lcs / static_cast<double>(pred.size()), lcs / static_cast<double>(ref.size()));
}

}  // namespace memorag::evalbench
